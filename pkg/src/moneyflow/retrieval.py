"""Retracing recorded balance sheets from hidden initial rate offsets.

A record only shows the settled, identity-satisfying totals; the event-level
adjustment activity that produced it is hidden. This module searches for a
set of initial per-agent rate offsets (deviations of true channel rates from
the scenario, invisible to partners until they settle) whose replay
reproduces a target record.

Success means reproduction, not parameter recovery: the inverse problem may
be non-unique, so fits are judged only by the normalized RMS error against
the target.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations, product
from math import sqrt
from typing import Mapping, Sequence

from . import rng
from .engine import apportion
from .network import NetworkState, build_network
from .recorder import Record, run_record
from .scenario import ScenarioError, ScenarioSpec


@dataclass(frozen=True)
class Assignment:
    """Hidden initial offsets: per-agent rate deviations and optional gain overrides.

    An agent's offset is spread over its adjustable outgoing channels by
    largest remainder, changing the true initial rates while every settlement
    snapshot stays at the scenario values. Offsets must leave all rates
    non-negative.
    """

    offsets: Mapping[str, int] = field(default_factory=dict)
    gain_overrides: Mapping[str, Fraction] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "offsets": dict(self.offsets),
            "gain_overrides": {k: str(v) for k, v in self.gain_overrides.items()},
        }


def apply_assignment(state: NetworkState, assignment: Assignment) -> NetworkState:
    """Perturb a freshly built state: true rates move, snapshots do not.

    Validates the whole assignment before touching the state, so a rejected
    assignment leaves it intact.
    """
    planned: list[tuple[str, int]] = []
    for agent_id in sorted(assignment.offsets):
        offset = assignment.offsets[agent_id]
        if agent_id not in state.agents:
            raise ScenarioError(f"assignment names unknown agent {agent_id!r}")
        if state.agents[agent_id].continuity_exempt:
            raise ScenarioError(f"assignment targets exempt agent {agent_id!r}")
        if offset == 0:
            continue
        channel_ids = state.adjustable_outgoing[agent_id]
        if not channel_ids:
            raise ScenarioError(f"agent {agent_id!r} has no adjustable outgoing channel for its offset")
        weights = [state.channels[cid].rate for cid in channel_ids]
        parts = apportion(offset, weights)
        for cid, part in zip(channel_ids, parts):
            if state.channels[cid].rate + part < 0:
                raise ScenarioError(
                    f"offset {offset} for agent {agent_id!r} drives channel {cid!r} below zero"
                )
            planned.append((cid, part))
    for agent_id, gain in assignment.gain_overrides.items():
        if agent_id not in state.agents:
            raise ScenarioError(f"gain override names unknown agent {agent_id!r}")
        if gain < 0:
            raise ScenarioError(f"gain override for {agent_id!r} must be non-negative")
    for cid, part in planned:
        state.channels[cid].rate += part
    for agent_id, gain in assignment.gain_overrides.items():
        state.agents[agent_id].gain = gain
    return state


def retrace(assignment: Assignment, spec: ScenarioSpec, n_terms: int,
            *, base_state: NetworkState | None = None) -> Record:
    """Replay the scenario from a perturbed start and compile its record."""
    state = base_state.clone() if base_state is not None else build_network(spec)
    apply_assignment(state, assignment)
    return run_record(state, n_terms)


def _figure_values(record: Record) -> dict[str, list[int | Fraction]]:
    """Time series per figure key: agent stock/flow totals plus all aggregates."""
    series: dict[str, list[int | Fraction]] = {}
    for sheet in record.sheets:
        for aid, line in sheet.agents.items():
            series.setdefault(f"closing:{aid}", []).append(line.closing)
            series.setdefault(f"inflow:{aid}", []).append(line.inflow)
            series.setdefault(f"outflow:{aid}", []).append(line.outflow)
        for name, value in sheet.aggregates().items():
            series.setdefault(name, []).append(value)
    return series


def reproduction_error(simulated: Record, target: Record,
                       weights: Mapping[str, float] | None = None) -> float:
    """Normalized RMS distance between two records over matching figures.

    Each figure is scaled by max(1, max |target value|) so heterogeneous
    magnitudes compare fairly; the error is the root mean square of the
    weighted scaled differences over all (term, figure) pairs. When `weights`
    is given it both selects the figures compared and weights them; by
    default every figure participates with weight 1. Figure keys are the
    aggregate names plus per-agent series named "closing:ID", "inflow:ID",
    and "outflow:ID".
    """
    if len(simulated.sheets) != len(target.sheets):
        raise ValueError(
            f"term count mismatch: simulated has {len(simulated.sheets)}, target has {len(target.sheets)}"
        )
    sim_series = _figure_values(simulated)
    tgt_series = _figure_values(target)
    if weights is None:
        if set(sim_series) != set(tgt_series):
            missing = set(tgt_series) ^ set(sim_series)
            raise ValueError(f"figure sets differ: {sorted(missing)}")
        selected = {name: 1.0 for name in tgt_series}
    else:
        selected = dict(weights)
        for name in selected:
            if name not in tgt_series or name not in sim_series:
                raise ValueError(f"weighted figure {name!r} not present in both records")
    if not selected or not target.sheets:
        return 0.0
    total = 0.0
    count = 0
    for name, weight in selected.items():
        tgt = tgt_series[name]
        sim = sim_series[name]
        scale = max(1.0, max(abs(float(v)) for v in tgt))
        for s, t in zip(sim, tgt):
            diff = (float(s) - float(t)) / scale
            total += (weight * diff) ** 2
            count += 1
    return sqrt(total / count)


@dataclass(frozen=True)
class FitConfig:
    budget: int = 10_000
    tolerance: float = 1e-3
    seed: int = 0
    starts: int = 4
    start_range: int = 16
    initial_step: int = 8
    prefix_terms: int | None = None
    weights: Mapping[str, float] | None = None


@dataclass(frozen=True)
class FitResult:
    best: Assignment
    error: float
    evaluations: int
    converged: bool
    trace: tuple[tuple[int, float], ...]

    def to_dict(self) -> dict:
        return {
            "best": self.best.to_dict(),
            "error": self.error,
            "evaluations": self.evaluations,
            "converged": self.converged,
            "trace": [[i, e] for i, e in self.trace],
        }


class _Objective:
    """Cached, budget-counting evaluation of one offset vector."""

    def __init__(self, target: Record, spec: ScenarioSpec, config: FitConfig,
                 agent_ids: Sequence[str], n_terms: int, base_state: NetworkState):
        self.target = target
        self.spec = spec
        self.config = config
        self.agent_ids = agent_ids
        self.n_terms = n_terms
        self.base_state = base_state
        self.cache: dict[tuple[int, ...], float] = {}
        self.evaluations = 0

    def valid(self, vector: tuple[int, ...]) -> bool:
        for aid, offset in zip(self.agent_ids, vector):
            if offset >= 0:
                continue
            capacity = sum(self.base_state.channels[cid].rate
                           for cid in self.base_state.adjustable_outgoing[aid])
            if offset < -capacity:
                return False
        return True

    def __call__(self, vector: tuple[int, ...]) -> float:
        hit = self.cache.get(vector)
        if hit is not None:
            return hit
        assignment = Assignment(offsets=dict(zip(self.agent_ids, vector)))
        simulated = retrace(assignment, self.spec, self.n_terms, base_state=self.base_state)
        error = reproduction_error(simulated, self.target, self.config.weights)
        self.evaluations += 1
        self.cache[vector] = error
        return error


def _search_directions(dims: int) -> list[tuple[int, ...]]:
    """Coordinate axes plus low-order diagonals.

    The record objective is a staircase with long diagonal valleys (shifting
    several offsets together often trades off against shifting one), so pure
    coordinate moves stall; the composite directions bridge those valleys.
    """
    directions = [tuple(1 if j == d else 0 for j in range(dims)) for d in range(dims)]
    if dims > 1:
        directions.append((1,) * dims)
        for a, b in combinations(range(dims), 2):
            directions.append(tuple(1 if j in (a, b) else 0 for j in range(dims)))
            directions.append(tuple(1 if j == a else (-1 if j == b else 0) for j in range(dims)))
    return directions


def _informed_start(target: Record, spec: ScenarioSpec, agent_ids: Sequence[str]) -> tuple[int, ...]:
    """Crude inverse read: term-0 outflow excess over the scenario's flow rates.

    Before corrections bite, an agent's first-term outflow total is roughly its
    perturbed rates integrated over one term, so the excess estimates its offset.
    """
    sheet = target.sheets[0]
    length = Fraction(repr(spec.term_length))
    estimate = []
    for aid in agent_ids:
        spec_out = sum(
            int(c.rate * c.multiplier * length) for c in spec.channels if c.source == aid
        )
        line = sheet.agents.get(aid)
        estimate.append((line.outflow - spec_out) if line is not None else 0)
    return tuple(estimate)


def fit(target: Record, spec: ScenarioSpec, config: FitConfig = FitConfig()) -> FitResult:
    """Multi-start direct search over integer offset vectors.

    Starts are: the zero assignment, a crude inverse read of the target's
    first term, then seeded uniform draws in [-start_range, start_range].
    Each start runs a pattern search over coordinate and diagonal directions
    (step doubles on improvement, halves on failure, a start ends once every
    step is below one minor unit), finished by a small exhaustive box polish
    around the stall point. The best point over all starts wins; the search
    stops as soon as the tolerance is met. Budget exhaustion is not an error,
    it simply returns converged=False.
    """
    if config.budget <= 0:
        raise ValueError("fit budget must be positive")
    agent_ids = tuple(sorted(a.id for a in spec.agents if not a.continuity_exempt))
    if not agent_ids:
        raise ScenarioError("scenario has no non-exempt agents to fit")
    prefix = config.prefix_terms
    if prefix is not None and not 0 < prefix <= len(target.sheets):
        raise ValueError(f"prefix_terms must be in 1..{len(target.sheets)}")
    n_terms = prefix if prefix is not None else len(target.sheets)
    if n_terms == 0:
        raise ValueError("target record has no terms")
    trimmed = Record(target.sheets[:n_terms], target.fingerprint,
                     target.term_length, target.initial_total_stock)

    objective = _Objective(trimmed, spec, config, agent_ids, n_terms, build_network(spec))
    dims = len(agent_ids)
    directions = _search_directions(dims)
    start_key = rng.stream_key(config.seed, rng.string_key("fit-starts"))

    def clamp_valid(vec: tuple[int, ...]) -> tuple[int, ...]:
        return vec if objective.valid(vec) else tuple(max(v, 0) for v in vec)

    def start_point(index: int) -> tuple[int, ...]:
        if index == 0:
            return (0,) * dims
        if index == 1:
            return clamp_valid(_informed_start(trimmed, spec, agent_ids))
        span = 2 * config.start_range + 1
        vec = tuple(
            rng.below(span, start_key, index * dims + d) - config.start_range
            for d in range(dims)
        )
        return clamp_valid(vec)

    best_error = float("inf")
    best_vector: tuple[int, ...] | None = None
    trace: list[tuple[int, float]] = []

    def consider(vector: tuple[int, ...], error: float) -> None:
        nonlocal best_error, best_vector
        if error < best_error:
            best_error = error
            best_vector = vector
            trace.append((objective.evaluations, error))

    done = False
    for start_index in range(max(2, config.starts)):
        if done:
            break
        x = start_point(start_index)
        if not objective.valid(x) or objective.evaluations >= config.budget:
            continue
        fx = objective(x)
        consider(x, fx)
        if best_error <= config.tolerance:
            break
        polish_radius = 2
        while not done:
            # Pattern phase: doubled/halved steps per direction until all collapse.
            steps = [config.initial_step] * len(directions)
            while any(s >= 1 for s in steps) and not done:
                for d, direction in enumerate(directions):
                    if steps[d] < 1:
                        continue
                    moved = False
                    for sign in (1, -1):
                        if objective.evaluations >= config.budget:
                            done = True
                            break
                        candidate = tuple(
                            xi + sign * steps[d] * vi for xi, vi in zip(x, direction)
                        )
                        if not objective.valid(candidate):
                            continue
                        fc = objective(candidate)
                        consider(candidate, fc)
                        if fc < fx:
                            x, fx = candidate, fc
                            steps[d] *= 2
                            moved = True
                            break
                    if done:
                        break
                    if not moved:
                        steps[d] //= 2
                    if best_error <= config.tolerance:
                        done = True
                        break
            if done:
                break
            # Polish phase: exhaustive small box around the stall point.
            improved = False
            for offsets in product(range(-polish_radius, polish_radius + 1), repeat=dims):
                if all(o == 0 for o in offsets):
                    continue
                if objective.evaluations >= config.budget:
                    done = True
                    break
                candidate = tuple(xi + o for xi, o in zip(x, offsets))
                if not objective.valid(candidate):
                    continue
                fc = objective(candidate)
                consider(candidate, fc)
                if fc < fx:
                    x, fx = candidate, fc
                    improved = True
                if best_error <= config.tolerance:
                    done = True
                    break
            if done:
                break
            if improved:
                continue  # polish found a way out; rerun the pattern phase
            if polish_radius == 2:
                polish_radius = 3
                continue
            break
        if best_error <= config.tolerance:
            done = True

    assert best_vector is not None
    return FitResult(
        best=Assignment(offsets=dict(zip(agent_ids, best_vector))),
        error=best_error,
        evaluations=objective.evaluations,
        converged=best_error <= config.tolerance,
        trace=tuple(trace),
    )
