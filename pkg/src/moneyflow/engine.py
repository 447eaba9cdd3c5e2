"""Asynchronous adjustment dynamics over the flow network.

Each non-exempt agent wakes at its own exponentially distributed event times,
looks at the world through its stale bilateral snapshots, and corrects the
imbalance it sees by moving its own adjustable outgoing rates. Corrections
made on stale information systematically miss, which is what keeps the
adjustment activity reverberating through the network instead of dying out.

The engine is strictly sequential over the event order. Independent runs own
their state exclusively and may execute concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

from . import rng
from .network import Event, NetworkState, accrue, issue
from .scenario import PolicyAction, ShockSpec

_NO_EVENT = float("inf")


class ViewEntry(NamedTuple):
    channel_id: str
    rate: int                 # raw rate as known to the observing agent
    multiplier: Fraction      # multipliers are public policy, always current
    observed_at: float
    adjustable: bool


@dataclass
class BilateralView:
    """What one agent can know: own rates current, partner rates as last settled."""

    agent_id: str
    outgoing: tuple[ViewEntry, ...]
    incoming: tuple[ViewEntry, ...]

    def deficit(self) -> Fraction | int:
        """Observed outflow rate sum minus observed inflow rate sum.

        Exact rational arithmetic in plain integers, returning an int whenever
        the multipliers cancel; this is the innermost loop of the simulation.
        """
        whole = 0
        num = 0
        den = 1
        for e in self.outgoing:
            m = e.multiplier
            if m.denominator == 1:
                whole += e.rate * m.numerator
            else:
                num = num * m.denominator + e.rate * m.numerator * den
                den *= m.denominator
        for e in self.incoming:
            m = e.multiplier
            if m.denominator == 1:
                whole -= e.rate * m.numerator
            else:
                num = num * m.denominator - e.rate * m.numerator * den
                den *= m.denominator
        if num == 0:
            return whole
        if num % den == 0:
            return whole + num // den
        return whole + Fraction(num, den)


@dataclass
class AdjustmentSet:
    """Integer rate deltas for the agent's adjustable outgoing channels.

    Exactness invariant: sum(deltas) + residual == demand, where demand is
    -gain * observed deficit plus any carried-over residual. The residual is
    an exact rational: it absorbs both the sub-unit remainder of the integer
    apportionment and any correction blocked by the rate >= 0 clamp.
    """

    deltas: dict[str, int]
    residual: Fraction
    deficit: Fraction | int
    demand: Fraction


def apportion(total: int, weights: Sequence[Fraction | int]) -> list[int]:
    """Split an integer total proportionally to non-negative weights.

    Largest-remainder rounding, so the parts sum to the total exactly. Ties go
    to the lowest index. A zero weight vector splits equally.
    """
    n = len(weights)
    if n == 0:
        raise ValueError("apportion() needs at least one weight")
    if any(w < 0 for w in weights):
        raise ValueError("apportion() weights must be non-negative")
    wsum = sum(weights)
    if wsum == 0:
        weights = [1] * n
        wsum = n
    sign = 1 if total >= 0 else -1
    magnitude = abs(total)
    shares = [Fraction(magnitude) * w / wsum for w in weights]
    base = [int(s) for s in shares]
    leftover = magnitude - sum(base)
    if leftover:
        by_remainder = sorted(range(n), key=lambda i: (base[i] - shares[i], i))
        for i in by_remainder[:leftover]:
            base[i] += 1
    return [sign * b for b in base]


def observe(state: NetworkState, agent_id: str) -> BilateralView:
    """The agent's bilateral view: own outgoing rates current, inflows stale."""
    if agent_id not in state.agents:
        raise KeyError(f"unknown agent {agent_id!r}")
    channels = state.channels
    now = state.now
    outgoing = []
    for cid in state.outgoing[agent_id]:
        ch = channels[cid]
        outgoing.append(ViewEntry(cid, ch.rate, ch.multiplier, now, ch.adjustable))
    incoming = []
    for cid in state.incoming[agent_id]:
        ch = channels[cid]
        incoming.append(ViewEntry(cid, ch.snap_rate_sink, ch.multiplier, ch.snap_time_sink,
                                  ch.adjustable))
    return BilateralView(agent_id, tuple(outgoing), tuple(incoming))


def _observed_deficit(state: NetworkState, agent_id: str) -> Fraction | int:
    """Allocation-free twin of observe(...).deficit(); must agree with it exactly."""
    channels = state.channels
    whole = 0
    num = 0
    den = 1
    for cid in state.outgoing[agent_id]:
        ch = channels[cid]
        m = ch.multiplier
        if m.denominator == 1:
            whole += ch.rate * m.numerator
        else:
            num = num * m.denominator + ch.rate * m.numerator * den
            den *= m.denominator
    for cid in state.incoming[agent_id]:
        ch = channels[cid]
        m = ch.multiplier
        if m.denominator == 1:
            whole -= ch.snap_rate_sink * m.numerator
        else:
            num = num * m.denominator - ch.snap_rate_sink * m.numerator * den
            den *= m.denominator
    if num == 0:
        return whole
    if num % den == 0:
        return whole + num // den
    return whole + Fraction(num, den)


_ZERO = Fraction(0)


def equilibrate(view: BilateralView, gain: Fraction, carry: Fraction | int = 0) -> AdjustmentSet:
    """Correction an agent would apply given its view and correction gain.

    The correction demand -gain * deficit (plus any carried residual) is
    distributed over the adjustable outgoing channels proportionally to their
    observed effective rates, rounded to whole minor units by largest
    remainder, and clamped so no rate goes below zero. Whatever could not be
    applied is returned as the exact residual.
    """
    if gain < 0:
        raise ValueError("gain must be non-negative")
    d = view.deficit()
    if d == 0 and carry == 0:
        # Balanced in this view: nothing to do. Common case at equilibrium.
        deltas = {e.channel_id: 0 for e in view.outgoing if e.adjustable}
        return AdjustmentSet(deltas=deltas, residual=_ZERO, deficit=d, demand=_ZERO)
    demand = Fraction(-gain * d + carry)
    adjustable = [e for e in view.outgoing if e.adjustable]
    deltas = {e.channel_id: 0 for e in adjustable}
    if adjustable:
        units = int(demand)  # truncate toward zero; the fraction stays in the residual
        if units:
            weights = [e.rate if e.multiplier == 1 else e.rate * e.multiplier for e in adjustable]
            parts = apportion(units, weights)
            for e, part in zip(adjustable, parts):
                if e.rate + part < 0:
                    part = -e.rate
                deltas[e.channel_id] = part
    residual = demand - sum(deltas.values())
    return AdjustmentSet(deltas=deltas, residual=residual, deficit=d, demand=demand)


def settle(state: NetworkState, agent_a: str, agent_b: str, time: float, *, observer: bool = False,
           term: int | None = None) -> NetworkState:
    """Bilateral settlement: flush accrued flow and refresh both snapshots.

    Settles every channel between the two agents. Accrued flow transfers in
    whole minor units, rounded toward zero; the remainder stays in the
    channel's accrual pot so nothing is lost across settlements.
    """
    for aid in (agent_a, agent_b):
        if aid not in state.agents:
            raise KeyError(f"unknown agent {aid!r}")
    key = (agent_a, agent_b) if agent_a < agent_b else (agent_b, agent_a)
    channel_ids = state.pair_channels.get(key)
    if not channel_ids:
        raise ValueError(f"no channel connects {agent_a!r} and {agent_b!r}")
    amounts = _settle_channels(state, channel_ids, time)
    payload = {"a": key[0], "b": key[1], "amounts": amounts, "observer": observer}
    if term is not None:
        payload["term"] = term
    state.append_event(time, "Settlement", payload)
    return state


def _settle_channels(state: NetworkState, channel_ids: Sequence[str], time: float) -> list[tuple[str, int]]:
    amounts = []
    for cid in channel_ids:
        ch = state.channels[cid]
        accrue(ch, time)
        amount = int(ch.accrued)
        if amount:
            state.agents[ch.source].stock -= amount
            state.agents[ch.sink].stock += amount
            ch.accrued -= amount
        ch.snap_rate_source = ch.snap_rate_sink = ch.rate
        ch.snap_time_source = ch.snap_time_sink = time
        amounts.append((cid, amount))
    return amounts


def settle_all(state: NetworkState, time: float, *, observer: bool = True, term: int | None = None) -> NetworkState:
    """Forced settlement of every channel at once: the recorder's global cut."""
    amounts = _settle_channels(state, sorted(state.channels), time)
    payload = {"a": None, "b": None, "amounts": amounts, "observer": observer}
    if term is not None:
        payload["term"] = term
    state.append_event(time, "Settlement", payload)
    return state


def inject_shock(state: NetworkState, agent_id: str, amount: int, time: float,
                 *, channel_id: str | None = None) -> NetworkState:
    """One-off redistribution between an agent and a counterparty on a channel.

    A positive amount credits `agent_id`. Conservation always holds: shocks
    move existing money, they never create it. A zero amount is a pure log
    entry with no side effects. Nonzero shocks refresh the channel's
    settlement snapshots, like any transfer.
    """
    if agent_id not in state.agents:
        raise KeyError(f"unknown agent {agent_id!r}")
    if channel_id is None:
        touching = sorted(
            cid for cid, ch in state.channels.items() if agent_id in (ch.source, ch.sink)
        )
        if not touching:
            raise ValueError(f"agent {agent_id!r} has no channel to carry a shock")
        channel_id = touching[0]
    ch = state.channels.get(channel_id)
    if ch is None:
        raise KeyError(f"unknown channel {channel_id!r}")
    if agent_id not in (ch.source, ch.sink):
        raise ValueError(f"channel {channel_id!r} does not touch agent {agent_id!r}")
    counterparty = ch.sink if agent_id == ch.source else ch.source
    if amount != 0:
        state.agents[agent_id].stock += amount
        state.agents[counterparty].stock -= amount
        ch.snap_rate_source = ch.snap_rate_sink = ch.rate
        ch.snap_time_source = ch.snap_time_sink = time
    gains, loses = (agent_id, counterparty) if amount >= 0 else (counterparty, agent_id)
    state.append_event(time, "Shock", {
        "channel": channel_id, "agent": agent_id, "counterparty": counterparty,
        "amount": abs(amount), "sink": gains, "source": loses,
    })
    return state


def next_event(state: NetworkState) -> tuple[str, float]:
    """Agent with the earliest pending event time; ties go to the lower id."""
    best_id = None
    best_t = _NO_EVENT
    for aid in state.agent_order:
        t = state.agents[aid].next_time
        if t < best_t:
            best_id, best_t = aid, t
    if best_id is None:
        raise ValueError("network has no agents")
    return best_id, best_t


def _apply_rate_delta(state: NetworkState, channel_id: str, delta: int, now: float) -> None:
    ch = state.channels[channel_id]
    accrue(ch, now)
    ch.rate += delta


def update_agent(state: NetworkState, agent_id: str, now: float) -> Event:
    """Process one event for an agent: adjust and settle, or run issuance.

    Non-exempt agents observe, equilibrate, apply their deltas to true rates,
    and settle with every partner they adjusted against. The central bank
    executes its due issuance schedule entries instead.
    """
    agent = state.agents[agent_id]
    state.now = now
    if agent.continuity_exempt:
        issued = _run_issuance(state, now)
        event = state.append_event(now, "AgentUpdate", {"agent": agent_id, "exempt": True, "issued": issued})
    elif agent.pending_correction == 0 and _observed_deficit(state, agent_id) == 0:
        # Balanced in its own view: no correction, no settlements.
        event = state.append_event(now, "AgentUpdate", {
            "agent": agent_id, "deficit": 0, "deltas": {}, "residual": _ZERO,
        })
    else:
        view = observe(state, agent_id)
        adjustment = equilibrate(view, agent.gain, agent.pending_correction)
        agent.pending_correction = adjustment.residual
        partners = set()
        for cid, delta in adjustment.deltas.items():
            if delta:
                _apply_rate_delta(state, cid, delta, now)
                ch = state.channels[cid]
                partners.add(ch.sink if ch.source == agent_id else ch.source)
        event = state.append_event(now, "AgentUpdate", {
            "agent": agent_id,
            "deficit": adjustment.deficit,
            "deltas": adjustment.deltas,
            "residual": adjustment.residual,
        })
        for partner in sorted(partners):
            settle(state, agent_id, partner, now)
    agent.local_time = now
    agent.event_count += 1
    agent.next_time = now + rng.exponential(agent.mean_wait, agent.event_key, agent.event_count)
    return event


def _run_issuance(state: NetworkState, now: float) -> list[int]:
    issued = []
    schedule = state.spec.issuance
    cursor = state.cursors["issuance"]
    while cursor < len(schedule) and schedule[cursor].time <= now:
        issue(state, schedule[cursor].amount, now)
        issued.append(schedule[cursor].amount)
        cursor += 1
    state.cursors["issuance"] = cursor
    return issued


def _peek_scheduled(state: NetworkState) -> tuple[float, str]:
    """Earliest pending exact-time item: policy change, securities entry, shock."""
    best_t, best_kind = _NO_EVENT, ""
    policy = state.spec.policy
    if state.cursors["policy"] < len(policy):
        t = policy[state.cursors["policy"]].time
        if t < best_t:
            best_t, best_kind = t, "policy"
    securities = state.spec.securities
    if state.cursors["securities"] < len(securities):
        t = securities[state.cursors["securities"]].time
        if t < best_t:
            best_t, best_kind = t, "securities"
    shocks = state.spec.shocks
    if state.cursors["shock"] < len(shocks):
        t = shocks[state.cursors["shock"]].time
        if t < best_t:
            best_t, best_kind = t, "shock"
    return best_t, best_kind


def _run_scheduled(state: NetworkState, kind: str, now: float) -> None:
    state.now = now
    if kind == "policy":
        action: PolicyAction = state.spec.policy[state.cursors["policy"]]
        state.cursors["policy"] += 1
        if action.kind == "set_multiplier":
            ch = state.channels[action.target]
            accrue(ch, now)
            ch.multiplier = action.value
        else:
            state.rates[action.target] = action.value
        state.append_event(now, "Policy", {"action": action.kind, "target": action.target,
                                           "value": action.value})
    elif kind == "securities":
        entry = state.spec.securities[state.cursors["securities"]]
        state.cursors["securities"] += 1
        state.securities_outstanding += entry.amount
        state.append_event(now, "Issue", {"agent": None, "amount": entry.amount,
                                          "instrument": "securities",
                                          "outstanding": state.securities_outstanding})
    elif kind == "shock":
        spec: ShockSpec = state.spec.shocks[state.cursors["shock"]]
        state.cursors["shock"] += 1
        ch = state.channels[spec.channel]
        inject_shock(state, ch.sink, spec.amount, now, channel_id=spec.channel)
    else:  # pragma: no cover - internal misuse
        raise ValueError(f"unknown scheduled kind {kind!r}")


def step(state: NetworkState) -> tuple[NetworkState, Event]:
    """Advance to the next event (agent wake-up or scheduled action)."""
    start = len(state.log)
    agent_id, agent_t = next_event(state)
    sched_t, sched_kind = _peek_scheduled(state)
    if sched_t <= agent_t:
        _run_scheduled(state, sched_kind, sched_t)
    else:
        update_agent(state, agent_id, agent_t)
    return state, state.log[start]


def run(state: NetworkState, horizon: float) -> tuple[NetworkState, list[Event]]:
    """Advance simulated time by `horizon`, processing events in [now, now+horizon).

    Deterministic for a fixed seed; running h1 then h2 is identical to running
    h1 + h2 in one call, with the logs concatenating.
    """
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    end = state.now + horizon
    start = len(state.log)
    while True:
        agent_id, agent_t = next_event(state)
        sched_t, sched_kind = _peek_scheduled(state)
        t = min(agent_t, sched_t)
        if t >= end:
            break
        if sched_t <= agent_t:
            _run_scheduled(state, sched_kind, sched_t)
        else:
            update_agent(state, agent_id, agent_t)
    state.now = end
    return state, state.log[start:]


def _json_safe(value):
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def event_to_dict(event: Event) -> dict:
    return {"t": event.time, "seq": event.seq, "kind": event.kind,
            **{k: _json_safe(v) for k, v in event.payload.items()}}


def event_trace(log: Sequence[Event]) -> str:
    """Line-delimited JSON rendering of an event log; byte-stable per seed."""
    return "".join(json.dumps(event_to_dict(ev), sort_keys=True) + "\n" for ev in log)
