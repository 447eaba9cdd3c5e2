"""Monetary flow network: agents, bilateral channels, stocks, issuance.

Money is an exact signed integer count of minor currency units throughout, so
every conservation check is plain integer equality. Stocks may go negative (a
net debt position); continuity is a property of flows, not of stock signs.

Operations mutate the passed state in place and return it; use
``NetworkState.clone()`` when a branch point is needed. All operations are
deterministic functions of their inputs.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from . import rng
from .scenario import CENTRAL_BANK, ScenarioError, ScenarioSpec


@dataclass(slots=True)
class Agent:
    id: str
    role: str
    stock: int
    gain: Fraction
    continuity_exempt: bool
    mean_wait: float
    local_time: float = 0.0
    pending_correction: Fraction = Fraction(0)
    event_count: int = 0
    next_time: float = 0.0
    event_key: int = 0  # pre-mixed rng stream key


@dataclass(slots=True)
class Channel:
    """Directed flow with per-endpoint stale snapshots of its true rate.

    ``rate`` is the current true flow intention in minor units per term; the
    effective flow is rate * multiplier. ``snap_rate_source/sink`` hold the
    rate as of each endpoint's last settlement on this channel: between
    settlements the sink's knowledge is deliberately stale. ``accrued`` is the
    exact rational amount of flow earned but not yet settled.
    """

    id: str
    source: str
    sink: str
    rate: int
    multiplier: Fraction
    adjustable: bool
    snap_rate_source: int = 0
    snap_rate_sink: int = 0
    snap_time_source: float = 0.0
    snap_time_sink: float = 0.0
    accrued: Fraction = Fraction(0)
    accrued_until: float = 0.0

    def effective_rate(self) -> Fraction | int:
        return self.rate if self.multiplier == 1 else self.rate * self.multiplier


@dataclass
class Event:
    time: float
    seq: int
    kind: str  # AgentUpdate | Transfer | Settlement | Shock | Issue | Policy
    payload: dict


@dataclass
class NetworkState:
    spec: ScenarioSpec
    agents: dict[str, Agent]
    channels: dict[str, Channel]
    cumulative_issuance: int = 0
    securities_outstanding: int = 0
    rates: dict[str, Fraction] = field(default_factory=dict)
    now: float = 0.0
    log: list[Event] = field(default_factory=list)
    seq: int = 0
    cursors: dict[str, int] = field(default_factory=lambda: {"issuance": 0, "securities": 0, "policy": 0, "shock": 0})
    # Immutable after build; shared across clones.
    initial_stocks: Mapping[str, int] = field(default_factory=dict)
    initial_rates: Mapping[str, Fraction] = field(default_factory=dict)
    agent_order: tuple[str, ...] = ()
    outgoing: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    incoming: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    adjustable_outgoing: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    pair_channels: Mapping[tuple[str, str], tuple[str, ...]] = field(default_factory=dict)
    central_bank: str = ""

    def clone(self) -> "NetworkState":
        """Independent copy sharing only the immutable index structures."""
        dup = copy.copy(self)
        dup.agents = {k: copy.copy(a) for k, a in self.agents.items()}
        dup.channels = {k: copy.copy(c) for k, c in self.channels.items()}
        dup.rates = dict(self.rates)
        dup.log = list(self.log)
        dup.cursors = dict(self.cursors)
        return dup

    def total_stock(self) -> int:
        return sum(a.stock for a in self.agents.values())

    def append_event(self, time: float, kind: str, payload: dict) -> Event:
        ev = Event(time, self.seq, kind, payload)
        self.seq += 1
        self.log.append(ev)
        return ev


def build_network(spec: ScenarioSpec) -> NetworkState:
    """Validate a scenario and construct its initial state at time 0.

    All settlement snapshots start equal to the true rates, accruals start
    empty, and cumulative issuance starts at zero.
    """
    agents: dict[str, Agent] = {}
    for a in spec.agents:
        if a.id in agents:
            raise ScenarioError(f"duplicate agent id {a.id!r}")
        agents[a.id] = Agent(
            id=a.id,
            role=a.role,
            stock=a.stock,
            gain=a.gain,
            continuity_exempt=a.continuity_exempt,
            mean_wait=a.mean_wait,
            event_key=rng.stream_key(spec.seed, rng.string_key("agent-events"), rng.string_key(a.id)),
        )

    cbs = [a.id for a in spec.agents if a.continuity_exempt]
    if len(cbs) != 1:
        raise ScenarioError(
            f"network must contain exactly one {CENTRAL_BANK} agent, found {len(cbs)}: {cbs!r}"
        )

    channels: dict[str, Channel] = {}
    for c in spec.channels:
        if c.id in channels:
            raise ScenarioError(f"duplicate channel id {c.id!r}")
        if c.source == c.sink:
            raise ScenarioError(f"channel {c.id!r}: self-loop on agent {c.source!r}")
        for endpoint in (c.source, c.sink):
            if endpoint not in agents:
                raise ScenarioError(f"channel {c.id!r}: unknown agent {endpoint!r}")
        if c.rate < 0:
            raise ScenarioError(f"channel {c.id!r}: negative rate {c.rate}")
        channels[c.id] = Channel(
            id=c.id,
            source=c.source,
            sink=c.sink,
            rate=c.rate,
            multiplier=c.multiplier,
            adjustable=c.adjustable,
            snap_rate_source=c.rate,
            snap_rate_sink=c.rate,
        )

    for sched_name, sched in (("issuance", spec.issuance), ("securities", spec.securities)):
        for entry in sched:
            if entry.time < 0:
                raise ScenarioError(f"{sched_name} schedule: negative time {entry.time}")
    for action in spec.policy:
        if action.kind == "set_multiplier" and action.target not in channels:
            raise ScenarioError(f"policy entry: unknown channel {action.target!r}")
        if action.value < 0:
            raise ScenarioError(f"policy entry for {action.target!r}: negative value")
    for shock in spec.shocks:
        if shock.channel not in channels:
            raise ScenarioError(f"shock entry: unknown channel {shock.channel!r}")
    for fig in spec.figures:
        if fig.channel is not None and fig.channel not in channels:
            raise ScenarioError(f"figure {fig.name!r}: unknown channel {fig.channel!r}")
        if fig.stock is not None and fig.stock not in agents:
            raise ScenarioError(f"figure {fig.name!r}: unknown agent {fig.stock!r}")

    order = tuple(sorted(agents))
    outgoing = {aid: tuple(c.id for c in spec.channels if c.source == aid) for aid in order}
    incoming = {aid: tuple(c.id for c in spec.channels if c.sink == aid) for aid in order}
    adjustable_outgoing = {
        aid: tuple(cid for cid in outgoing[aid] if channels[cid].adjustable) for aid in order
    }
    pairs: dict[tuple[str, str], list[str]] = {}
    for c in spec.channels:
        key = (c.source, c.sink) if c.source < c.sink else (c.sink, c.source)
        pairs.setdefault(key, []).append(c.id)
    pair_channels = {k: tuple(sorted(v)) for k, v in pairs.items()}

    state = NetworkState(
        spec=spec,
        agents=agents,
        channels=channels,
        rates=dict(spec.rates),
        initial_stocks={aid: agents[aid].stock for aid in order},
        initial_rates=dict(spec.rates),
        agent_order=order,
        outgoing=outgoing,
        incoming=incoming,
        adjustable_outgoing=adjustable_outgoing,
        pair_channels=pair_channels,
        central_bank=cbs[0],
    )
    for agent in agents.values():
        agent.next_time = rng.exponential(agent.mean_wait, agent.event_key, 0)
    return state


def accrue(channel: Channel, now: float) -> None:
    """Bring a channel's unsettled accrual up to `now` at the prevailing rate.

    Must be called before any rate or multiplier change so that past flow is
    integrated piecewise at the rates that were actually in force.
    """
    if now > channel.accrued_until:
        if channel.rate:
            elapsed = Fraction(now) - Fraction(channel.accrued_until)
            if channel.multiplier == 1:
                channel.accrued += channel.rate * elapsed
            else:
                channel.accrued += channel.rate * channel.multiplier * elapsed
        channel.accrued_until = now


def transfer(state: NetworkState, channel_id: str, amount: int, time: float) -> NetworkState:
    """Move `amount` from the channel's source to its sink as a settlement event.

    Both endpoints' snapshots for this channel refresh to the current true
    rate. The unsettled accrual pot is not touched (a zero-amount transfer
    must leave stocks unchanged).
    """
    if channel_id not in state.channels:
        raise KeyError(f"unknown channel {channel_id!r}")
    if amount < 0:
        raise ValueError(f"transfer amount must be non-negative, got {amount}")
    ch = state.channels[channel_id]
    state.agents[ch.source].stock -= amount
    state.agents[ch.sink].stock += amount
    ch.snap_rate_source = ch.snap_rate_sink = ch.rate
    ch.snap_time_source = ch.snap_time_sink = time
    state.append_event(
        time, "Transfer", {"channel": channel_id, "source": ch.source, "sink": ch.sink, "amount": amount}
    )
    return state


def issue(state: NetworkState, amount: int, time: float | None = None, *, agent_id: str | None = None) -> NetworkState:
    """Create (or retire, for negative amounts) central bank notes."""
    target = agent_id if agent_id is not None else state.central_bank
    if target not in state.agents:
        raise KeyError(f"unknown agent {target!r}")
    agent = state.agents[target]
    if not agent.continuity_exempt:
        raise ValueError(f"issuance invoked on non-exempt agent {target!r}")
    if state.cumulative_issuance + amount < 0:
        raise ValueError(
            f"retirement of {-amount} would drive notes outstanding below zero "
            f"(currently {state.cumulative_issuance})"
        )
    agent.stock += amount
    state.cumulative_issuance += amount
    t = state.now if time is None else time
    state.append_event(t, "Issue", {"agent": target, "amount": amount, "instrument": "notes",
                                    "outstanding": state.cumulative_issuance})
    return state


def notes_outstanding(state: NetworkState) -> int:
    return state.cumulative_issuance


def local_imbalance(state: NetworkState, agent_id: str, window: tuple[float, float]) -> int:
    """Settled inflow minus settled outflow for an agent over [start, end).

    Sums the transfer-like events in the log (transfers, settlements, shocks);
    issuance is money creation, not a transfer, and is excluded.
    """
    if agent_id not in state.agents:
        raise KeyError(f"unknown agent {agent_id!r}")
    start, end = window
    total = 0
    for ev in state.log:
        if not start <= ev.time < end:
            continue
        if ev.kind == "Transfer":
            amount = ev.payload["amount"]
            if ev.payload["sink"] == agent_id:
                total += amount
            if ev.payload["source"] == agent_id:
                total -= amount
        elif ev.kind == "Settlement":
            for cid, amount in ev.payload["amounts"]:
                ch = state.channels[cid]
                if ch.sink == agent_id:
                    total += amount
                if ch.source == agent_id:
                    total -= amount
        elif ev.kind == "Shock":
            amount = ev.payload["amount"]
            if ev.payload["sink"] == agent_id:
                total += amount
            if ev.payload["source"] == agent_id:
                total -= amount
    return total


def true_imbalance(state: NetworkState, agent_id: str) -> Fraction | int:
    """Current-truth effective inflow minus outflow rate for an agent."""
    if agent_id not in state.agents:
        raise KeyError(f"unknown agent {agent_id!r}")
    total: Fraction | int = 0
    for cid in state.incoming[agent_id]:
        total += state.channels[cid].effective_rate()
    for cid in state.outgoing[agent_id]:
        total -= state.channels[cid].effective_rate()
    return total


def conservation_holds(state: NetworkState) -> bool:
    initial = sum(state.initial_stocks.values())
    return state.total_stock() - state.cumulative_issuance == initial
