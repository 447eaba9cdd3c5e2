"""Scenario definitions: agents, channels, schedules, and named figures.

A scenario is the full, serializable description of a monetary network plus
the timed policy inputs (multiplier changes, rate settings, issuance and
shock schedules). Scenarios load from JSON; see docs/scenario-schema.md for
the wire format. Exact quantities are integers (minor currency units) and
exact rationals; floats are accepted in JSON but converted through their
decimal literal so "0.2" means exactly 1/5.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping

CENTRAL_BANK = "CentralBank"
KNOWN_ROLES = (
    CENTRAL_BANK,
    "Government",
    "HouseholdSector",
    "CorporateSector",
    "BankSector",
)

DEFAULT_RATE_NAMES = ("discount_rate", "securities_interest_rate")


class ScenarioError(ValueError):
    """Raised for malformed or inconsistent scenario input."""


def as_fraction(value: Any, what: str = "value") -> Fraction:
    """Exact rational from an int, Fraction, or string like '1/2' or '0.25'.

    Floats are converted via their shortest decimal repr, so a JSON 0.2
    becomes exactly 1/5 rather than the binary float it parsed to.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ScenarioError(f"{what}: expected a rational, got a boolean")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ScenarioError(f"{what}: cannot parse rational {value!r}") from exc
    raise ScenarioError(f"{what}: cannot parse rational from {type(value).__name__}")


def as_money(value: Any, what: str = "amount") -> int:
    """Exact integer minor-unit amount; rejects anything fractional."""
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"{what}: money must be an integer count of minor units, got {value!r}")
    return value


def rational_str(value: Fraction) -> str:
    """Exact string form: decimal when the denominator is 2^a*5^b, else 'n/d'."""
    den = value.denominator
    d = den
    for p in (2, 5):
        while d % p == 0:
            d //= p
    if d != 1:
        return f"{value.numerator}/{den}"
    # Scale to a power of ten for an exact decimal rendering.
    digits = 0
    scaled = value
    while scaled.denominator != 1:
        scaled *= 10
        digits += 1
    units = scaled.numerator
    if digits == 0:
        return str(units)
    sign = "-" if units < 0 else ""
    text = str(abs(units)).rjust(digits + 1, "0")
    return f"{sign}{text[:-digits]}.{text[-digits:]}"


@dataclass(frozen=True)
class AgentSpec:
    id: str
    role: str
    stock: int = 0
    gain: Fraction = Fraction(0)
    mean_wait: float = 0.25

    @property
    def continuity_exempt(self) -> bool:
        return self.role == CENTRAL_BANK


@dataclass(frozen=True)
class ChannelSpec:
    id: str
    source: str
    sink: str
    rate: int
    multiplier: Fraction = Fraction(1)
    adjustable: bool = False


@dataclass(frozen=True)
class FigureSpec:
    """A named per-term aggregate: settled flow on a channel, or an agent's stock."""

    name: str
    channel: str | None = None
    stock: str | None = None


@dataclass(frozen=True)
class ScheduledAmount:
    time: float
    amount: int


@dataclass(frozen=True)
class PolicyAction:
    """Timed instrument setting: a channel multiplier or a named policy rate."""

    time: float
    kind: str  # "set_multiplier" | "set_rate"
    target: str
    value: Fraction


@dataclass(frozen=True)
class ShockSpec:
    """One-off redistribution riding a channel; positive amounts flow source->sink."""

    time: float
    channel: str
    amount: int


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    agents: tuple[AgentSpec, ...]
    channels: tuple[ChannelSpec, ...]
    seed: int = 0
    term_length: float = 1.0
    issuance: tuple[ScheduledAmount, ...] = ()
    securities: tuple[ScheduledAmount, ...] = ()
    policy: tuple[PolicyAction, ...] = ()
    shocks: tuple[ShockSpec, ...] = ()
    figures: tuple[FigureSpec, ...] = ()
    rates: Mapping[str, Fraction] = field(default_factory=dict)

    def __post_init__(self) -> None:
        merged = {name: Fraction(0) for name in DEFAULT_RATE_NAMES}
        merged.update(self.rates)
        object.__setattr__(self, "rates", merged)

    def agent(self, agent_id: str) -> AgentSpec:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(f"unknown agent {agent_id!r}")

    def with_seed(self, seed: int) -> "ScenarioSpec":
        return replace(self, seed=seed)

    def with_extra_policy(self, actions: Iterable[PolicyAction]) -> "ScenarioSpec":
        merged = tuple(sorted((*self.policy, *actions), key=lambda p: p.time))
        return replace(self, policy=merged)

    def with_extra_shocks(self, shocks: Iterable[ShockSpec]) -> "ScenarioSpec":
        merged = tuple(sorted((*self.shocks, *shocks), key=lambda s: s.time))
        return replace(self, shocks=merged)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "term_length": self.term_length,
            "agents": [
                {
                    "id": a.id,
                    "role": a.role,
                    "stock": a.stock,
                    "gain": rational_str(a.gain),
                    "mean_wait": a.mean_wait,
                }
                for a in self.agents
            ],
            "channels": [
                {
                    "id": c.id,
                    "source": c.source,
                    "sink": c.sink,
                    "rate": c.rate,
                    "multiplier": rational_str(c.multiplier),
                    "adjustable": c.adjustable,
                }
                for c in self.channels
            ],
            "issuance_schedule": [[s.time, s.amount] for s in self.issuance],
            "securities_schedule": [[s.time, s.amount] for s in self.securities],
            "policy_schedule": [
                {"time": p.time, "action": p.kind, "target": p.target, "value": rational_str(p.value)}
                for p in self.policy
            ],
            "shock_schedule": [
                {"time": s.time, "channel": s.channel, "amount": s.amount} for s in self.shocks
            ],
            "figures": [
                {"name": f.name, **({"channel": f.channel} if f.channel else {"stock": f.stock})}
                for f in self.figures
            ],
            "rates": {k: rational_str(v) for k, v in self.rates.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _require(mapping: Mapping, key: str, where: str) -> Any:
    if key not in mapping:
        raise ScenarioError(f"{where}: missing required field {key!r}")
    return mapping[key]


def scenario_from_dict(data: Mapping[str, Any]) -> ScenarioSpec:
    if not isinstance(data, Mapping):
        raise ScenarioError("scenario document must be a JSON object")
    name = str(data.get("name", "unnamed"))
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ScenarioError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    term_length = float(data.get("term_length", 1.0))
    if not term_length > 0:
        raise ScenarioError(f"term_length must be positive, got {term_length}")

    agents = []
    for raw in _require(data, "agents", "scenario"):
        where = f"agent {raw.get('id', '?')!r}"
        mean_wait = float(raw.get("mean_wait", 0.25))
        if not mean_wait > 0:
            raise ScenarioError(f"{where}: mean_wait must be positive")
        agents.append(
            AgentSpec(
                id=str(_require(raw, "id", "agent")),
                role=str(_require(raw, "role", where)),
                stock=as_money(raw.get("stock", 0), f"{where} stock"),
                gain=as_fraction(raw.get("gain", 0), f"{where} gain"),
                mean_wait=mean_wait,
            )
        )
        if agents[-1].gain < 0:
            raise ScenarioError(f"{where}: gain must be non-negative")

    channels = []
    for raw in data.get("channels", []):
        where = f"channel {raw.get('id', '?')!r}"
        mult = as_fraction(raw.get("multiplier", 1), f"{where} multiplier")
        if mult < 0:
            raise ScenarioError(f"{where}: multiplier must be non-negative")
        channels.append(
            ChannelSpec(
                id=str(_require(raw, "id", "channel")),
                source=str(_require(raw, "source", where)),
                sink=str(_require(raw, "sink", where)),
                rate=as_money(_require(raw, "rate", where), f"{where} rate"),
                multiplier=mult,
                adjustable=bool(raw.get("adjustable", False)),
            )
        )

    def amounts(key: str) -> tuple[ScheduledAmount, ...]:
        out = []
        for entry in data.get(key, []):
            time, amount = entry
            out.append(ScheduledAmount(float(time), as_money(amount, f"{key} amount")))
        return tuple(sorted(out, key=lambda s: s.time))

    policy = []
    for raw in data.get("policy_schedule", []):
        kind = str(_require(raw, "action", "policy entry"))
        if kind not in ("set_multiplier", "set_rate"):
            raise ScenarioError(f"policy entry: unknown action {kind!r}")
        policy.append(
            PolicyAction(
                time=float(_require(raw, "time", "policy entry")),
                kind=kind,
                target=str(_require(raw, "target", "policy entry")),
                value=as_fraction(_require(raw, "value", "policy entry"), "policy value"),
            )
        )

    shocks = []
    for raw in data.get("shock_schedule", []):
        shocks.append(
            ShockSpec(
                time=float(_require(raw, "time", "shock entry")),
                channel=str(_require(raw, "channel", "shock entry")),
                amount=as_money(_require(raw, "amount", "shock entry"), "shock amount"),
            )
        )

    figures = []
    for raw in data.get("figures", []):
        fig = FigureSpec(
            name=str(_require(raw, "name", "figure entry")),
            channel=raw.get("channel"),
            stock=raw.get("stock"),
        )
        if (fig.channel is None) == (fig.stock is None):
            raise ScenarioError(f"figure {fig.name!r}: exactly one of channel/stock required")
        figures.append(fig)

    rates = {name: Fraction(0) for name in DEFAULT_RATE_NAMES}
    for key, value in data.get("rates", {}).items():
        rates[str(key)] = as_fraction(value, f"rate {key!r}")

    return ScenarioSpec(
        name=name,
        seed=seed,
        term_length=term_length,
        agents=tuple(agents),
        channels=tuple(channels),
        issuance=amounts("issuance_schedule"),
        securities=amounts("securities_schedule"),
        policy=tuple(sorted(policy, key=lambda p: p.time)),
        shocks=tuple(sorted(shocks, key=lambda s: s.time)),
        figures=tuple(figures),
        rates=rates,
    )


def load_scenario(path: str | Path) -> ScenarioSpec:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return scenario_from_dict(data)


# ---------------------------------------------------------------------------
# Built-in reference scenarios
# ---------------------------------------------------------------------------


def national_5() -> ScenarioSpec:
    """Five-sector closed economy in flow balance, used as the reference network.

    Effective per-term flows are balanced at every agent, so the network starts
    at a fixed point of the adjustment dynamics; schedule entries and policy
    changes provide the only excitation.
    """
    q = Fraction(1, 4)
    return ScenarioSpec(
        name="national-5",
        seed=42,
        term_length=1.0,
        agents=(
            AgentSpec("CB", CENTRAL_BANK, gain=Fraction(0)),
            AgentSpec("GOV", "Government", gain=Fraction(1, 2)),
            AgentSpec("BANK", "BankSector", gain=Fraction(1, 2)),
            AgentSpec("HH", "HouseholdSector", gain=Fraction(1, 2)),
            AgentSpec("CORP", "CorporateSector", gain=Fraction(1, 2)),
        ),
        channels=(
            ChannelSpec("wages", "CORP", "HH", 840, adjustable=True),
            ChannelSpec("transfers", "GOV", "HH", 400, adjustable=True),
            ChannelSpec("consumption", "HH", "CORP", 1000, adjustable=True),
            ChannelSpec("savings", "HH", "BANK", 40, adjustable=True),
            ChannelSpec("tax_hh", "HH", "GOV", 800, multiplier=q),
            ChannelSpec("procurement", "GOV", "CORP", 100, adjustable=True),
            ChannelSpec("debt_service", "GOV", "BANK", 300, adjustable=True),
            ChannelSpec("tax_corp", "CORP", "GOV", 400, multiplier=q),
            ChannelSpec("investment", "CORP", "BANK", 200, adjustable=True),
            ChannelSpec("lending", "BANK", "CORP", 40, adjustable=True),
            ChannelSpec("bond", "BANK", "GOV", 500, adjustable=True),
            ChannelSpec("note_circulation", "CB", "BANK", 20),
            ChannelSpec("reserve_deposit", "BANK", "CB", 20),
        ),
        issuance=(ScheduledAmount(0.0, 2000),),
        securities=(ScheduledAmount(0.0, 3000),),
        figures=(
            FigureSpec("consumption_flow", channel="consumption"),
            FigureSpec("investment_flow", channel="investment"),
            FigureSpec("bond_flow", channel="bond"),
            FigureSpec("wages_flow", channel="wages"),
        ),
        rates={"discount_rate": Fraction(1, 40), "securities_interest_rate": Fraction(3, 100)},
    )


def two_agent_kernel(rate_ab: int = 10, rate_ba: int = 10, gain: Fraction = Fraction(1)) -> ScenarioSpec:
    """Minimal interacting pair (plus the required central bank, unconnected)."""
    return ScenarioSpec(
        name="two-agent-kernel",
        seed=3,
        term_length=1.0,
        agents=(
            AgentSpec("CB", CENTRAL_BANK),
            AgentSpec("A", "Custom:pair", gain=gain, mean_wait=0.5),
            AgentSpec("B", "Custom:pair", gain=gain, mean_wait=0.5),
        ),
        channels=(
            ChannelSpec("ab", "A", "B", rate_ab, adjustable=True),
            ChannelSpec("ba", "B", "A", rate_ba, adjustable=True),
        ),
        figures=(
            FigureSpec("ab_flow", channel="ab"),
            FigureSpec("ba_flow", channel="ba"),
        ),
    )


def three_agent_cycle(
    rates: tuple[int, int, int] = (300, 300, 300),
    gain: Fraction = Fraction(1, 2),
    name: str = "three-agent-cycle",
    seed: int = 7,
) -> ScenarioSpec:
    """Three non-exempt agents on a directed cycle; staleness arises organically."""
    r_ab, r_bc, r_ca = rates
    return ScenarioSpec(
        name=name,
        seed=seed,
        term_length=1.0,
        agents=(
            AgentSpec("CB", CENTRAL_BANK),
            AgentSpec("A", "Custom:cycle", gain=gain, mean_wait=0.5),
            AgentSpec("B", "Custom:cycle", gain=gain, mean_wait=0.5),
            AgentSpec("C", "Custom:cycle", gain=gain, mean_wait=0.5),
        ),
        channels=(
            ChannelSpec("ab", "A", "B", r_ab, adjustable=True),
            ChannelSpec("bc", "B", "C", r_bc, adjustable=True),
            ChannelSpec("ca", "C", "A", r_ca, adjustable=True),
        ),
        figures=(
            FigureSpec("ab_flow", channel="ab"),
            FigureSpec("bc_flow", channel="bc"),
            FigureSpec("ca_flow", channel="ca"),
        ),
    )


def three_agent_skew() -> ScenarioSpec:
    """Unbalanced cycle variant: a transient that adjustment has to work off."""
    return three_agent_cycle(rates=(330, 300, 285), name="three-agent-skew", seed=11)


BUILTIN_SCENARIOS = {
    "national-5": national_5,
    "two-agent-kernel": two_agent_kernel,
    "three-agent-cycle": three_agent_cycle,
    "three-agent-skew": three_agent_skew,
}
