"""Term-end balance sheets: the globally synchronized view of the network.

The recorder plays the part of the monetary authority. At every term boundary
it forces a settlement of all channels at once (a global cut the dynamics
themselves never perform), then compiles per-agent flow totals and aggregate
figures into a balance sheet. The forced cut is flagged `observer` in the
event log: it flushes accruals and refreshes snapshots, so the recorder is
not a perfectly passive observer, and downstream consumers can tell its
settlements apart from organic ones.

Sheets satisfy the accounting identities exactly, by construction;
`verify_identities` re-checks them and reports any discrepancy rather than
raising. Records serialize to CSV and JSON with a documented, bit-exact
encoding; see docs/record-format.md.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from .engine import run, settle_all
from .network import Event, NetworkState
from .scenario import as_fraction, rational_str


class RecordError(ValueError):
    """Raised for malformed record files or violated record invariants."""


@dataclass(frozen=True)
class AgentLine:
    opening: int
    inflow: int
    outflow: int
    closing: int


@dataclass(frozen=True)
class BalanceSheet:
    term_index: int
    agents: Mapping[str, AgentLine]
    notes_outstanding: int
    securities_outstanding: int
    rates: Mapping[str, Fraction]
    figures: Mapping[str, int]

    def aggregates(self) -> dict[str, int | Fraction]:
        out: dict[str, int | Fraction] = {
            "notes_outstanding": self.notes_outstanding,
            "government_securities_outstanding": self.securities_outstanding,
            "discount_rate": self.rates.get("discount_rate", Fraction(0)),
            "securities_interest_rate": self.rates.get("securities_interest_rate", Fraction(0)),
        }
        for name, value in self.rates.items():
            if name not in out:
                out[name] = value
        out.update(self.figures)
        return out


@dataclass(frozen=True)
class Record:
    sheets: tuple[BalanceSheet, ...]
    fingerprint: str = ""
    term_length: float = 1.0
    initial_total_stock: int = 0

    def __post_init__(self) -> None:
        for i, sheet in enumerate(self.sheets):
            if sheet.term_index != i:
                raise RecordError(
                    f"term indices must be contiguous from 0; position {i} holds term {sheet.term_index}"
                )


@dataclass(frozen=True)
class IdentityCheck:
    name: str
    passed: bool
    discrepancy: int


@dataclass(frozen=True)
class IdentityReport:
    checks: tuple[IdentityCheck, ...]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[IdentityCheck]:
        return [c for c in self.checks if not c.passed]


def _term_of(event: Event, term_length: float) -> int:
    term = event.payload.get("term")
    if term is not None:
        return term
    return int(event.time // term_length)


def _compile_range(log: Sequence[Event], state: NetworkState, first: int, last: int,
                   term_length: float) -> list[BalanceSheet]:
    """Single pass over the log building sheets for terms first..last inclusive."""
    if state.now + 1e-12 < (last + 1) * term_length:
        raise RecordError(
            f"incomplete log coverage: state at time {state.now} cannot close term {last}"
        )
    spec = state.spec
    agent_ids = [a.id for a in spec.agents]
    channel_figures = {f.channel: f.name for f in spec.figures if f.channel is not None}
    stock_figures = [(f.name, f.stock) for f in spec.figures if f.stock is not None]

    stocks = dict(state.initial_stocks)
    rates = dict(state.initial_rates)
    issuance = 0
    securities = 0

    sheets: list[BalanceSheet] = []
    term = 0
    opening = dict(stocks)
    inflow = {aid: 0 for aid in agent_ids}
    outflow = {aid: 0 for aid in agent_ids}
    flows = {name: 0 for name in channel_figures.values()}

    def close_term() -> None:
        nonlocal term, opening, inflow, outflow, flows
        if term >= first:
            figures = dict(flows)
            for name, agent_id in stock_figures:
                figures[name] = stocks[agent_id]
            sheets.append(BalanceSheet(
                term_index=term,
                agents={aid: AgentLine(opening[aid], inflow[aid], outflow[aid], stocks[aid])
                        for aid in agent_ids},
                notes_outstanding=issuance,
                securities_outstanding=securities,
                rates=dict(rates),
                figures=figures,
            ))
        term += 1
        opening = dict(stocks)
        inflow = {aid: 0 for aid in agent_ids}
        outflow = {aid: 0 for aid in agent_ids}
        flows = {name: 0 for name in channel_figures.values()}

    def apply_amount(cid: str, amount: int, in_window: bool, count_figures: bool) -> None:
        ch = state.channels[cid]
        stocks[ch.source] -= amount
        stocks[ch.sink] += amount
        if in_window:
            outflow[ch.source] += amount
            inflow[ch.sink] += amount
            if count_figures:
                name = channel_figures.get(cid)
                if name is not None:
                    flows[name] += amount

    for ev in log:
        ev_term = _term_of(ev, term_length)
        if ev_term > last:
            break
        while ev_term > term and term <= last:
            close_term()
        in_window = first <= ev_term <= last
        kind = ev.kind
        if kind == "Settlement":
            for cid, amount in ev.payload["amounts"]:
                apply_amount(cid, amount, in_window, count_figures=True)
        elif kind == "Transfer":
            apply_amount(ev.payload["channel"], ev.payload["amount"], in_window, count_figures=True)
        elif kind == "Shock":
            amount = ev.payload["amount"]
            stocks[ev.payload["source"]] -= amount
            stocks[ev.payload["sink"]] += amount
            if in_window:
                # Shocks redistribute stocks; they are not flow on the channel.
                outflow[ev.payload["source"]] += amount
                inflow[ev.payload["sink"]] += amount
        elif kind == "Issue":
            amount = ev.payload["amount"]
            if ev.payload.get("instrument") == "securities":
                securities += amount
            else:
                stocks[ev.payload["agent"]] += amount
                issuance += amount
                if in_window:
                    if amount >= 0:
                        inflow[ev.payload["agent"]] += amount
                    else:
                        outflow[ev.payload["agent"]] += -amount
        elif kind == "Policy":
            if ev.payload["action"] == "set_rate":
                rates[ev.payload["target"]] = ev.payload["value"]

    while term <= last:
        close_term()
    return sheets


def compile_balance_sheet(log: Sequence[Event], state: NetworkState, term_index: int,
                          term_length: float) -> BalanceSheet:
    """Balance sheet for one term, summed from the settled events in the log."""
    return _compile_range(log, state, term_index, term_index, term_length)[0]


def run_record(state: NetworkState, n_terms: int) -> Record:
    """Advance the state by whole terms, forcing the boundary cut each term.

    The forced settlement is flagged `observer` in the log so that organic
    settlements remain distinguishable from recorder-induced ones.
    """
    if n_terms < 0:
        raise ValueError("n_terms must be non-negative")
    term_length = state.spec.term_length
    first = int(round(state.now / term_length))
    if abs(state.now - first * term_length) > 1e-9:
        raise ValueError(f"run_record must start at a term boundary, state is at {state.now}")
    for k in range(first, first + n_terms):
        boundary = (k + 1) * term_length
        run(state, boundary - state.now)
        settle_all(state, boundary, observer=True, term=k)
    sheets = _compile_range(state.log, state, 0, first + n_terms - 1, term_length) if n_terms else []
    return Record(
        sheets=tuple(sheets),
        fingerprint=state.spec.fingerprint(),
        term_length=term_length,
        initial_total_stock=sum(state.initial_stocks.values()),
    )


def verify_identities(sheet: BalanceSheet, initial_total_stock: int = 0) -> IdentityReport:
    """Exact check of the sheet's accounting identities.

    Failures are reported, never raised. The stock-versus-notes identity
    compares total closing stock against initial total plus notes outstanding
    (with zero initial stocks this is the plain sum-equals-outstanding form).
    """
    checks = []
    for aid, line in sheet.agents.items():
        gap = line.closing - (line.opening + line.inflow - line.outflow)
        checks.append(IdentityCheck(f"continuity:{aid}", gap == 0, gap))
    total_closing = sum(line.closing for line in sheet.agents.values())
    gap = total_closing - (initial_total_stock + sheet.notes_outstanding)
    checks.append(IdentityCheck("total_stock_vs_notes_outstanding", gap == 0, gap))
    return IdentityReport(tuple(checks))


def verify_record(record: Record) -> IdentityReport:
    checks: list[IdentityCheck] = []
    for sheet in record.sheets:
        report = verify_identities(sheet, record.initial_total_stock)
        checks.extend(
            IdentityCheck(f"term{sheet.term_index}:{c.name}", c.passed, c.discrepancy)
            for c in report.checks
        )
    return IdentityReport(tuple(checks))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_CSV_HEADER = "term,kind,id,opening,inflow,outflow,closing,aggregates"


def _aggregate_items(sheet: BalanceSheet) -> list[tuple[str, str]]:
    items = [
        ("notes_outstanding", str(sheet.notes_outstanding)),
        ("government_securities_outstanding", str(sheet.securities_outstanding)),
    ]
    rate_names = ["discount_rate", "securities_interest_rate"]
    rate_names += sorted(k for k in sheet.rates if k not in rate_names)
    for name in rate_names:
        value = sheet.rates.get(name, Fraction(0))
        text = rational_str(value)
        if "." not in text and "/" not in text:
            text += ".0"  # rates always carry a fractional marker in CSV
        items.append((name, text))
    items.extend((name, str(value)) for name, value in sheet.figures.items())
    return items


def record_to_csv(record: Record) -> str:
    lines = []
    nondefault = (record.fingerprint or record.term_length != 1.0
                  or record.initial_total_stock != 0)
    if nondefault:
        lines.append("# moneyflow-record v1")
        lines.append(f"# fingerprint={record.fingerprint}")
        lines.append(f"# term_length={record.term_length!r}")
        lines.append(f"# initial_total_stock={record.initial_total_stock}")
    lines.append(_CSV_HEADER)
    for sheet in record.sheets:
        for aid, line in sheet.agents.items():
            lines.append(f"{sheet.term_index},agent,{aid},{line.opening},{line.inflow},"
                         f"{line.outflow},{line.closing},")
        pairs = " ".join(f"{k}={v}" for k, v in _aggregate_items(sheet))
        lines.append(f"{sheet.term_index},aggregates,,,,,,{pairs}")
    return "\n".join(lines) + "\n"


def record_to_json(record: Record) -> str:
    doc = {
        "format": "moneyflow-record",
        "version": 1,
        "fingerprint": record.fingerprint,
        "term_length": record.term_length,
        "initial_total_stock": record.initial_total_stock,
        "sheets": [
            {
                "term_index": sheet.term_index,
                "agents": {
                    aid: {"opening": line.opening, "inflow": line.inflow,
                          "outflow": line.outflow, "closing": line.closing}
                    for aid, line in sheet.agents.items()
                },
                "notes_outstanding": sheet.notes_outstanding,
                "government_securities_outstanding": sheet.securities_outstanding,
                "rates": {k: rational_str(v) for k, v in sheet.rates.items()},
                "figures": dict(sheet.figures),
            }
            for sheet in record.sheets
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def write_record(record: Record, path: str | Path, format: str = "csv") -> None:
    if format == "csv":
        text = record_to_csv(record)
    elif format == "json":
        text = record_to_json(record)
    else:
        raise ValueError(f"unknown record format {format!r}")
    Path(path).write_text(text, encoding="utf-8")


def _parse_int(text: str, where: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise RecordError(f"{where}: expected integer, got {text!r}") from exc


def _sheet_from_parts(term: int, agents: dict[str, AgentLine],
                      aggregates: list[tuple[str, str]], where: str) -> BalanceSheet:
    notes = securities = 0
    rates: dict[str, Fraction] = {}
    figures: dict[str, int] = {}
    for name, text in aggregates:
        if name == "notes_outstanding":
            notes = _parse_int(text, f"{where} {name}")
        elif name == "government_securities_outstanding":
            securities = _parse_int(text, f"{where} {name}")
        elif "." in text or "/" in text:
            rates[name] = as_fraction(text, f"{where} {name}")
        else:
            figures[name] = _parse_int(text, f"{where} {name}")
    return BalanceSheet(term, agents, notes, securities, rates, figures)


def record_from_csv(text: str) -> Record:
    fingerprint = ""
    term_length = 1.0
    initial_total = 0
    lines = text.splitlines()
    idx = 0
    while idx < len(lines) and lines[idx].startswith("#"):
        comment = lines[idx][1:].strip()
        if "=" in comment:
            key, _, value = comment.partition("=")
            if key == "fingerprint":
                fingerprint = value
            elif key == "term_length":
                term_length = float(value)
            elif key == "initial_total_stock":
                initial_total = _parse_int(value, f"line {idx + 1}: initial_total_stock")
        idx += 1
    if idx >= len(lines) or lines[idx] != _CSV_HEADER:
        raise RecordError(f"line {idx + 1}: expected header {_CSV_HEADER!r}")
    idx += 1

    sheets: list[BalanceSheet] = []
    current_term: int | None = None
    agents: dict[str, AgentLine] = {}
    for lineno in range(idx, len(lines)):
        row = lines[lineno]
        if not row:
            continue
        parts = row.split(",")
        if len(parts) != 8:
            raise RecordError(f"line {lineno + 1}: expected 8 columns, found {len(parts)}")
        where = f"line {lineno + 1}"
        term = _parse_int(parts[0], f"{where} column 1")
        kind = parts[1]
        if current_term is None:
            current_term = term
        if term != current_term:
            raise RecordError(f"{where}: unexpected term {term} inside term {current_term} block")
        if kind == "agent":
            aid = parts[2]
            if not aid:
                raise RecordError(f"{where} column 3: agent row needs an id")
            agents[aid] = AgentLine(
                opening=_parse_int(parts[3], f"{where} column 4"),
                inflow=_parse_int(parts[4], f"{where} column 5"),
                outflow=_parse_int(parts[5], f"{where} column 6"),
                closing=_parse_int(parts[6], f"{where} column 7"),
            )
        elif kind == "aggregates":
            pairs = []
            cell = parts[7]
            if cell:
                for chunk in cell.split(" "):
                    name, eq, value = chunk.partition("=")
                    if not eq:
                        raise RecordError(f"{where} column 8: malformed aggregate {chunk!r}")
                    pairs.append((name, value))
            sheets.append(_sheet_from_parts(term, agents, pairs, where))
            agents = {}
            current_term = None
        else:
            raise RecordError(f"{where} column 2: unknown row kind {kind!r}")
    if current_term is not None:
        raise RecordError(f"term {current_term}: agent rows without a closing aggregates row")
    return Record(tuple(sheets), fingerprint, term_length, initial_total)


def record_from_json(text: str) -> Record:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RecordError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("format") != "moneyflow-record":
        raise RecordError("not a moneyflow record document")
    sheets = []
    for raw in doc.get("sheets", []):
        agents = {
            aid: AgentLine(entry["opening"], entry["inflow"], entry["outflow"], entry["closing"])
            for aid, entry in raw.get("agents", {}).items()
        }
        sheets.append(BalanceSheet(
            term_index=raw["term_index"],
            agents=agents,
            notes_outstanding=raw.get("notes_outstanding", 0),
            securities_outstanding=raw.get("government_securities_outstanding", 0),
            rates={k: as_fraction(v, f"rate {k}") for k, v in raw.get("rates", {}).items()},
            figures={k: int(v) for k, v in raw.get("figures", {}).items()},
        ))
    return Record(
        sheets=tuple(sheets),
        fingerprint=doc.get("fingerprint", ""),
        term_length=float(doc.get("term_length", 1.0)),
        initial_total_stock=int(doc.get("initial_total_stock", 0)),
    )


def read_record(path: str | Path, *, on_identity_violation: str = "reject") -> Record:
    """Parse a CSV or JSON record file, validating invariants.

    `on_identity_violation`: "reject" raises, "warn" emits a warning, "skip"
    loads without checking.
    """
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("{"):
        record = record_from_json(text)
    else:
        record = record_from_csv(text)
    if on_identity_violation != "skip":
        report = verify_record(record)
        if not report.ok:
            failures = ", ".join(f"{c.name} (off by {c.discrepancy})" for c in report.failures())
            message = f"{path}: accounting identities violated: {failures}"
            if on_identity_violation == "reject":
                raise RecordError(message)
            warnings.warn(message)
    return record
