"""Flow network construction, exact-money operations, and conservation."""

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moneyflow import (
    build_network,
    conservation_holds,
    issue,
    local_imbalance,
    notes_outstanding,
    transfer,
    true_imbalance,
)
from moneyflow.scenario import AgentSpec, ChannelSpec, ScenarioError, ScenarioSpec

from conftest import tiny_spec


def spec_with(agents, channels, **kwargs):
    return ScenarioSpec(name="t", agents=tuple(agents), channels=tuple(channels), **kwargs)


CB = AgentSpec("CB", "CentralBank")


class TestBuildNetwork:
    def test_basic_construction(self):
        spec = spec_with(
            [CB, AgentSpec("A", "Custom:x", stock=100), AgentSpec("B", "Custom:x", stock=50)],
            [ChannelSpec("ab", "A", "B", 10)],
        )
        state = build_network(spec)
        assert conservation_holds(state)
        assert notes_outstanding(state) == 0
        ch = state.channels["ab"]
        assert ch.snap_rate_source == ch.snap_rate_sink == 10
        assert ch.snap_time_source == ch.snap_time_sink == 0.0

    def test_self_loop_rejected(self):
        spec = spec_with([CB, AgentSpec("A", "Custom:x")], [ChannelSpec("aa", "A", "A", 5)])
        with pytest.raises(ScenarioError, match="aa.*self-loop"):
            build_network(spec)

    def test_missing_central_bank_rejected(self):
        spec = spec_with([AgentSpec("A", "Custom:x"), AgentSpec("B", "Custom:x")], [])
        with pytest.raises(ScenarioError, match="exactly one CentralBank"):
            build_network(spec)

    def test_two_central_banks_rejected(self):
        spec = spec_with([CB, AgentSpec("CB2", "CentralBank")], [])
        with pytest.raises(ScenarioError, match="exactly one CentralBank"):
            build_network(spec)

    def test_duplicate_agent_id_rejected(self):
        spec = spec_with([CB, AgentSpec("A", "Custom:x"), AgentSpec("A", "Custom:y")], [])
        with pytest.raises(ScenarioError, match="duplicate agent id 'A'"):
            build_network(spec)

    def test_negative_rate_rejected(self):
        spec = spec_with([CB, AgentSpec("A", "Custom:x"), AgentSpec("B", "Custom:x")],
                         [ChannelSpec("ab", "A", "B", -1)])
        with pytest.raises(ScenarioError, match="ab.*negative rate"):
            build_network(spec)

    def test_unknown_endpoint_rejected(self):
        spec = spec_with([CB, AgentSpec("A", "Custom:x")], [ChannelSpec("ab", "A", "B", 1)])
        with pytest.raises(ScenarioError, match="unknown agent 'B'"):
            build_network(spec)

    def test_exemption_matches_role(self, national5_spec):
        state = build_network(national5_spec)
        assert state.agents["CB"].continuity_exempt
        assert not any(state.agents[a].continuity_exempt for a in ("GOV", "BANK", "HH", "CORP"))


class TestTransfer:
    def test_zero_amount_updates_settlement_stamps_only(self, tiny_state):
        before = {a.id: a.stock for a in tiny_state.agents.values()}
        transfer(tiny_state, "ab", 0, 0.5)
        assert {a.id: a.stock for a in tiny_state.agents.values()} == before
        ch = tiny_state.channels["ab"]
        assert ch.snap_time_source == ch.snap_time_sink == 0.5

    def test_moves_stock_and_conserves(self):
        spec = spec_with(
            [CB, AgentSpec("A", "Custom:x", stock=100), AgentSpec("B", "Custom:x", stock=50)],
            [ChannelSpec("ab", "A", "B", 10)],
        )
        state = build_network(spec)
        transfer(state, "ab", 30, 1.0)
        assert state.agents["A"].stock == 70
        assert state.agents["B"].stock == 80
        assert state.total_stock() == 150

    def test_two_transfers_equal_one(self):
        spec = tiny_spec()
        one, two = build_network(spec), build_network(spec)
        transfer(one, "ab", 30, 1.0)
        transfer(two, "ab", 10, 1.0)
        transfer(two, "ab", 20, 1.5)
        assert {a.id: a.stock for a in one.agents.values()} == \
               {a.id: a.stock for a in two.agents.values()}

    def test_unknown_channel(self, tiny_state):
        with pytest.raises(KeyError, match="unknown channel"):
            transfer(tiny_state, "nope", 1, 0.0)


class TestIssue:
    def test_zero_amount_no_change(self, tiny_state):
        issue(tiny_state, 0)
        assert notes_outstanding(tiny_state) == 0
        assert tiny_state.agents["CB"].stock == 0

    def test_retirement_below_zero_rejected(self, tiny_state):
        with pytest.raises(ValueError, match="below zero"):
            issue(tiny_state, -1)

    def test_issue_then_retire_restores(self, tiny_state):
        issue(tiny_state, 1000)
        issue(tiny_state, -1000)
        assert notes_outstanding(tiny_state) == 0
        assert tiny_state.agents["CB"].stock == 0
        assert conservation_holds(tiny_state)

    def test_non_exempt_agent_rejected(self, tiny_state):
        with pytest.raises(ValueError, match="non-exempt"):
            issue(tiny_state, 5, agent_id="A")

    def test_transfers_leave_outstanding_unchanged(self, tiny_state):
        issue(tiny_state, 500)
        transfer(tiny_state, "ab", 120, 1.0)
        transfer(tiny_state, "ab", 80, 2.0)
        assert notes_outstanding(tiny_state) == 500
        assert conservation_holds(tiny_state)


class TestLocalImbalance:
    def test_balanced_window(self, tiny_state):
        spec = spec_with(
            [CB, AgentSpec("A", "Custom:x"), AgentSpec("B", "Custom:x")],
            [ChannelSpec("ab", "A", "B", 10), ChannelSpec("ba", "B", "A", 10)],
        )
        state = build_network(spec)
        transfer(state, "ab", 100, 1.0)
        transfer(state, "ba", 100, 2.0)
        assert local_imbalance(state, "A", (0.0, 3.0)) == 0

    def test_net_inflow(self, tiny_state):
        spec = spec_with(
            [CB, AgentSpec("A", "Custom:x"), AgentSpec("B", "Custom:x")],
            [ChannelSpec("ab", "A", "B", 10), ChannelSpec("ba", "B", "A", 10)],
        )
        state = build_network(spec)
        transfer(state, "ba", 120, 1.0)
        transfer(state, "ab", 100, 2.0)
        assert local_imbalance(state, "A", (0.0, 3.0)) == 20

    def test_empty_window(self, tiny_state):
        transfer(tiny_state, "ab", 50, 1.0)
        assert local_imbalance(tiny_state, "A", (2.0, 3.0)) == 0

    def test_unknown_agent(self, tiny_state):
        with pytest.raises(KeyError, match="unknown agent"):
            local_imbalance(tiny_state, "nope", (0.0, 1.0))

    def test_counts_engine_settlements(self):
        # Settled amounts from a live run land in the window sums too, and a
        # closed pair nets to zero over the whole history.
        from moneyflow import run_record, two_agent_kernel
        from moneyflow.retrieval import Assignment, apply_assignment

        state = build_network(two_agent_kernel(40, 28, gain=Fraction(1, 2)))
        apply_assignment(state, Assignment(offsets={"A": 5}))
        run_record(state, 3)
        a = local_imbalance(state, "A", (0.0, 3.5))
        b = local_imbalance(state, "B", (0.0, 3.5))
        assert a == state.agents["A"].stock
        assert b == state.agents["B"].stock
        assert a + b == 0


class TestClosedFlowIdentity:
    def test_true_imbalances_sum_to_zero(self, national5_spec):
        state = build_network(national5_spec)
        total = sum(true_imbalance(state, aid) for aid in state.agent_order)
        assert total == 0

    @given(rates=st.lists(st.integers(min_value=0, max_value=10_000), min_size=3, max_size=3))
    @settings(max_examples=50, deadline=None)
    def test_sum_zero_for_any_cycle_rates(self, rates):
        spec = spec_with(
            [CB, AgentSpec("A", "Custom:x"), AgentSpec("B", "Custom:x"), AgentSpec("C", "Custom:x")],
            [
                ChannelSpec("ab", "A", "B", rates[0], multiplier=Fraction(1, 3)),
                ChannelSpec("bc", "B", "C", rates[1]),
                ChannelSpec("ca", "C", "A", rates[2], multiplier=Fraction(2, 7)),
            ],
        )
        state = build_network(spec)
        assert sum(true_imbalance(state, aid) for aid in state.agent_order) == 0


@given(
    moves=st.lists(
        st.tuples(st.sampled_from(["ab", "ba"]), st.integers(min_value=0, max_value=500)),
        max_size=30,
    ),
    issues=st.lists(st.integers(min_value=0, max_value=1000), max_size=5),
)
@settings(max_examples=60, deadline=None)
def test_conservation_under_random_operations(moves, issues):
    spec = spec_with(
        [CB, AgentSpec("A", "Custom:x", stock=250), AgentSpec("B", "Custom:x", stock=-40)],
        [ChannelSpec("ab", "A", "B", 10), ChannelSpec("ba", "B", "A", 10)],
    )
    state = build_network(spec)
    t = 0.0
    for amount in issues:
        issue(state, amount)
    for cid, amount in moves:
        t += 0.25
        transfer(state, cid, amount, t)
    assert state.total_stock() - notes_outstanding(state) == 210
    assert conservation_holds(state)
