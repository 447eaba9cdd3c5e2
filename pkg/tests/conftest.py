from fractions import Fraction

import pytest

from moneyflow import build_network, national_5, three_agent_cycle, two_agent_kernel
from moneyflow.scenario import AgentSpec, ChannelSpec, FigureSpec, ScenarioSpec


@pytest.fixture
def national5_spec():
    return national_5()


@pytest.fixture
def kernel_spec():
    return two_agent_kernel()


@pytest.fixture
def cycle_spec():
    return three_agent_cycle()


def tiny_spec(rate: int = 10, gain=Fraction(1), seed: int = 1) -> ScenarioSpec:
    """Two agents plus the central bank, one channel A->B."""
    return ScenarioSpec(
        name="tiny",
        seed=seed,
        agents=(
            AgentSpec("CB", "CentralBank"),
            AgentSpec("A", "Custom:test", gain=gain, mean_wait=0.5),
            AgentSpec("B", "Custom:test", gain=gain, mean_wait=0.5),
        ),
        channels=(ChannelSpec("ab", "A", "B", rate, adjustable=True),),
        figures=(FigureSpec("ab_flow", channel="ab"),),
    )


@pytest.fixture
def tiny_state():
    return build_network(tiny_spec())
