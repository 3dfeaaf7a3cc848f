"""Frame accounting: the budget object and the charging env wrapper."""

import numpy as np
import pytest

from craftchain.budget import BudgetedEnv, FrameBudget
from craftchain.env import Action, CraftWorld, EnvConfig, EnvVariant
from craftchain.errors import BudgetExhausted


# ---------------------------------------------------------------------------
# FrameBudget

def test_budget_starts_empty_and_counts_up():
    b = FrameBudget(10)
    assert b.used == 0
    assert b.remaining == 10
    b.consume()
    b.consume(4)
    assert b.used == 5
    assert b.remaining == 5


def test_budget_can_be_filled_exactly():
    b = FrameBudget(7)
    b.consume(7)
    assert b.used == 7
    assert b.remaining == 0
    b.consume(0)  # a zero charge at the cap is fine
    assert b.used == 7


def test_budget_refuses_to_overdraw_and_keeps_its_count():
    b = FrameBudget(10, used=8)
    with pytest.raises(BudgetExhausted):
        b.consume(3)
    # a refused charge must not consume anything
    assert b.used == 8
    b.consume(2)
    assert b.used == 10
    with pytest.raises(BudgetExhausted):
        b.consume(1)


def test_budget_rejects_bad_arguments():
    with pytest.raises(ValueError):
        FrameBudget(-1)
    with pytest.raises(ValueError):
        FrameBudget(5, used=6)
    with pytest.raises(ValueError):
        FrameBudget(5, used=-1)
    b = FrameBudget(5)
    with pytest.raises(ValueError):
        b.consume(-1)


def test_budget_zero_cap_is_legal_but_unusable():
    b = FrameBudget(0)
    assert b.remaining == 0
    with pytest.raises(BudgetExhausted):
        b.consume(1)


def test_budget_serialization_round_trip():
    b = FrameBudget(123, used=45)
    d = b.to_dict()
    assert d == {"cap": 123, "used": 45}
    b2 = FrameBudget.from_dict(d)
    assert (b2.cap, b2.used) == (123, 45)
    # the dict must be plain data, safe for json round trips
    import json

    b3 = FrameBudget.from_dict(json.loads(json.dumps(b.to_dict())))
    assert (b3.cap, b3.used) == (123, 45)


def test_budget_from_dict_validates_like_the_constructor():
    with pytest.raises(ValueError):
        FrameBudget.from_dict({"cap": 3, "used": 9})


# ---------------------------------------------------------------------------
# BudgetedEnv

@pytest.fixture()
def wrapped():
    budget = FrameBudget(50)
    env = BudgetedEnv(CraftWorld(EnvConfig()), budget)
    return env, budget


def test_wrapper_charges_one_frame_per_step(wrapped):
    env, budget = wrapped
    env.reset(0, EnvVariant.TREE_CHOP)
    noop = env.action_vector(Action.NOOP)
    for k in range(1, 6):
        env.step(noop)
        assert budget.used == k


def test_wrapper_resets_are_free(wrapped):
    env, budget = wrapped
    env.reset(0, EnvVariant.TREE_CHOP)
    assert budget.used == 0
    env.step(env.action_vector(Action.MOVE_NORTH))
    env.reset(1, EnvVariant.TREE_CHOP)
    env.reset(2, EnvVariant.OBTAIN_CHAIN_DENSE)
    assert budget.used == 1


def test_wrapper_raises_once_frames_run_out():
    budget = FrameBudget(3)
    env = BudgetedEnv(CraftWorld(EnvConfig()), budget)
    env.reset(4, EnvVariant.TREE_CHOP)
    noop = env.action_vector(Action.NOOP)
    for _ in range(3):
        env.step(noop)
    with pytest.raises(BudgetExhausted):
        env.step(noop)
    assert budget.used == 3  # the refused step was not applied


def test_wrapper_returns_the_underlying_step_results(wrapped):
    env, _ = wrapped
    obs = env.reset(9, EnvVariant.TREE_CHOP)
    res = env.step(env.action_vector(Action.TURN_LEFT))
    assert res.obs.pov.shape == obs.pov.shape
    assert isinstance(res.reward, float)
    assert isinstance(res.done, bool)


def test_wrapper_passthrough_surfaces(wrapped):
    env, _ = wrapped
    env.reset(3, EnvVariant.TREE_CHOP)
    inner = env.env
    assert env.config is inner.config
    assert env.codec is inner.codec
    assert env.state is inner.state
    assert env.score() == inner.score()
    assert np.array_equal(env.action_vector(Action.ATTACK),
                          inner.action_vector(Action.ATTACK))


def test_one_budget_can_feed_several_envs():
    budget = FrameBudget(10)
    a = BudgetedEnv(CraftWorld(EnvConfig()), budget)
    b = BudgetedEnv(CraftWorld(EnvConfig()), budget)
    a.reset(0, EnvVariant.TREE_CHOP)
    b.reset(0, EnvVariant.OBTAIN_CHAIN_DENSE)
    for _ in range(4):
        a.step(a.action_vector(Action.NOOP))
    for _ in range(6):
        b.step(b.action_vector(Action.NOOP))
    assert budget.used == 10
    with pytest.raises(BudgetExhausted):
        a.step(a.action_vector(Action.NOOP))
