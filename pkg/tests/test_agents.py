"""Tests for the five subtask policies and their trainers."""

from types import SimpleNamespace

import numpy as np
import pytest

from craftchain.agents import (
    AgentKind,
    BCConfig,
    ChopTreeAgent,
    CraftStoneAgent,
    ExplorationSchedule,
    FlatBCConfig,
    LarMIConfig,
    PixelQNet,
    Policy,
    RandomSearchAgent,
    ReplayBuffer,
    ReplayItem,
    SQILBuffers,
    SQILConfig,
    craftstone_policy,
    demo_replay_items,
    larmi_batch_loss,
    larmi_loss,
    random_search_policy,
    soft_q_targets,
    sqil_relabel,
    sqil_update,
    train_choptree,
    train_craft_wooden,
    train_digstone,
    train_flat_bc,
)
from craftchain.budget import BudgetedEnv, FrameBudget
from craftchain.demos import (
    generate_demos,
    extract_critical_steps,
    truncate_before_plank,
)
from craftchain.discretize import (
    build_action_table,
    default_dp_penalty,
    dp_cluster_fit,
)
from craftchain.env import Action, CraftWorld, EnvConfig, EnvVariant, ItemId
from craftchain.errors import DegenerateDataError
from craftchain.nn import Adam, finite_difference_check, relu_region_fingerprint
from craftchain.obfuscation import nearest_action
from craftchain.scheduler import (
    compute_thresholds,
    label_episode,
    phase_transitions,
)


def _rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def _item(tag: float, reward: float = 0.0, done: bool = False) -> ReplayItem:
    pov = np.full((32, 32, 3), int(tag) % 256, dtype=np.uint8)
    return ReplayItem(pov_u8=pov, action_index=int(tag) % 4, reward=reward,
                      next_pov_u8=pov, done=done)


@pytest.fixture(scope="module")
def clean_ds():
    return generate_demos(30, seed=211, noise_level=0.0)


@pytest.fixture(scope="module")
def table(clean_ds):
    return build_action_table(clean_ds, seed=0)


@pytest.fixture(scope="module")
def thresholds(clean_ds):
    return compute_thresholds(clean_ds)


def _phase_penalty(ds) -> float:
    """Cluster-spawn distance for per-phase action sets, estimated from the
    pooled critical actions: a single phase can hold as few as two distinct
    actions in balanced counts, where its own median pairwise distance is
    exactly the inter-action distance and the spawn test degenerates."""
    pooled = np.stack([a for _, a in extract_critical_steps(ds)])
    return default_dp_penalty(pooled)


@pytest.fixture(scope="module")
def wooden_fit(clean_ds, thresholds):
    pairs = extract_critical_steps(clean_ds, phase_filter=2,
                                   thresholds=thresholds)
    acts = np.stack([a for _, a in pairs])
    dp = dp_cluster_fit(acts, penalty=_phase_penalty(clean_ds))
    agent, metrics = train_craft_wooden(pairs, dp, BCConfig(seed=0))
    return agent, metrics, dp


@pytest.fixture(scope="module")
def digstone_fit(clean_ds, table, thresholds):
    trans = phase_transitions(clean_ds, 3, thresholds)
    return train_digstone(trans, table, LarMIConfig(seed=0)) + (trans,)


# ---------------------------------------------------------------------------
# replay relabeling and buffers

def test_relabel_demo_reward_overrides_env_reward():
    item = _item(1, reward=16.0)
    assert sqil_relabel(item, "demo").reward == 1.0


def test_relabel_online_reward_is_zero():
    assert sqil_relabel(_item(1, reward=16.0), "online").reward == 0.0


def test_relabel_is_idempotent():
    once = sqil_relabel(_item(2, reward=5.0), "demo")
    twice = sqil_relabel(once, "demo")
    assert twice.reward == once.reward == 1.0
    assert np.array_equal(twice.pov_u8, once.pov_u8)
    assert twice.action_index == once.action_index
    assert twice.done == once.done


def test_relabel_keeps_other_fields():
    item = _item(3, reward=2.0, done=True)
    out = sqil_relabel(item, "online")
    assert out.done is True
    assert out.action_index == item.action_index
    assert np.array_equal(out.next_pov_u8, item.next_pov_u8)


def test_relabel_rejects_unknown_source():
    with pytest.raises(ValueError, match="source"):
        sqil_relabel(_item(0), "expert")


def test_replay_buffer_ring_overwrites_oldest():
    buf = ReplayBuffer(3)
    for i in range(5):
        buf.add(_item(i, reward=float(i)))
    assert len(buf) == 3
    kept = {it.reward for it in buf._items}
    assert kept == {2.0, 3.0, 4.0}


def test_replay_buffer_rejects_bad_capacity():
    with pytest.raises(ValueError):
        ReplayBuffer(0)


def test_replay_buffer_empty_sample_raises():
    with pytest.raises(ValueError):
        ReplayBuffer(4).sample(_rng(0), 2)


def test_batches_split_half_demo_half_online():
    bufs = SQILBuffers(100, 100)
    for i in range(20):
        bufs.add_demo(_item(i, reward=7.0))
        bufs.add_online(_item(i, reward=9.0))
    batch = bufs.sample_batch(_rng(1), 32)
    rewards = [it.reward for it in batch]
    assert rewards.count(1.0) == 16
    assert rewards.count(0.0) == 16


def test_reward_is_determined_solely_by_source_buffer():
    bufs = SQILBuffers(50, 50)
    for i in range(10):
        bufs.add_demo(_item(i, reward=float(i)))
        bufs.add_online(_item(i, reward=float(-i)))
    assert all(it.reward == 1.0 for it in bufs.demo._items)
    assert all(it.reward == 0.0 for it in bufs.online._items)


def test_sampling_requires_both_buffers():
    bufs = SQILBuffers(10, 10)
    bufs.add_demo(_item(0))
    with pytest.raises(ValueError, match="non-empty"):
        bufs.sample_batch(_rng(0), 8)


def test_demo_fraction_validated():
    with pytest.raises(ValueError):
        SQILBuffers(10, 10, demo_fraction=1.0)


# ---------------------------------------------------------------------------
# soft Bellman targets

def test_terminal_target_is_exactly_the_reward():
    q_next = np.array([[123.0, -55.0]])
    out = soft_q_targets(q_next, np.array([1.0]), np.array([True]),
                         gamma=0.99, alpha=1.0)
    assert out[0] == 1.0


def test_two_zero_actions_closed_form():
    out = soft_q_targets(np.array([[0.0, 0.0]]), np.array([0.0]),
                         np.array([False]), gamma=0.99, alpha=1.0)
    assert out[0] == pytest.approx(0.99 * np.log(2.0), abs=1e-12)


def test_uniform_row_closed_form():
    # constant row c: value = c + alpha*ln(n), so target = r + gamma*(that)
    c, alpha, gamma, r, n = 0.7, 2.0, 0.9, 0.3, 5
    out = soft_q_targets(np.full((1, n), c), np.array([r]),
                         np.array([False]), gamma=gamma, alpha=alpha)
    assert out[0] == pytest.approx(r + gamma * (c + alpha * np.log(n)),
                                   abs=1e-12)


def test_targets_stable_at_large_magnitudes():
    q_next = np.array([[1e3, -1e3], [-1e3, -1e3]])
    out = soft_q_targets(q_next, np.zeros(2), np.zeros(2, dtype=bool),
                         gamma=0.99, alpha=1.0)
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(0.99 * 1e3, rel=1e-9)
    assert out[1] == pytest.approx(0.99 * (-1e3 + np.log(2.0)), rel=1e-9)


# ---------------------------------------------------------------------------
# the pixel Q network

def test_qnet_output_shapes():
    net = PixelQNet(6, seed=0, with_decoder=True)
    x = _rng(0).random((3, 3, 32, 32))
    q, recon = net.forward_q_recon(x)
    assert q.shape == (3, 6)
    assert recon.shape == (3, 3, 32, 32)


def test_qnet_recon_requires_decoder():
    net = PixelQNet(6, seed=0)
    with pytest.raises(RuntimeError, match="decoder"):
        net.forward_q_recon(_rng(0).random((1, 3, 32, 32)))


def test_target_copy_is_deep():
    src = PixelQNet(5, seed=1)
    dst = PixelQNet(5, seed=2)
    dst.copy_q_params_from(src)
    for a, b in zip(dst.q_params, src.q_params):
        assert np.array_equal(a, b)
    src.q_params[0][...] += 1.0
    assert not np.array_equal(dst.q_params[0], src.q_params[0])


def test_merged_gradient_matches_finite_differences():
    rng = _rng(5)
    net = PixelQNet(6, seed=5, with_decoder=True)
    # nudge every parameter off exact zeros so the finite-difference probes
    # stay clear of piecewise-linear kinks
    for p in net.params:
        p += 1e-3 * rng.standard_normal(p.shape)
    x = rng.random((2, 3, 32, 32))
    wq = rng.standard_normal((2, 6))
    _, recon = net.forward_q_recon(x)
    wr = rng.standard_normal(recon.shape)

    def loss_fn():
        q, r = net.forward_q_recon(x)
        return float(np.sum(q * wq) + np.sum(r * wr))

    net.zero_grads()
    net.forward_q_recon(x)
    net.backward_q_recon(wq, wr)
    worst = finite_difference_check(
        loss_fn, net.params, net.grads, h=1e-5, max_checks_per_param=6,
        seed=1,
        region_fingerprint=lambda: relu_region_fingerprint(
            net.trunk, net.q_head, net.decoder))
    assert worst < 1e-4


def test_reconstruction_loss_decreases_on_fixed_data(clean_ds, table):
    items = demo_replay_items(clean_ds.trajectories[:2], table)
    bufs = SQILBuffers(len(items), len(items))
    for it in items:
        bufs.add_demo(it)
        bufs.add_online(it)
    config = SQILConfig(batch_size=16, seed=4)
    net = PixelQNet(table.n_entries, seed=4, with_decoder=True)
    target = PixelQNet(table.n_entries, seed=4)
    target.copy_q_params_from(net)
    opt = Adam(net.params, net.grads, lr=config.lr)
    rng = _rng(4)
    losses = np.empty(1000)
    for k in range(1000):
        _, losses[k] = sqil_update(net, target, opt, bufs, rng, config)
    blocks = losses.reshape(5, 200).mean(axis=1)
    assert np.all(np.diff(blocks) < 0), f"block means not decreasing: {blocks}"
    assert blocks[-1] < 0.5 * blocks[0]


def test_demo_items_chain_and_mark_terminals(clean_ds, table):
    trajs = [truncate_before_plank(t) for t in clean_ds.trajectories[:3]]
    items = demo_replay_items(trajs, table)
    assert len(items) == sum(len(t) for t in trajs)
    pos = 0
    for traj in trajs:
        n = len(traj.transitions)
        for t in range(n):
            item = items[pos]
            assert np.array_equal(item.pov_u8, traj.transitions[t].pov_u8)
            expected_next = traj.transitions[t + 1].pov_u8 if t + 1 < n \
                else traj.transitions[t].pov_u8
            assert np.array_equal(item.next_pov_u8, expected_next)
            assert item.done == (t + 1 == n)
            assert item.action_index == table.nearest_index(
                traj.transitions[t].action)
            pos += 1


# ---------------------------------------------------------------------------
# tree-chopping agent (soft-Q imitation with online interaction)

def test_choptree_act_returns_a_table_row(table):
    env = CraftWorld(EnvConfig())
    obs = env.reset(0, EnvVariant.TREE_CHOP)
    agent = ChopTreeAgent(PixelQNet(table.n_entries, seed=0), table)
    vec = agent.act(obs, _rng(0))
    assert any(np.array_equal(vec, row) for row in table.entries)
    # greedy index agrees with the argmax of the value row
    assert agent.act_index(obs, _rng(0)) == int(np.argmax(agent.q_values(obs)))
    # the sampled branch returns a valid index
    idx = agent.act_index(obs, _rng(0), greedy=False)
    assert 0 <= idx < table.n_entries


def _choptree_smoke_config():
    return SQILConfig(stage1_frames=40, stage2_frames=24, update_every=8,
                      batch_size=8, min_online=8, target_sync=5,
                      buffer_capacity=500, seed=3)


def test_choptree_training_consumes_exactly_its_frames(clean_ds, table):
    budget = FrameBudget(1000)
    tree_env = BudgetedEnv(CraftWorld(EnvConfig()), budget)
    chain_env = BudgetedEnv(CraftWorld(EnvConfig()), budget)
    demos = [truncate_before_plank(t) for t in clean_ds.trajectories[:3]]
    agent = train_choptree(tree_env, chain_env, demos, table,
                           _choptree_smoke_config())
    assert budget.used == 40 + 24
    obs = CraftWorld(EnvConfig()).reset(7, EnvVariant.TREE_CHOP)
    vec = agent.act(obs, _rng(1))
    assert any(np.array_equal(vec, row) for row in table.entries)


def test_choptree_stops_when_budget_runs_out(clean_ds, table):
    budget = FrameBudget(30)
    tree_env = BudgetedEnv(CraftWorld(EnvConfig()), budget)
    chain_env = BudgetedEnv(CraftWorld(EnvConfig()), budget)
    demos = [truncate_before_plank(t) for t in clean_ds.trajectories[:3]]
    agent = train_choptree(tree_env, chain_env, demos, table,
                           _choptree_smoke_config())
    assert budget.used == 30  # stopped mid-stage-1, stage 2 never started
    assert isinstance(agent, ChopTreeAgent)


# ---------------------------------------------------------------------------
# wooden-tool crafting agent (inventory-only classification)

def test_craft_wooden_holdout_accuracy(wooden_fit):
    _, metrics, _ = wooden_fit
    assert metrics["holdout_accuracy"] >= 0.90
    assert metrics["n_classes"] >= 2


def test_craft_wooden_ignores_the_image(wooden_fit, clean_ds):
    agent, _, _ = wooden_fit
    inv = clean_ds.trajectories[0].transitions[40].inv_obf
    rng = _rng(0)
    a = agent.act(SimpleNamespace(inv_obf=inv, pov=np.zeros((32, 32, 3))), rng)
    b = agent.act(SimpleNamespace(inv_obf=inv, pov=rng.random((32, 32, 3))), rng)
    assert np.array_equal(a, b)


def test_craft_wooden_act_is_an_exact_centroid(wooden_fit, clean_ds):
    agent, _, dp = wooden_fit
    for tr in clean_ds.trajectories[1].transitions[:25]:
        vec = agent.act(SimpleNamespace(inv_obf=tr.inv_obf), _rng(0))
        assert any(np.array_equal(vec, c) for c in dp.centroids)


def test_craft_wooden_predictions_decode_to_crafting(wooden_fit, clean_ds,
                                                     thresholds):
    agent, _, _ = wooden_fit
    held_out = generate_demos(8, seed=4321, noise_level=0.0)
    pairs = extract_critical_steps(held_out, phase_filter=2,
                                   thresholds=thresholds)
    assert len(pairs) >= 50
    codebook = clean_ds.codec.codebook
    hits = 0
    for inv, _ in pairs:
        vec = agent.act(SimpleNamespace(inv_obf=inv), _rng(0))
        name = Action(nearest_action(vec, codebook)).name
        hits += name.startswith(("CRAFT_", "PLACE_"))
    assert hits / len(pairs) >= 0.95


def test_craft_wooden_needs_two_classes(wooden_fit, clean_ds, thresholds):
    pairs = extract_critical_steps(clean_ds, phase_filter=2,
                                   thresholds=thresholds)
    one_class = SimpleNamespace(centroids=np.zeros((1, 64)))
    with pytest.raises(DegenerateDataError, match="2 action classes"):
        train_craft_wooden(pairs, one_class)


def test_craft_wooden_needs_pairs():
    two_class = SimpleNamespace(centroids=np.zeros((2, 64)))
    with pytest.raises(DegenerateDataError, match="no critical pairs"):
        train_craft_wooden([], two_class)


# ---------------------------------------------------------------------------
# margin objective: best competitor plus margin, minus the demo action

MARGIN_CASES = [
    ([0.5, 0.2, 0.1], 0, 0.2, -0.1),
    ([0.1, 0.5], 0, 0.1, 0.5),
    ([1.0, 1.0, 1.0], 2, 0.0, 0.0),
    ([-5.0, 5.0], 0, 1.0, 11.0),
    ([10.0, -10.0], 0, 5.0, -15.0),
    ([100.0, 99.5], 0, 0.8, 0.3),
    ([0.0, 1.0, 2.0, 3.0], 3, 0.5, -0.5),
    ([0.0, 0.0], 0, 0.8, 0.8),
    ([0.0, 0.0], 1, 0.8, 0.8),
    ([2.0, 1.0, 0.0], 1, 0.3, 1.3),
    ([-1.0, -2.0, -3.0], 0, 0.0, -1.0),
    ([-1.0, -2.0, -3.0], 2, 0.1, 2.1),
    ([0.5, 0.5, 0.4], 0, 0.2, 0.2),
    ([1e3, -1e3], 1, 0.8, 2000.8),
    ([7.0, 7.0, 7.0, 7.0], 0, 1.5, 1.5),
    ([3.0, 4.0, 5.0, 6.0, 7.0], 2, 0.8, 2.8),
    ([-0.5, 0.5, 1.5], 1, 0.75, 1.75),
    ([0.9, 0.1, 0.8], 0, 0.8, 0.7),
    ([-10.0, -20.0], 0, 0.8, -9.2),
    ([6.0, 5.0, 4.0, 3.0, 2.0, 1.0], 5, 2.0, 7.0),
    ([0.0, 0.8], 1, 0.8, 0.0),
    ([1.5, 2.5, 3.5], 0, 1.0, 3.0),
]


@pytest.mark.parametrize("q,a_d,margin,expected", MARGIN_CASES)
def test_margin_objective_frozen_cases(q, a_d, margin, expected):
    assert larmi_loss(np.array(q), a_d, margin) == pytest.approx(expected,
                                                                 abs=1e-9)


def test_margin_objective_validation():
    with pytest.raises(ValueError, match="two action"):
        larmi_loss(np.array([1.0]), 0, 0.5)
    with pytest.raises(ValueError, match="out of range"):
        larmi_loss(np.array([1.0, 2.0]), 2, 0.5)
    with pytest.raises(ValueError, match="out of range"):
        larmi_loss(np.array([1.0, 2.0]), -1, 0.5)


def test_margin_objective_translation_invariance():
    rng = _rng(9)
    for _ in range(1000):
        n = int(rng.integers(2, 12))
        q = rng.standard_normal(n) * 10
        a_d = int(rng.integers(n))
        margin = float(rng.random())
        shift = float(rng.standard_normal() * 100)
        base = larmi_loss(q, a_d, margin)
        assert larmi_loss(q + shift, a_d, margin) == pytest.approx(base,
                                                                   abs=1e-9)


def test_nonpositive_objective_implies_demo_argmax():
    rng = _rng(10)
    seen_nonpositive = 0
    for _ in range(2000):
        q = rng.standard_normal(6)
        a_d = int(rng.integers(6))
        if larmi_loss(q, a_d, 0.3) <= 0:
            seen_nonpositive += 1
            assert int(np.argmax(q)) == a_d
    assert seen_nonpositive > 50  # the property was actually exercised


def test_batch_loss_is_mean_of_per_row_hinges():
    rng = _rng(11)
    q = rng.standard_normal((16, 7))
    a_d = rng.integers(7, size=16)
    loss, _ = larmi_batch_loss(q, a_d, margin=0.4)
    per_row = [max(0.0, larmi_loss(q[i], int(a_d[i]), 0.4)) for i in range(16)]
    assert loss == pytest.approx(np.mean(per_row), abs=1e-12)


def test_batch_subgradient_hand_case():
    q = np.array([[1.0, 3.0, 2.0],
                  [5.0, 1.0, 0.0]])
    a_d = np.array([0, 0])
    loss, grad = larmi_batch_loss(q, a_d, margin=0.5)
    # row 0: best other is 3.0 at col 1, hinge = 3.0 + 0.5 - 1.0 = 2.5
    # row 1: best other is 1.0, hinge = 1.0 + 0.5 - 5.0 < 0 -> inactive
    assert loss == pytest.approx(1.25, abs=1e-12)
    expected = np.array([[-0.5, 0.5, 0.0],
                         [0.0, 0.0, 0.0]])
    assert np.allclose(grad, expected)


def test_batch_competitor_tie_takes_lowest_index():
    q = np.array([[1.0, 5.0, 5.0]])
    a_d = np.array([0])
    loss, grad = larmi_batch_loss(q, a_d, margin=0.1)
    assert loss == pytest.approx(5.0 + 0.1 - 1.0, abs=1e-12)
    assert grad[0, 1] == pytest.approx(1.0)
    assert grad[0, 2] == 0.0


# ---------------------------------------------------------------------------
# stone-digging agent (offline margin imitation on pixels)

def test_digstone_agreement_and_margin_on_demos(digstone_fit):
    _, metrics, _ = digstone_fit
    assert metrics["argmax_agreement"] >= 0.95
    assert metrics["margin_satisfied"] >= 0.90


def test_digstone_act_is_a_table_row(digstone_fit, table):
    agent, _, trans = digstone_fit
    for tr in trans[:20]:
        obs = SimpleNamespace(pov=tr.pov_u8.astype(np.float64) / 255.0)
        vec = agent.act(obs, _rng(0))
        assert any(np.array_equal(vec, row) for row in table.entries)


def test_digstone_needs_data(table):
    with pytest.raises(DegenerateDataError, match="no phase transitions"):
        train_digstone([], table)


# ---------------------------------------------------------------------------
# stone-tool crafting agent (uniform over its cluster set)

def test_craftstone_selection_is_uniform():
    centroids = np.arange(4 * 64, dtype=np.float64).reshape(4, 64)
    agent = craftstone_policy(centroids)
    rng = _rng(12)
    obs = SimpleNamespace()
    counts = np.zeros(4)
    n = 10_000
    for _ in range(n):
        vec = agent.act(obs, rng)
        counts[int(vec[0]) // 64] += 1
    expected = n / 4
    sigma = np.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - expected) <= 3 * sigma), counts


def test_craftstone_act_is_an_exact_centroid():
    centroids = _rng(3).standard_normal((5, 64))
    agent = craftstone_policy(centroids)
    for _ in range(50):
        vec = agent.act(SimpleNamespace(), _rng(4))
        assert any(np.array_equal(vec, c) for c in centroids)


def test_craftstone_rejects_empty_cluster_set():
    with pytest.raises(DegenerateDataError, match="empty cluster set"):
        craftstone_policy(np.zeros((0, 64)))
    with pytest.raises(DegenerateDataError):
        craftstone_policy(np.zeros(64))


def test_craftstone_finishes_the_stone_tier_in_rollouts():
    """Handed control at the stone-crafting phase with resources banked, the
    uniform policy crafts both the stone pickaxe and the furnace within 200
    steps in at least 80% of episodes, in no fixed order."""
    ds = generate_demos(100, seed=3100, noise_level=0.0)
    th = compute_thresholds(ds)
    phase4 = phase_transitions(ds, 4, th)
    dp = dp_cluster_fit(np.stack([tr.action for tr in phase4]),
                        penalty=_phase_penalty(ds))
    agent = craftstone_policy(dp.centroids)

    env = CraftWorld(EnvConfig())
    rng = _rng(77)
    successes, attempts = 0, 0
    orders = set()
    for traj in ds.trajectories:
        labels = label_episode(traj, th)
        start = np.nonzero(labels == 4)[0]
        if len(start) == 0:
            continue
        attempts += 1
        obs = env.reset(traj.seed, traj.variant)
        for tr in traj.transitions[:start[0]]:
            obs = env.step(tr.action).obs
        sp_at = fur_at = None
        for k in range(200):
            res = env.step(agent.act(obs, rng))
            obs = res.obs
            # the info lists every milestone reached so far; record firsts
            if sp_at is None and ItemId.STONE_PICKAXE in res.info["milestones"]:
                sp_at = k
            if fur_at is None and ItemId.FURNACE in res.info["milestones"]:
                fur_at = k
            if (sp_at is not None and fur_at is not None) or res.done:
                break
        if sp_at is not None and fur_at is not None:
            successes += 1
            orders.add("pickaxe_first" if sp_at < fur_at else "furnace_first")
    assert attempts >= 90
    assert successes / attempts >= 0.80
    assert orders == {"pickaxe_first", "furnace_first"}


# ---------------------------------------------------------------------------
# exploration schedule and the random-search agent

def test_schedule_endpoints_and_midpoint():
    sched = ExplorationSchedule(start=0.2, end=1.0, ramp_steps=500)
    assert sched.epsilon(0) == 0.2
    assert sched.epsilon(250) == pytest.approx(0.6, abs=1e-12)
    assert sched.epsilon(500) == 1.0


def test_schedule_saturates_after_the_ramp():
    sched = ExplorationSchedule(start=0.2, end=1.0, ramp_steps=500)
    assert sched.epsilon(501) == 1.0
    assert sched.epsilon(10**9) == 1.0
    flat = ExplorationSchedule(start=0.3, end=0.3, ramp_steps=0)
    assert flat.epsilon(0) == 0.3


def test_schedule_validation():
    with pytest.raises(ValueError):
        ExplorationSchedule(start=0.5, end=0.2, ramp_steps=10)
    with pytest.raises(ValueError):
        ExplorationSchedule(start=-0.1, end=1.0, ramp_steps=10)
    with pytest.raises(ValueError):
        ExplorationSchedule(start=0.0, end=1.5, ramp_steps=10)
    with pytest.raises(ValueError):
        ExplorationSchedule(start=0.0, end=1.0, ramp_steps=-1)


class _SequencePolicy(Policy):
    """Stub base policy emitting a distinct marker vector per call."""
    kind = AgentKind.DIG_STONE

    def __init__(self):
        self.calls = 0

    def act(self, obs, rng):
        self.calls += 1
        return np.full(64, float(self.calls))


class _ExplodingPolicy(Policy):
    kind = AgentKind.DIG_STONE

    def act(self, obs, rng):
        raise AssertionError("base policy must not be consulted")


def test_random_search_with_zero_exploration_matches_base(table):
    sched = ExplorationSchedule(start=0.0, end=0.0, ramp_steps=0)
    base = _SequencePolicy()
    mirror = _SequencePolicy()
    agent = random_search_policy(base, table, sched)
    obs = SimpleNamespace()
    rng = _rng(0)
    for _ in range(100):
        assert np.array_equal(agent.act(obs, rng), mirror.act(obs, rng))


def test_random_search_fully_random_never_consults_base(table):
    sched = ExplorationSchedule(start=1.0, end=1.0, ramp_steps=0)
    agent = random_search_policy(_ExplodingPolicy(), table, sched)
    obs = SimpleNamespace()
    rng = _rng(1)
    for _ in range(200):
        vec = agent.act(obs, rng)
        assert any(np.array_equal(vec, row) for row in table.entries)


def test_random_search_mixing_fraction_mid_ramp(table):
    """On a 0 -> 1 ramp over 1000 steps, the random fraction observed over
    steps 450..550 lands near one half."""
    sched = ExplorationSchedule(start=0.0, end=1.0, ramp_steps=1000)
    base = _SequencePolicy()
    agent = random_search_policy(base, table, sched)
    rng = _rng(2)
    obs = SimpleNamespace()
    random_picks, total = 0, 0
    for _ in range(10_000):
        agent.enter_phase()
        agent._t = 450
        before = base.calls
        for _ in range(101):
            agent.act(obs, rng)
        delegated = base.calls - before
        random_picks += 101 - delegated
        total += 101
    assert 0.45 <= random_picks / total <= 0.55


def test_random_search_phase_entry_resets_the_ramp(table):
    sched = ExplorationSchedule(start=0.0, end=1.0, ramp_steps=100)
    base = _SequencePolicy()
    agent = random_search_policy(base, table, sched)
    obs = SimpleNamespace()
    rng = _rng(3)
    for _ in range(150):
        agent.act(obs, rng)
    assert agent._t == 150
    agent.enter_phase()
    assert agent._t == 0
    # at t=0 the ramp starts at zero randomness: first act always delegates
    before = base.calls
    agent.act(obs, rng)
    assert base.calls == before + 1


# ---------------------------------------------------------------------------
# flat behavior-cloning baseline

def test_flat_bc_smoke_and_table_membership(clean_ds, table):
    ds = SimpleNamespace(trajectories=clean_ds.trajectories[:1])
    agent = train_flat_bc(ds, table, FlatBCConfig(max_updates=3, batch_size=8,
                                                  seed=0))
    obs = CraftWorld(EnvConfig()).reset(5, EnvVariant.TREE_CHOP)
    vec = agent.act(obs, _rng(0))
    assert any(np.array_equal(vec, row) for row in table.entries)
