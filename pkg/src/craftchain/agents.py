"""The five subtask policies and their trainers.

Chain order: ChopTree (soft-Q imitation with online interaction),
CraftWoodenPickaxe (inventory-only behavior cloning over clustered critical
actions), DigStone (offline large-margin imitation on pixels),
CraftStonePickaxe (uniform choice among its phase's critical-action
centroids), RandomSearch (DigStone blended with an exploration ramp).

Every policy's act() returns one of its permitted 64-dim vectors (an action
table row or a cluster centroid), never an arbitrary point. Only the ChopTree
trainer touches an environment, and only through a budget-metered wrapper.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .discretize import ActionTable
from .errors import BudgetExhausted, DegenerateDataError
from .nn import (
    Adam,
    Conv2d,
    ConvTranspose2d,
    Dense,
    DuelingHead,
    Flatten,
    ReLU,
    Sequential,
    cross_entropy_loss,
    logsumexp,
    softmax,
)

POV_CHANNELS = 3


class AgentKind(IntEnum):
    CHOP_TREE = 1
    CRAFT_WOODEN_PICKAXE = 2
    DIG_STONE = 3
    CRAFT_STONE_PICKAXE = 4
    RANDOM_SEARCH = 5


def _pov_to_net_input(pov: np.ndarray) -> np.ndarray:
    """(P, P, 3) float imagery -> (1, 3, P, P) batch."""
    return pov.transpose(2, 0, 1)[None, :, :, :]


def _pov_batch(pov_u8: np.ndarray) -> np.ndarray:
    """(B, P, P, 3) uint8 -> (B, 3, P, P) float64 in [0, 1]."""
    return pov_u8.astype(np.float64).transpose(0, 3, 1, 2) / 255.0


class Policy:
    """Base policy protocol: act() plus a phase-entry notification."""

    kind: AgentKind

    def act(self, obs, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def enter_phase(self) -> None:
        pass


# ---------------------------------------------------------------------------
# replay storage and soft-Q machinery

@dataclass
class ReplayItem:
    pov_u8: np.ndarray        # (P, P, 3) uint8 state
    action_index: int         # row of the action table
    reward: float
    next_pov_u8: np.ndarray
    done: bool


def sqil_relabel(item: ReplayItem, source: str,
                 demo_reward: float = 1.0, online_reward: float = 0.0) -> ReplayItem:
    """Replace the env reward with the source-determined constant."""
    if source not in ("demo", "online"):
        raise ValueError(f"unknown source {source!r}")
    reward = demo_reward if source == "demo" else online_reward
    return ReplayItem(pov_u8=item.pov_u8, action_index=item.action_index,
                      reward=reward, next_pov_u8=item.next_pov_u8, done=item.done)


class ReplayBuffer:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[ReplayItem] = []
        self._next = 0

    def add(self, item: ReplayItem) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
            self._next = (self._next + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def sample(self, rng: np.random.Generator, n: int) -> list[ReplayItem]:
        if not self._items:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(len(self._items), size=n)
        return [self._items[i] for i in idx]


class SQILBuffers:
    """Paired demo/online buffers; batches are drawn half and half."""

    def __init__(self, demo_capacity: int, online_capacity: int,
                 demo_reward: float = 1.0, online_reward: float = 0.0,
                 demo_fraction: float = 0.5):
        if not 0.0 < demo_fraction < 1.0:
            raise ValueError("demo_fraction must be strictly between 0 and 1")
        self.demo = ReplayBuffer(demo_capacity)
        self.online = ReplayBuffer(online_capacity)
        self.demo_reward = demo_reward
        self.online_reward = online_reward
        self.demo_fraction = demo_fraction

    def add_demo(self, item: ReplayItem) -> None:
        self.demo.add(sqil_relabel(item, "demo", self.demo_reward,
                                   self.online_reward))

    def add_online(self, item: ReplayItem) -> None:
        self.online.add(sqil_relabel(item, "online", self.demo_reward,
                                     self.online_reward))

    def sample_batch(self, rng: np.random.Generator, batch_size: int) -> list[ReplayItem]:
        if len(self.demo) == 0 or len(self.online) == 0:
            raise ValueError("both buffers must be non-empty to sample")
        n_demo = int(round(batch_size * self.demo_fraction))
        n_online = batch_size - n_demo
        return self.demo.sample(rng, n_demo) + self.online.sample(rng, n_online)


def soft_q_targets(q_next: np.ndarray, rewards: np.ndarray, dones: np.ndarray,
                   gamma: float, alpha: float) -> np.ndarray:
    """Soft Bellman backup: r + gamma * alpha * log sum_a exp(Q(s',a)/alpha).

    Terminal transitions bootstrap nothing and return exactly r.
    """
    q_next = np.asarray(q_next, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    soft_value = alpha * logsumexp(q_next / alpha, axis=1)
    return np.where(dones, rewards, rewards + gamma * soft_value)


# ---------------------------------------------------------------------------
# pixel Q network (shared by ChopTree and DigStone)

class PixelQNet:
    """Three conv layers, two dense layers, dueling output.

    With `with_decoder`, a mirrored transposed-conv branch reconstructs the
    input image from the conv features for an auxiliary loss; both branches
    share the conv trunk, and backward() merges their gradients there.
    """

    def __init__(self, n_actions: int, seed: int, pov_size: int = 32,
                 with_decoder: bool = False):
        if pov_size != 32:
            raise ValueError("the pixel net is laid out for 32x32 input")
        rng = np.random.Generator(np.random.PCG64(seed))
        self.n_actions = n_actions
        self.trunk = Sequential([
            Conv2d(POV_CHANNELS, 16, kernel=5, stride=2, rng=rng),
            ReLU(),
            Conv2d(16, 32, kernel=3, stride=2, rng=rng),
            ReLU(),
            Conv2d(32, 32, kernel=3, stride=1, rng=rng),
            ReLU(),
        ])
        self.q_head = Sequential([
            Flatten(),
            Dense(32 * 4 * 4, 256, rng=rng),
            ReLU(),
            DuelingHead(256, n_actions, rng=rng),
        ])
        self.decoder = None
        if with_decoder:
            self.decoder = Sequential([
                ConvTranspose2d(32, 32, kernel=3, stride=1, rng=rng),
                ReLU(),
                ConvTranspose2d(32, 16, kernel=3, stride=2, rng=rng,
                                output_padding=1),
                ReLU(),
                ConvTranspose2d(16, POV_CHANNELS, kernel=5, stride=2, rng=rng,
                                output_padding=1),
            ])

    @property
    def params(self) -> list[np.ndarray]:
        out = self.trunk.params + self.q_head.params
        if self.decoder is not None:
            out = out + self.decoder.params
        return out

    @property
    def grads(self) -> list[np.ndarray]:
        out = self.trunk.grads + self.q_head.grads
        if self.decoder is not None:
            out = out + self.decoder.grads
        return out

    @property
    def q_params(self) -> list[np.ndarray]:
        return self.trunk.params + self.q_head.params

    def zero_grads(self) -> None:
        self.trunk.zero_grads()
        self.q_head.zero_grads()
        if self.decoder is not None:
            self.decoder.zero_grads()

    def forward_q(self, x: np.ndarray) -> np.ndarray:
        return self.q_head.forward(self.trunk.forward(x))

    def forward_q_recon(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.decoder is None:
            raise RuntimeError("net was built without a decoder")
        feats = self.trunk.forward(x)
        return self.q_head.forward(feats), self.decoder.forward(feats)

    def backward_q(self, dq: np.ndarray) -> np.ndarray:
        return self.trunk.backward(self.q_head.backward(dq))

    def backward_q_recon(self, dq: np.ndarray, drecon: np.ndarray) -> np.ndarray:
        dfeats = self.q_head.backward(dq) + self.decoder.backward(drecon)
        return self.trunk.backward(dfeats)

    def copy_q_params_from(self, other: "PixelQNet") -> None:
        for dst, src in zip(self.q_params, other.q_params):
            dst[...] = src


# ---------------------------------------------------------------------------
# ChopTree: soft-Q imitation with budgeted online interaction

@dataclass
class SQILConfig:
    stage1_frames: int = 10_000
    stage2_frames: int = 6_000
    update_every: int = 4
    batch_size: int = 32
    lr: float = 1e-3
    gamma: float = 0.99
    alpha: float = 1.0          # soft-Q temperature
    beta: float = 0.1           # reconstruction loss weight
    target_sync: int = 500      # updates between target network syncs
    buffer_capacity: int = 20_000
    min_online: int = 256       # warmup transitions before updates start
    demo_reward: float = 1.0
    online_reward: float = 0.0
    seed: int = 0


class ChopTreeAgent(Policy):
    kind = AgentKind.CHOP_TREE

    def __init__(self, net: PixelQNet, table: ActionTable, alpha: float = 1.0):
        self.net = net
        self.table = table
        self.alpha = alpha

    def q_values(self, obs) -> np.ndarray:
        return self.net.forward_q(_pov_to_net_input(obs.pov))[0]

    def act_index(self, obs, rng: np.random.Generator, greedy: bool = True) -> int:
        q = self.q_values(obs)
        if greedy:
            return int(np.argmax(q))
        probs = softmax(q[None, :] / self.alpha, axis=1)[0]
        return int(rng.choice(len(probs), p=probs))

    def act(self, obs, rng: np.random.Generator) -> np.ndarray:
        return self.table.vector(self.act_index(obs, rng, greedy=True))


def demo_replay_items(trajectories, table: ActionTable) -> list[ReplayItem]:
    """Consecutive (s, a, s') pairs from trajectories, actions snapped to the
    table. The final transition of each trajectory is marked terminal so the
    backup never bootstraps across a truncation cut."""
    items = []
    for traj in trajectories:
        n = len(traj.transitions)
        for t, tr in enumerate(traj.transitions):
            next_pov = traj.transitions[t + 1].pov_u8 if t + 1 < n else tr.pov_u8
            items.append(ReplayItem(
                pov_u8=tr.pov_u8,
                action_index=table.nearest_index(tr.action),
                reward=float(tr.reward_dense),
                next_pov_u8=next_pov,
                done=t + 1 == n,
            ))
    return items


def sqil_update(net: PixelQNet, target_net: PixelQNet, opt: Adam,
                buffers: SQILBuffers, rng: np.random.Generator,
                config: SQILConfig) -> tuple[float, float]:
    """One gradient step on soft-Bellman residual + weighted reconstruction.

    Returns (q_loss, recon_loss).
    """
    batch = buffers.sample_batch(rng, config.batch_size)
    x = _pov_batch(np.stack([it.pov_u8 for it in batch]))
    x_next = _pov_batch(np.stack([it.next_pov_u8 for it in batch]))
    actions = np.array([it.action_index for it in batch], dtype=np.int64)
    rewards = np.array([it.reward for it in batch], dtype=np.float64)
    dones = np.array([it.done for it in batch], dtype=bool)

    q_next = target_net.forward_q(x_next)
    targets = soft_q_targets(q_next, rewards, dones, config.gamma, config.alpha)

    q, recon = net.forward_q_recon(x)
    b = len(batch)
    picked = q[np.arange(b), actions]
    q_loss = float(np.mean((picked - targets) ** 2))
    dq = np.zeros_like(q)
    dq[np.arange(b), actions] = 2.0 * (picked - targets) / b

    rdiff = recon - x
    recon_loss = float(np.mean(rdiff * rdiff))
    drecon = config.beta * 2.0 * rdiff / rdiff.size

    net.zero_grads()
    net.backward_q_recon(dq, drecon)
    opt.step()
    return q_loss, recon_loss


def _run_sqil_stage(env, variant, net, target_net, opt, buffers,
                    config: SQILConfig, table: ActionTable, stage_frames: int,
                    rng: np.random.Generator, seed_base: int,
                    update_counter: list[int]) -> bool:
    """Roll out and train until the stage frame quota or the global budget
    runs out. Returns True if interrupted by budget exhaustion."""
    agent = ChopTreeAgent(net, table, alpha=config.alpha)
    episode = 0
    obs = env.reset(seed_base + episode, variant)
    frames = 0
    while frames < stage_frames:
        a_idx = agent.act_index(obs, rng, greedy=False)
        prev_pov = np.round(obs.pov * 255.0).astype(np.uint8)
        try:
            res = env.step(table.vector(a_idx))
        except BudgetExhausted:
            return True
        next_pov = np.round(res.obs.pov * 255.0).astype(np.uint8)
        buffers.add_online(ReplayItem(prev_pov, a_idx, 0.0, next_pov, res.done))
        frames += 1
        if res.done:
            episode += 1
            obs = env.reset(seed_base + episode, variant)
        else:
            obs = res.obs
        if len(buffers.online) >= config.min_online and \
                frames % config.update_every == 0:
            sqil_update(net, target_net, opt, buffers, rng, config)
            update_counter[0] += 1
            if update_counter[0] % config.target_sync == 0:
                target_net.copy_q_params_from(net)
    return False


def train_choptree(treechop_env, obtain_env, demos_truncated,
                   table: ActionTable, config: SQILConfig) -> ChopTreeAgent:
    """Two-stage soft-Q imitation: tree-only env first, then the full chain.

    Both envs must be budget-wrapped; on budget exhaustion training stops
    with whatever has been learned so far.
    """
    from .env import EnvVariant

    net = PixelQNet(table.n_entries, seed=config.seed, with_decoder=True)
    target_net = PixelQNet(table.n_entries, seed=config.seed)
    target_net.copy_q_params_from(net)
    opt = Adam(net.params, net.grads, lr=config.lr)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(
        (config.seed, 11))))

    buffers = SQILBuffers(config.buffer_capacity, config.buffer_capacity,
                          config.demo_reward, config.online_reward)
    for item in demo_replay_items(demos_truncated, table):
        buffers.add_demo(item)
    if len(buffers.demo) == 0:
        raise DegenerateDataError("no demo transitions for soft-Q imitation")

    update_counter = [0]
    interrupted = _run_sqil_stage(
        treechop_env, EnvVariant.TREE_CHOP, net, target_net, opt, buffers,
        config, table, config.stage1_frames, rng,
        seed_base=config.seed * 1_000 + 1, update_counter=update_counter)
    if not interrupted:
        # stage 2: fresh online experience from the full-chain environment
        buffers.online = ReplayBuffer(config.buffer_capacity)
        _run_sqil_stage(
            obtain_env, EnvVariant.OBTAIN_CHAIN_SPARSE, net, target_net, opt,
            buffers, config, table, config.stage2_frames, rng,
            seed_base=config.seed * 1_000 + 500_001,
            update_counter=update_counter)
    return ChopTreeAgent(net, table, alpha=config.alpha)


# ---------------------------------------------------------------------------
# CraftWoodenPickaxe: inventory-only behavior cloning over cluster classes

@dataclass
class BCConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    hidden: int = 64
    holdout_fraction: float = 0.1
    seed: int = 0


class CraftWoodenAgent(Policy):
    kind = AgentKind.CRAFT_WOODEN_PICKAXE

    def __init__(self, net: Sequential, centroids: np.ndarray):
        self.net = net
        self.centroids = centroids

    def act(self, obs, rng: np.random.Generator) -> np.ndarray:
        logits = self.net.forward(obs.inv_obf[None, :])
        return self.centroids[int(np.argmax(logits[0]))]


def train_craft_wooden(critical_pairs, dp_model,
                       config: BCConfig | None = None) -> tuple[CraftWoodenAgent, dict]:
    """Classify obfuscated inventory -> critical-action cluster.

    `critical_pairs` are (inventory vector, action vector) tuples for this
    phase; `dp_model` is the clustering fit over those same action vectors,
    whose centroids become the class set. Returns (agent, metrics).
    """
    config = config or BCConfig()
    centroids = np.asarray(dp_model.centroids, dtype=np.float64)
    n_classes = centroids.shape[0]
    if n_classes < 2:
        raise DegenerateDataError(
            f"behavior cloning needs at least 2 action classes, got {n_classes}")
    if not critical_pairs:
        raise DegenerateDataError("no critical pairs to train on")

    X = np.stack([inv for inv, _ in critical_pairs])
    acts = np.stack([a for _, a in critical_pairs])
    # nearest centroid as the class label
    d2 = ((acts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    y = d2.argmin(axis=1)

    rng = np.random.Generator(np.random.PCG64(config.seed))
    order = rng.permutation(len(X))
    n_hold = max(1, int(len(X) * config.holdout_fraction))
    hold, train = order[:n_hold], order[n_hold:]
    if len(train) == 0:
        raise DegenerateDataError("holdout split left no training pairs")

    net = Sequential([
        Dense(X.shape[1], config.hidden, rng=rng),
        ReLU(),
        Dense(config.hidden, config.hidden, rng=rng),
        ReLU(),
        Dense(config.hidden, n_classes, rng=rng),
    ])
    opt = Adam(net.params, net.grads, lr=config.lr)
    for _ in range(config.epochs):
        perm = rng.permutation(len(train))
        for lo in range(0, len(perm), config.batch_size):
            idx = train[perm[lo:lo + config.batch_size]]
            logits = net.forward(X[idx])
            _, grad = cross_entropy_loss(logits, y[idx])
            net.zero_grads()
            net.backward(grad)
            opt.step()

    def accuracy(idx):
        pred = net.forward(X[idx]).argmax(axis=1)
        return float(np.mean(pred == y[idx]))

    metrics = {
        "train_accuracy": accuracy(train),
        "holdout_accuracy": accuracy(hold),
        "n_classes": n_classes,
        "n_pairs": len(X),
    }
    return CraftWoodenAgent(net, centroids), metrics


# ---------------------------------------------------------------------------
# DigStone: offline large-margin imitation on pixels

@dataclass
class LarMIConfig:
    margin: float = 0.8
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0


def larmi_loss(q_row: np.ndarray, a_d: int, margin: float) -> float:
    """Margin objective for one state:
    J = max over a != a_D of (Q[a] + T) minus Q[a_D]."""
    q_row = np.asarray(q_row, dtype=np.float64)
    if q_row.ndim != 1 or q_row.size < 2:
        raise ValueError("need at least two action values")
    if not 0 <= a_d < q_row.size:
        raise ValueError(f"demo action {a_d} out of range")
    others = np.delete(q_row, a_d)
    return float(np.max(others) + margin - q_row[a_d])


def larmi_batch_loss(q: np.ndarray, a_d: np.ndarray,
                     margin: float) -> tuple[float, np.ndarray]:
    """Mean hinge max(0, J) over a batch, with its subgradient wrt q."""
    b, n = q.shape
    rows = np.arange(b)
    masked = q.copy()
    masked[rows, a_d] = -np.inf
    best_other = masked.argmax(axis=1)
    j = masked[rows, best_other] + margin - q[rows, a_d]
    active = j > 0
    loss = float(np.mean(np.maximum(j, 0.0)))
    grad = np.zeros_like(q)
    grad[rows[active], best_other[active]] += 1.0 / b
    grad[rows[active], a_d[active]] -= 1.0 / b
    return loss, grad


class DigStoneAgent(Policy):
    kind = AgentKind.DIG_STONE

    def __init__(self, net: PixelQNet, table: ActionTable):
        self.net = net
        self.table = table

    def act_index(self, obs) -> int:
        q = self.net.forward_q(_pov_to_net_input(obs.pov))[0]
        return int(np.argmax(q))

    def act(self, obs, rng: np.random.Generator) -> np.ndarray:
        return self.table.vector(self.act_index(obs))


def train_digstone(transitions, table: ActionTable,
                   config: LarMIConfig | None = None) -> tuple[DigStoneAgent, dict]:
    """Fit relative action values to demo pairs with a margin; no env steps.

    `transitions` are the recorded steps of this agent's phase; actions are
    snapped to nearest table rows as the imitation targets.
    """
    config = config or LarMIConfig()
    if not transitions:
        raise DegenerateDataError("no phase transitions to imitate")
    pov = np.stack([tr.pov_u8 for tr in transitions])
    y = np.array([table.nearest_index(tr.action) for tr in transitions],
                 dtype=np.int64)

    rng = np.random.Generator(np.random.PCG64(config.seed))
    net = PixelQNet(table.n_entries, seed=config.seed)
    opt = Adam(net.params, net.grads, lr=config.lr)
    n = len(transitions)
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            x = _pov_batch(pov[idx])
            q = net.forward_q(x)
            _, grad = larmi_batch_loss(q, y[idx], config.margin)
            net.zero_grads()
            net.backward_q(grad)
            opt.step()

    agreement = 0
    satisfied = 0
    for lo in range(0, n, 256):
        x = _pov_batch(pov[lo:lo + 256])
        q = net.forward_q(x)
        yy = y[lo:lo + 256]
        agreement += int(np.sum(q.argmax(axis=1) == yy))
        rows = np.arange(len(yy))
        masked = q.copy()
        masked[rows, yy] = -np.inf
        j = masked.max(axis=1) + config.margin - q[rows, yy]
        satisfied += int(np.sum(j <= 0))
    metrics = {
        "argmax_agreement": agreement / n,
        "margin_satisfied": satisfied / n,
        "n_pairs": n,
    }
    return DigStoneAgent(net, table), metrics


# ---------------------------------------------------------------------------
# CraftStonePickaxe: uniform choice among this phase's action centroids

class CraftStoneAgent(Policy):
    kind = AgentKind.CRAFT_STONE_PICKAXE

    def __init__(self, centroids: np.ndarray):
        centroids = np.asarray(centroids, dtype=np.float64)
        if centroids.ndim != 2 or centroids.shape[0] == 0:
            raise DegenerateDataError("empty cluster set for the crafting policy")
        self.centroids = centroids

    def act(self, obs, rng: np.random.Generator) -> np.ndarray:
        return self.centroids[int(rng.integers(self.centroids.shape[0]))]


def craftstone_policy(centroids: np.ndarray) -> CraftStoneAgent:
    return CraftStoneAgent(centroids)


# ---------------------------------------------------------------------------
# RandomSearch: DigStone blended with a rising exploration threshold

@dataclass
class ExplorationSchedule:
    start: float = 0.2
    end: float = 1.0
    ramp_steps: int = 500

    def __post_init__(self):
        if not (0.0 <= self.start <= 1.0 and 0.0 <= self.end <= 1.0):
            raise ValueError("exploration bounds must be within [0, 1]")
        if self.end < self.start:
            raise ValueError("schedule must be non-decreasing")
        if self.ramp_steps < 0:
            raise ValueError("ramp_steps must be nonnegative")

    def epsilon(self, t: int) -> float:
        if self.ramp_steps == 0 or t >= self.ramp_steps:
            return self.end
        return self.start + (self.end - self.start) * (t / self.ramp_steps)


class RandomSearchAgent(Policy):
    kind = AgentKind.RANDOM_SEARCH

    def __init__(self, digstone: Policy, table: ActionTable,
                 schedule: ExplorationSchedule):
        self.digstone = digstone
        self.table = table
        self.schedule = schedule
        self._t = 0

    def enter_phase(self) -> None:
        self._t = 0

    def act(self, obs, rng: np.random.Generator) -> np.ndarray:
        eps = self.schedule.epsilon(self._t)
        self._t += 1
        if rng.random() < eps:
            return self.table.vector(int(rng.integers(self.table.n_entries)))
        return self.digstone.act(obs, rng)


def random_search_policy(digstone: Policy, table: ActionTable,
                         schedule: ExplorationSchedule) -> RandomSearchAgent:
    return RandomSearchAgent(digstone, table, schedule)


# ---------------------------------------------------------------------------
# flat behavior-cloning baseline: one net for the whole task

class FlatBCNet:
    """Conv trunk on pixels concatenated with an inventory branch."""

    def __init__(self, n_actions: int, inv_dim: int, seed: int):
        rng = np.random.Generator(np.random.PCG64(seed))
        self.trunk = Sequential([
            Conv2d(POV_CHANNELS, 16, kernel=5, stride=2, rng=rng),
            ReLU(),
            Conv2d(16, 32, kernel=3, stride=2, rng=rng),
            ReLU(),
            Conv2d(32, 32, kernel=3, stride=1, rng=rng),
            ReLU(),
            Flatten(),
        ])
        self.inv_branch = Sequential([Dense(inv_dim, 64, rng=rng), ReLU()])
        self.head = Sequential([
            Dense(32 * 4 * 4 + 64, 256, rng=rng),
            ReLU(),
            Dense(256, n_actions, rng=rng),
        ])
        self._split = None

    @property
    def params(self):
        return self.trunk.params + self.inv_branch.params + self.head.params

    @property
    def grads(self):
        return self.trunk.grads + self.inv_branch.grads + self.head.grads

    def zero_grads(self):
        self.trunk.zero_grads()
        self.inv_branch.zero_grads()
        self.head.zero_grads()

    def forward(self, pov: np.ndarray, inv: np.ndarray) -> np.ndarray:
        a = self.trunk.forward(pov)
        b = self.inv_branch.forward(inv)
        self._split = a.shape[1]
        return self.head.forward(np.concatenate([a, b], axis=1))

    def backward(self, dy: np.ndarray) -> None:
        d = self.head.backward(dy)
        self.trunk.backward(d[:, :self._split])
        self.inv_branch.backward(d[:, self._split:])


@dataclass
class FlatBCConfig:
    max_updates: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0


class FlatBCAgent(Policy):
    kind = AgentKind.CHOP_TREE  # not phase-bound; evaluated standalone

    def __init__(self, net: FlatBCNet, table: ActionTable):
        self.net = net
        self.table = table

    def act(self, obs, rng: np.random.Generator) -> np.ndarray:
        logits = self.net.forward(_pov_to_net_input(obs.pov),
                                  obs.inv_obf[None, :])
        return self.table.vector(int(np.argmax(logits[0])))


def train_flat_bc(ds, table: ActionTable,
                  config: FlatBCConfig | None = None) -> FlatBCAgent:
    """Single-network behavior cloning over every demo step."""
    config = config or FlatBCConfig()
    pov, inv, y = [], [], []
    for traj in ds.trajectories:
        for tr in traj.transitions:
            pov.append(tr.pov_u8)
            inv.append(tr.inv_obf)
            y.append(table.nearest_index(tr.action))
    if not pov:
        raise DegenerateDataError("dataset has no transitions")
    pov = np.stack(pov)
    inv = np.stack(inv)
    y = np.array(y, dtype=np.int64)

    rng = np.random.Generator(np.random.PCG64(config.seed))
    net = FlatBCNet(table.n_entries, inv.shape[1], seed=config.seed)
    opt = Adam(net.params, net.grads, lr=config.lr)
    n = len(y)
    updates = 0
    while updates < config.max_updates:
        perm = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            if updates >= config.max_updates:
                break
            idx = perm[lo:lo + config.batch_size]
            logits = net.forward(_pov_batch(pov[idx]), inv[idx])
            _, grad = cross_entropy_loss(logits, y[idx])
            net.zero_grads()
            net.backward(grad)
            opt.step()
            updates += 1
    return FlatBCAgent(net, table)
