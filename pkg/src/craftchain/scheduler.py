"""Phase thresholds, demo step labeling, and the learned subtask scheduler.

The chain is split into five phases, one per subtask policy. Demo steps are
labeled by two resource thresholds plus milestone flags; a small classifier
is then trained to predict the phase from the obfuscated inventory alone, so
the composed policy never needs raw state or rewards at inference time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .agents import AgentKind
from .demos import Dataset, Trajectory, milestone_step
from .env import ItemId
from .errors import DegenerateDataError
from .nn import Adam, Dense, ReLU, Sequential, cross_entropy_loss, softmax

N_PHASES = 5

_PHASE_NAMES = {
    1: "ChopTree",
    2: "CraftWoodenPickaxe",
    3: "DigStone",
    4: "CraftStonePickaxe",
    5: "RandomSearch",
}


@dataclass(frozen=True)
class PhaseThresholds:
    """Resource counts that close the gathering phases.

    log_count: logs that must be collected before crafting wooden tools.
    cobble_count: cobblestone that must be mined before crafting stone tools.
    """
    log_count: int
    cobble_count: int

    def __post_init__(self):
        if self.log_count < 1 or self.cobble_count < 1:
            raise ValueError("thresholds must be positive")


def _event_prefix(traj: Trajectory, channel: str) -> np.ndarray:
    """cum[t] = events of the given kind logged strictly before step t."""
    per_step = np.array([getattr(tr, channel) for tr in traj.transitions],
                        dtype=np.int64)
    return np.concatenate([[0], np.cumsum(per_step)])


def compute_thresholds(ds: Dataset) -> PhaseThresholds:
    """Cheapest resource usage among demos that complete the stone tier.

    A demo qualifies if it reaches the wooden pickaxe, stone pickaxe, and
    furnace. Its log usage is the log events up to and including the
    wooden-pickaxe step; its cobblestone usage is the cobblestone events
    through the later of the stone-pickaxe and furnace steps (mining stone
    needs the wooden pickaxe, so none of those events predate it). The
    thresholds are minima over qualifying demos, i.e. what a perfectly
    frugal run needs.
    """
    logs_used: list[int] = []
    cobble_used: list[int] = []
    for traj in ds.trajectories:
        wp = milestone_step(traj, ItemId.WOODEN_PICKAXE)
        sp = milestone_step(traj, ItemId.STONE_PICKAXE)
        fur = milestone_step(traj, ItemId.FURNACE)
        if wp is None or sp is None or fur is None:
            continue
        cum_logs = _event_prefix(traj, "log_events")
        cum_cobble = _event_prefix(traj, "cobble_events")
        logs_used.append(int(cum_logs[wp + 1]))
        cobble_used.append(int(cum_cobble[max(sp, fur) + 1]))
    if not logs_used:
        raise DegenerateDataError(
            "no demo reaches the stone pickaxe and furnace; "
            "cannot derive phase thresholds")
    return PhaseThresholds(log_count=min(logs_used),
                           cobble_count=min(cobble_used))


def label_episode(traj: Trajectory, thresholds: PhaseThresholds) -> np.ndarray:
    """Phase label for every step of a demo, values 1..5, non-decreasing.

    labels[t] is decided by what happened strictly before step t, i.e. by the
    state the agent sees when choosing action t. The step that completes a
    phase's goal therefore still carries that phase's label, and the switch
    shows up on the following step.
    """
    n = len(traj.transitions)
    cum_logs = _event_prefix(traj, "log_events")
    cum_cobble = _event_prefix(traj, "cobble_events")
    wp = milestone_step(traj, ItemId.WOODEN_PICKAXE)
    sp = milestone_step(traj, ItemId.STONE_PICKAXE)
    fur = milestone_step(traj, ItemId.FURNACE)

    labels = np.empty(n, dtype=np.int64)
    for t in range(n):
        wp_done = wp is not None and wp < t
        sp_done = sp is not None and sp < t
        fur_done = fur is not None and fur < t
        if cum_logs[t] < thresholds.log_count:
            labels[t] = 1
        elif not wp_done:
            labels[t] = 2
        elif cum_cobble[t] < thresholds.cobble_count:
            labels[t] = 3
        elif not (sp_done and fur_done):
            labels[t] = 4
        else:
            labels[t] = 5
    return labels


def phase_transitions(ds: Dataset, phase: int,
                      thresholds: PhaseThresholds) -> list:
    """Every demo transition labeled with the given phase (1..5)."""
    if not 1 <= phase <= N_PHASES:
        raise ValueError(f"phase must be 1..{N_PHASES}, got {phase}")
    out = []
    for traj in ds.trajectories:
        labels = label_episode(traj, thresholds)
        for tr, lab in zip(traj.transitions, labels):
            if lab == phase:
                out.append(tr)
    return out


# ---------------------------------------------------------------------------
# the scheduler network

@dataclass
class SchedulerConfig:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 1e-3
    hidden: int = 64
    holdout_fraction: float = 0.2
    seed: int = 0


class Scheduler:
    """Maps an obfuscated inventory vector to the subtask that should act."""

    def __init__(self, net: Sequential, thresholds: PhaseThresholds):
        self.net = net
        self.thresholds = thresholds

    def phase_probs(self, inv_obf: np.ndarray) -> np.ndarray:
        logits = self.net.forward(np.asarray(inv_obf, dtype=np.float64)[None, :])
        return softmax(logits, axis=1)[0]

    def select_agent(self, inv_obf: np.ndarray) -> AgentKind:
        logits = self.net.forward(np.asarray(inv_obf, dtype=np.float64)[None, :])
        # argmax takes the first maximum, so ties go to the earlier phase
        return AgentKind(int(np.argmax(logits[0])) + 1)


def _collect_labeled_steps(ds: Dataset, thresholds: PhaseThresholds):
    """(inventory matrix, zero-based labels, trajectory index per step)."""
    xs, ys, traj_ids = [], [], []
    for i, traj in enumerate(ds.trajectories):
        labels = label_episode(traj, thresholds)
        for tr, lab in zip(traj.transitions, labels):
            xs.append(tr.inv_obf)
            ys.append(lab - 1)
            traj_ids.append(i)
    if not xs:
        raise DegenerateDataError("dataset has no transitions")
    return np.stack(xs), np.array(ys, dtype=np.int64), np.array(traj_ids)


def train_scheduler(ds: Dataset, thresholds: PhaseThresholds,
                    config: SchedulerConfig | None = None) -> tuple[Scheduler, dict]:
    """Fit the phase classifier on labeled demo steps.

    Whole trajectories are held out for the accuracy estimate so the
    evaluation never sees states from a demo it trained on.
    """
    config = config or SchedulerConfig()
    X, y, traj_ids = _collect_labeled_steps(ds, thresholds)

    rng = np.random.Generator(np.random.PCG64(config.seed))
    n_traj = int(traj_ids.max()) + 1
    order = rng.permutation(n_traj)
    n_hold = max(1, int(n_traj * config.holdout_fraction))
    hold_traj = set(order[:n_hold].tolist())
    hold_mask = np.isin(traj_ids, list(hold_traj))
    train_idx = np.flatnonzero(~hold_mask)
    hold_idx = np.flatnonzero(hold_mask)
    if train_idx.size == 0:
        raise DegenerateDataError("holdout split left no training steps")

    for phase in range(1, N_PHASES + 1):
        if not np.any(y[train_idx] == phase - 1):
            raise DegenerateDataError(
                f"no training steps for phase {phase} ({_PHASE_NAMES[phase]}); "
                "need demos that reach it")

    net = Sequential([
        Dense(X.shape[1], config.hidden, rng=rng),
        ReLU(),
        Dense(config.hidden, config.hidden, rng=rng),
        ReLU(),
        Dense(config.hidden, N_PHASES, rng=rng),
    ])
    opt = Adam(net.params, net.grads, lr=config.lr)
    for _ in range(config.epochs):
        perm = rng.permutation(train_idx.size)
        for lo in range(0, perm.size, config.batch_size):
            idx = train_idx[perm[lo:lo + config.batch_size]]
            logits = net.forward(X[idx])
            _, grad = cross_entropy_loss(logits, y[idx])
            net.zero_grads()
            net.backward(grad)
            opt.step()

    def accuracy(idx: np.ndarray) -> float:
        if idx.size == 0:
            return float("nan")
        pred = net.forward(X[idx]).argmax(axis=1)
        return float(np.mean(pred == y[idx]))

    per_phase = {}
    for phase in range(1, N_PHASES + 1):
        idx = hold_idx[y[hold_idx] == phase - 1]
        per_phase[_PHASE_NAMES[phase]] = accuracy(idx)
    metrics = {
        "train_accuracy": accuracy(train_idx),
        "holdout_accuracy": accuracy(hold_idx),
        "per_phase_holdout_accuracy": per_phase,
        "n_steps": int(len(y)),
        "n_holdout_trajectories": int(n_hold),
    }
    return Scheduler(net, thresholds), metrics
