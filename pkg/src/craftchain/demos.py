"""Demonstration generation, surgery and binary storage.

A privileged scripted expert plays the crafting chain and records obfuscated
transitions.  Half the trajectories follow an economical plan that stops after
reaching iron ore with the minimum wood and stone budgets; the other half
carry extra resources and push on to the diamond.  The mix matters: the
scheduler's resource thresholds are minima over successful trajectories.

Datasets are stored in a little-endian binary container (magic
``CRAFTCHAIN-DEMO``) whose header embeds the full obfuscation codec and the
environment config digest, so a dataset is replayable without out-of-band
state.  Pixel observations are quantized to 8 bits with the scale factor
recorded in the header.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

from .env import (
    MILESTONE_REWARDS,
    N_ACTIONS,
    SURF_EMPTY,
    SURF_TREE,
    UG_DIAMOND,
    UG_EMPTY,
    UG_IRON,
    UG_STONE,
    Action,
    CraftWorld,
    EnvConfig,
    EnvVariant,
    FACING_DELTAS,
    ItemId,
    Observation,
    env_config_digest,
)
from .errors import FormatError
from .obfuscation import (
    VEC_DIM,
    ActionCodebook,
    Codec,
    InventoryEncoder,
    build_codec,
)

MAGIC = b"CRAFTCHAIN-DEMO"
VERSION = 1
POV_SCALE = 255.0

_VARIANT_CODES = {
    EnvVariant.OBTAIN_CHAIN_SPARSE: 0,
    EnvVariant.OBTAIN_CHAIN_DENSE: 1,
    EnvVariant.TREE_CHOP: 2,
}
_CODE_VARIANTS = {v: k for k, v in _VARIANT_CODES.items()}


@dataclass
class Transition:
    """One recorded step. The pixel view is stored 8-bit quantized."""

    pov_u8: np.ndarray        # (P, P, 3) uint8
    inv_obf: np.ndarray       # (VEC_DIM,) float64
    action: np.ndarray        # (VEC_DIM,) float64, the vector actually stepped
    reward_dense: float
    reward_sparse: float
    inventory_changed: bool   # any item count or the equipped tool changed
    milestones: int           # bitmask over ItemId of first-time acquisitions
    log_events: int = 0       # logs collected by this step
    cobble_events: int = 0    # cobblestone mined by this step

    def observation(self) -> Observation:
        return Observation(
            pov=self.pov_u8.astype(np.float64) / POV_SCALE,
            inv_obf=self.inv_obf,
        )

    def milestone_items(self) -> tuple[ItemId, ...]:
        return tuple(item for item in ItemId if self.milestones & (1 << item))


@dataclass
class Trajectory:
    seed: int
    variant: EnvVariant
    transitions: list[Transition]
    final_score: float

    def __len__(self) -> int:
        return len(self.transitions)


@dataclass
class Dataset:
    codec: Codec
    env_digest: bytes
    pov_size: int
    trajectories: list[Trajectory]

    def __len__(self) -> int:
        return len(self.trajectories)

    def n_transitions(self) -> int:
        return sum(len(t) for t in self.trajectories)


def milestone_step(traj: Trajectory, item: ItemId) -> int | None:
    """Index of the transition that first acquired `item`, or None."""
    bit = 1 << item
    for i, tr in enumerate(traj.transitions):
        if tr.milestones & bit:
            return i
    return None


# ---------------------------------------------------------------------------
# scripted expert

# Both plans gather and craft wood identically before the wooden pickaxe
# (3 logs = 12 planks cover the table, sticks, and pickaxe), so a policy
# reading only the inventory never sees one state demand two different
# actions. The full plan tops up a reserve log after the pickaxe is in hand:
# stick and fuel restocking for the iron tier costs 14 planks in total.
_LOG_BUDGET = {"stone": 3, "full": 3}
_KEEP_LOGS = {"stone": 0, "full": 0}
_RESERVE_LOGS = {"stone": 0, "full": 1}
_ORE_TARGET = {"stone": 1, "full": 3}
_STONE_EVENT_TARGET = 11  # 3 for the stone pickaxe + 8 for the furnace
_DIG_DEPTH = 3


class ScriptedExpert:
    """Privileged expert for one episode. Reads env internals, emits Actions.

    Decisions are re-derived from the world state every step, so the expert
    self-heals after injected noise.  Navigation paths are cached and only
    recomputed when invalidated.
    """

    def __init__(self, plan: str, rng: np.random.Generator):
        self.plan = plan
        self.rng = rng
        self.plan_logs = _LOG_BUDGET[plan]
        self.keep_logs = _KEEP_LOGS[plan]
        self.ore_target = _ORE_TARGET[plan]
        self.reserve_logs = _RESERVE_LOGS[plan]
        self.logs_total = 0
        self.cobble_total = 0
        self.ore_total = 0
        self.finished = False
        self._path: deque[tuple[int, int]] = deque()
        self._path_goal: tuple | None = None
        self._stuck_turns = 0
        self._stone_order = [Action.CRAFT_STONE_PICKAXE, Action.CRAFT_FURNACE]
        self.rng.shuffle(self._stone_order)

    # -- event feedback ------------------------------------------------------

    def observe(self, info: dict) -> None:
        self.logs_total += info["log_events"]
        self.cobble_total += info["cobble_events"]
        if ItemId.DIAMOND in info["milestones"]:
            self.finished = True
        self.ore_total += info.get("_ore_collected", 0)

    # -- top-level decision ---------------------------------------------------

    def decide(self, env: CraftWorld) -> Action:
        s = env.state
        inv = s.inventory
        flags = s.first_time_flags

        if s.depth == 0 and self.logs_total < self.plan_logs:
            return self._chop_step(env)

        if not flags[ItemId.WOODEN_PICKAXE]:
            return self._craft_wood_step(env)

        if not (flags[ItemId.STONE_PICKAXE] and flags[ItemId.FURNACE]):
            if s.equipped_tier < 1 and inv[ItemId.WOODEN_PICKAXE] >= 1:
                return Action.EQUIP_BEST
            # the full plan tops up smelting fuel while still above ground,
            # after equipping, so the extra chop never shadows the wood phase
            if (s.depth == 0
                    and self.logs_total < self.plan_logs + self.reserve_logs):
                return self._chop_step(env)
            if self.cobble_total < _STONE_EVENT_TARGET:
                return self._dig_step(env)
            return self._craft_stone_step(env)

        return self._iron_step(env)

    # -- phase behaviours ------------------------------------------------------

    def _chop_step(self, env: CraftWorld) -> Action:
        s = env.state
        # attack an adjacent tree when already facing it
        tr, tc = env._target_cell()
        if env._in_bounds(tr, tc) and s.surface[tr, tc] == SURF_TREE:
            return Action.ATTACK
        # face any adjacent tree by walking into it
        for action, f in ((Action.MOVE_NORTH, 0), (Action.MOVE_EAST, 1),
                          (Action.MOVE_SOUTH, 2), (Action.MOVE_WEST, 3)):
            dr, dc = FACING_DELTAS[f]
            rr, cc = s.row + dr, s.col + dc
            if env._in_bounds(rr, cc) and s.surface[rr, cc] == SURF_TREE:
                return action
        move = self._follow_path(env, goal=("tree",))
        if move is not None:
            return move
        return self._wander(env)

    def _craft_wood_step(self, env: CraftWorld) -> Action:
        s = env.state
        inv = s.inventory
        if inv[ItemId.LOG] > self.keep_logs:
            return Action.CRAFT_PLANK
        if inv[ItemId.STICK] < 2 and inv[ItemId.PLANK] >= 2:
            return Action.CRAFT_STICK
        if (not s.placed_flags[ItemId.CRAFTING_TABLE] and inv[ItemId.CRAFTING_TABLE] == 0
                and inv[ItemId.PLANK] >= 4):
            return Action.CRAFT_TABLE
        if inv[ItemId.CRAFTING_TABLE] >= 1 and not s.placed_flags[ItemId.CRAFTING_TABLE]:
            return self._place_step(env, Action.PLACE_TABLE)
        if (s.placed_flags[ItemId.CRAFTING_TABLE] and inv[ItemId.PLANK] >= 3
                and inv[ItemId.STICK] >= 2):
            return Action.CRAFT_WOODEN_PICKAXE
        # resources fell short (noise): go chop another log if still above ground
        if s.depth == 0 and inv[ItemId.LOG] == 0:
            self.plan_logs = self.logs_total + 1
            return self._chop_step(env)
        if inv[ItemId.LOG] > 0:
            return Action.CRAFT_PLANK
        return Action.NOOP

    def _dig_step(self, env: CraftWorld) -> Action:
        s = env.state
        if s.depth < _DIG_DEPTH:
            below = s.underground[s.depth, s.row, s.col]
            if below == UG_EMPTY or self._mineable(env, below):
                return Action.DIG_DOWN
            return self._sidestep(env)
        # tunnel at constant depth: mine ahead, walk into the hole, turn at walls
        tr, tc = env._target_cell()
        if env._in_bounds(tr, tc) and (s.depth, tr, tc) not in s.placed:
            cell = s.underground[s.depth - 1, tr, tc]
            if cell == UG_EMPTY:
                self._stuck_turns = 0
                return self._move_forward(s)
            if self._mineable(env, cell):
                self._stuck_turns = 0
                return Action.ATTACK
        self._stuck_turns += 1
        if self._stuck_turns > 4:
            self._stuck_turns = 0
            below = s.underground[s.depth, s.row, s.col] if s.depth < env.config.depth_levels else None
            if below is not None and (below == UG_EMPTY or self._mineable(env, below)):
                return Action.DIG_DOWN
        return Action.TURN_RIGHT

    def _craft_stone_step(self, env: CraftWorld) -> Action:
        s = env.state
        inv = s.inventory
        if inv[ItemId.STICK] < 2 and not s.first_time_flags[ItemId.STONE_PICKAXE]:
            if inv[ItemId.PLANK] >= 2:
                return Action.CRAFT_STICK
            if inv[ItemId.LOG] >= 1:
                return Action.CRAFT_PLANK
        for action in self._stone_order:
            item = ItemId.STONE_PICKAXE if action == Action.CRAFT_STONE_PICKAXE else ItemId.FURNACE
            if not s.first_time_flags[item]:
                need = 3 if item == ItemId.STONE_PICKAXE else 8
                if inv[ItemId.COBBLESTONE] >= need:
                    return action
                return self._dig_step(env)  # noise cost us stone, dig more
        return Action.NOOP

    def _iron_step(self, env: CraftWorld) -> Action:
        s = env.state
        inv = s.inventory
        flags = s.first_time_flags
        if s.equipped_tier < 2 and inv[ItemId.STONE_PICKAXE] >= 1:
            return Action.EQUIP_BEST

        if self.plan == "stone":
            if inv[ItemId.IRON_ORE] + inv[ItemId.IRON_INGOT] >= self.ore_target:
                self.finished = True
                return Action.NOOP
            return self._seek_block_step(env, UG_IRON)

        # full plan: restock wood products before they are needed
        if inv[ItemId.PLANK] < 5 and inv[ItemId.LOG] >= 1 and not flags[ItemId.IRON_PICKAXE]:
            return Action.CRAFT_PLANK
        if inv[ItemId.STICK] < 2 and inv[ItemId.PLANK] >= 2 and not flags[ItemId.IRON_PICKAXE]:
            return Action.CRAFT_STICK
        total_iron = inv[ItemId.IRON_ORE] + inv[ItemId.IRON_INGOT]
        if total_iron < self.ore_target and not flags[ItemId.IRON_PICKAXE]:
            return self._seek_block_step(env, UG_IRON)
        if not s.placed_flags[ItemId.FURNACE]:
            if inv[ItemId.FURNACE] >= 1:
                return self._place_step(env, Action.PLACE_FURNACE)
            return Action.NOOP
        if inv[ItemId.IRON_INGOT] < 3 and inv[ItemId.IRON_ORE] >= 1 and inv[ItemId.PLANK] >= 1:
            return Action.SMELT_IRON
        if (not flags[ItemId.IRON_PICKAXE] and inv[ItemId.IRON_INGOT] >= 3
                and inv[ItemId.STICK] >= 2):
            return Action.CRAFT_IRON_PICKAXE
        if flags[ItemId.IRON_PICKAXE] and s.equipped_tier < 3:
            return Action.EQUIP_BEST
        if s.equipped_tier == 3:
            if s.depth < 6:
                return self._descend_step(env)
            return self._seek_block_step(env, UG_DIAMOND)
        return Action.NOOP

    # -- navigation helpers -----------------------------------------------------

    def _mineable(self, env: CraftWorld, cell: int) -> bool:
        tier = env.state.equipped_tier
        return (cell == UG_STONE and tier >= 1) or (cell == UG_IRON and tier >= 2) \
            or (cell == UG_DIAMOND and tier >= 3)

    def _move_forward(self, s) -> Action:
        return (Action.MOVE_NORTH, Action.MOVE_EAST, Action.MOVE_SOUTH,
                Action.MOVE_WEST)[s.facing]

    def _move_toward(self, s, rr: int, cc: int) -> Action:
        if rr < s.row:
            return Action.MOVE_NORTH
        if rr > s.row:
            return Action.MOVE_SOUTH
        if cc > s.col:
            return Action.MOVE_EAST
        return Action.MOVE_WEST

    def _wander(self, env: CraftWorld) -> Action:
        return (Action.MOVE_NORTH, Action.MOVE_EAST, Action.MOVE_SOUTH,
                Action.MOVE_WEST)[int(self.rng.integers(4))]

    def _sidestep(self, env: CraftWorld) -> Action:
        s = env.state
        dirs = [0, 1, 2, 3]
        self.rng.shuffle(dirs)
        for f in dirs:
            dr, dc = FACING_DELTAS[f]
            rr, cc = s.row + dr, s.col + dc
            if not env._in_bounds(rr, cc) or (s.depth, rr, cc) in s.placed:
                continue
            if s.depth == 0:
                if s.surface[rr, cc] == SURF_EMPTY:
                    return self._move_toward(s, rr, cc)
            else:
                cell = s.underground[s.depth - 1, rr, cc]
                if cell == UG_EMPTY:
                    return self._move_toward(s, rr, cc)
                if self._mineable(env, cell):
                    if (rr - s.row, cc - s.col) == FACING_DELTAS[s.facing]:
                        return Action.ATTACK
                    return self._move_toward(s, rr, cc)
        return self._wander(env)

    def _descend_step(self, env: CraftWorld) -> Action:
        s = env.state
        if s.depth >= env.config.depth_levels:
            return self._wander(env)
        below = s.underground[s.depth, s.row, s.col]
        if below == UG_EMPTY or self._mineable(env, below):
            return Action.DIG_DOWN
        return self._sidestep(env)

    def _place_step(self, env: CraftWorld, action: Action) -> Action:
        s = env.state
        if (s.depth, s.row, s.col) in s.placed:
            return self._sidestep(env)
        return action

    def _follow_path(self, env: CraftWorld, goal: tuple) -> Action | None:
        """Surface pathing toward the nearest tree; returns None when no path."""
        s = env.state
        if self._path_goal != goal or not self._path:
            self._path = self._bfs_to_tree(env)
            self._path_goal = goal
        if not self._path:
            return None
        nxt = self._path[0]
        if abs(nxt[0] - s.row) + abs(nxt[1] - s.col) != 1 or not env._walkable(*nxt):
            self._path.clear()
            return None
        self._path.popleft()
        return self._move_toward(s, *nxt)

    def _bfs_to_tree(self, env: CraftWorld) -> deque:
        s = env.state
        n = env.config.grid_size
        start = (s.row, s.col)
        prev: dict[tuple[int, int], tuple[int, int]] = {start: start}
        q = deque([start])
        while q:
            r, c = q.popleft()
            for dr, dc in FACING_DELTAS:
                rr, cc = r + dr, c + dc
                if not (0 <= rr < n and 0 <= cc < n) or (rr, cc) in prev:
                    continue
                if s.surface[rr, cc] == SURF_TREE:
                    # reconstruct the path to the cell adjacent to this tree
                    path = deque()
                    cur = (r, c)
                    while cur != start:
                        path.appendleft(cur)
                        cur = prev[cur]
                    return path
                if s.surface[rr, cc] == SURF_EMPTY and (0, rr, cc) not in s.placed:
                    prev[(rr, cc)] = (r, c)
                    q.append((rr, cc))
        return deque()

    def _seek_block_step(self, env: CraftWorld, target_code: int) -> Action:
        """Tunnel toward the nearest target block on the current layer."""
        s = env.state
        if s.depth == 0:
            return self._descend_step(env)
        layer = s.underground[s.depth - 1]
        goal = ("block", target_code, s.depth)
        if self._path_goal != goal or not self._path:
            self._path = self._bfs_underground(env, layer, target_code)
            self._path_goal = goal
        if not self._path:
            self._path_goal = None
            if s.depth < env.config.depth_levels:
                return self._descend_step(env)
            return self._dig_step(env)
        nxt = self._path[0]
        if abs(nxt[0] - s.row) + abs(nxt[1] - s.col) != 1:
            self._path.clear()
            return Action.NOOP
        cell = layer[nxt]
        if cell == UG_EMPTY and (s.depth, nxt[0], nxt[1]) not in s.placed:
            self._path.popleft()
            return self._move_toward(s, *nxt)
        if self._mineable(env, cell):
            if (nxt[0] - s.row, nxt[1] - s.col) == FACING_DELTAS[s.facing]:
                if cell == target_code:
                    self._path.clear()
                    self._path_goal = None
                return Action.ATTACK
            return self._move_toward(s, *nxt)
        self._path.clear()
        self._path_goal = None
        return Action.TURN_RIGHT

    def _bfs_underground(self, env: CraftWorld, layer: np.ndarray, target_code: int) -> deque:
        s = env.state
        n = env.config.grid_size
        start = (s.row, s.col)
        prev: dict[tuple[int, int], tuple[int, int]] = {start: start}
        q = deque([start])
        while q:
            r, c = q.popleft()
            for dr, dc in FACING_DELTAS:
                rr, cc = r + dr, c + dc
                if not (0 <= rr < n and 0 <= cc < n) or (rr, cc) in prev:
                    continue
                cell = layer[rr, cc]
                if cell == target_code:
                    path = deque()
                    cur = (rr, cc)
                    prev[(rr, cc)] = (r, c)
                    while cur != start:
                        path.appendleft(cur)
                        cur = prev[cur]
                    return path
                passable = cell == UG_EMPTY or self._mineable(env, cell)
                if passable and (s.depth, rr, cc) not in s.placed:
                    prev[(rr, cc)] = (r, c)
                    q.append((rr, cc))
        return deque()


# ---------------------------------------------------------------------------
# generation

def generate_demos(
    n: int,
    seed: int,
    noise_level: float,
    env_config: EnvConfig | None = None,
    codec: Codec | None = None,
    variant: EnvVariant = EnvVariant.OBTAIN_CHAIN_DENSE,
) -> Dataset:
    """Roll out `n` expert trajectories. Trajectory i uses env seed `seed + i`.

    noise_level in [0, 1] mixes in uniformly random actions (probability
    0.15 * noise_level per step) and Gaussian jitter on the emitted action
    vectors (sigma = noise_level * min_code_distance / 10).
    """
    if n < 1:
        raise ValueError("need at least one trajectory")
    if not 0.0 <= noise_level <= 1.0:
        raise ValueError("noise_level must be in [0, 1]")
    env_config = env_config if env_config is not None else EnvConfig()
    env = CraftWorld(env_config, codec)
    codec = env.codec
    sigma = noise_level * codec.codebook.min_pairwise_distance / 10.0
    p_random = 0.15 * noise_level

    trajectories = []
    for i in range(n):
        ep_seed = seed + i
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((ep_seed, 7))))
        plan = "full" if i % 2 == 0 else "stone"
        expert = ScriptedExpert(plan, rng)
        obs = env.reset(ep_seed, variant)
        transitions: list[Transition] = []
        while not expert.finished:
            action = expert.decide(env)
            if p_random > 0 and rng.random() < p_random:
                action = Action(int(rng.integers(N_ACTIONS)))
            vec = env.action_vector(action)
            if sigma > 0:
                vec = vec + rng.normal(0.0, sigma, VEC_DIM)
            inv_before = env.state.inventory.copy()
            tier_before = env.state.equipped_tier
            res = env.step(vec)
            changed = (
                not np.array_equal(inv_before, env.state.inventory)
                or tier_before != env.state.equipped_tier
            )
            ore_delta = env.state.inventory[ItemId.IRON_ORE] - inv_before[ItemId.IRON_ORE]
            info = dict(res.info)
            info["_ore_collected"] = max(0, int(ore_delta))
            expert.observe(info)
            transitions.append(Transition(
                pov_u8=np.round(obs.pov * POV_SCALE).astype(np.uint8),
                inv_obf=obs.inv_obf.copy(),
                action=np.asarray(vec, dtype=np.float64),
                reward_dense=res.info["reward_sparse"] + float(res.info["dense_events"]),
                reward_sparse=res.info["reward_sparse"],
                inventory_changed=bool(changed),
                milestones=sum(1 << item for item in res.info["milestones"]),
                log_events=int(res.info["log_events"]),
                cobble_events=int(res.info["cobble_events"]),
            ))
            obs = res.obs
            if res.done:
                break
        trajectories.append(Trajectory(
            seed=ep_seed,
            variant=variant,
            transitions=transitions,
            final_score=env.score(),
        ))
    return Dataset(
        codec=codec,
        env_digest=env_config_digest(env_config),
        pov_size=env_config.pov_size,
        trajectories=trajectories,
    )


# ---------------------------------------------------------------------------
# surgeries

def truncate_before_plank(traj: Trajectory) -> Trajectory:
    """Keep only the transitions strictly before the first Plank milestone."""
    cut = milestone_step(traj, ItemId.PLANK)
    kept = list(traj.transitions) if cut is None else traj.transitions[:cut]
    flags = 0
    for tr in kept:
        flags |= tr.milestones
    score = sum(float(MILESTONE_REWARDS[item]) for item in ItemId if flags & (1 << item))
    return Trajectory(seed=traj.seed, variant=traj.variant, transitions=kept,
                      final_score=score)


def extract_critical_steps(
    ds: Dataset,
    phase_filter: int | None = None,
    thresholds=None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """(obfuscated inventory, action vector) pairs where inventory state changed.

    With `phase_filter` set (1..5), only transitions labeled with that phase
    are returned; `thresholds` must then be provided (see scheduler module).
    """
    pairs: list[tuple[np.ndarray, np.ndarray]] = []
    for traj in ds.trajectories:
        labels = None
        if phase_filter is not None:
            if thresholds is None:
                raise ValueError("phase_filter requires thresholds")
            from .scheduler import label_episode  # local import avoids a cycle
            labels = label_episode(traj, thresholds)
        for t, tr in enumerate(traj.transitions):
            if not tr.inventory_changed:
                continue
            if labels is not None and labels[t] != phase_filter:
                continue
            pairs.append((tr.inv_obf, tr.action))
    return pairs


# ---------------------------------------------------------------------------
# binary container

def _pack_codec(codec: Codec) -> bytes:
    cb, enc = codec.codebook, codec.encoder
    parts = [
        struct.pack("<Iqd", cb.n_actions, cb.seed, cb.min_pairwise_distance),
        np.ascontiguousarray(cb.entries, dtype="<f8").tobytes(),
        struct.pack("<Iqdd", enc.n_features, enc.seed, enc.scale, enc.component_bound),
        np.ascontiguousarray(enc.projection, dtype="<f8").tobytes(),
    ]
    return b"".join(parts)


def _unpack_codec(buf: memoryview, off: int) -> tuple[Codec, int]:
    n_actions, cb_seed, min_dist = struct.unpack_from("<Iqd", buf, off)
    off += struct.calcsize("<Iqd")
    entries = np.frombuffer(buf, dtype="<f8", count=n_actions * VEC_DIM, offset=off)
    entries = entries.reshape(n_actions, VEC_DIM).copy()
    off += entries.nbytes
    n_features, enc_seed, scale, bound = struct.unpack_from("<Iqdd", buf, off)
    off += struct.calcsize("<Iqdd")
    projection = np.frombuffer(buf, dtype="<f8", count=VEC_DIM * n_features, offset=off)
    projection = projection.reshape(VEC_DIM, n_features).copy()
    off += projection.nbytes
    entries.setflags(write=False)
    projection.setflags(write=False)
    codec = Codec(
        codebook=ActionCodebook(entries=entries, seed=cb_seed,
                                min_pairwise_distance=min_dist),
        encoder=InventoryEncoder(projection=projection, seed=enc_seed, scale=scale,
                                 component_bound=bound),
    )
    return codec, off


def save_dataset(ds: Dataset, path) -> None:
    p = ds.pov_size
    chunks = [MAGIC, struct.pack("<IHd", VERSION, p, POV_SCALE), _pack_codec(ds.codec)]
    if len(ds.env_digest) != 32:
        raise FormatError("env digest must be 32 bytes")
    chunks.append(ds.env_digest)
    chunks.append(struct.pack("<I", len(ds.trajectories)))
    for traj in ds.trajectories:
        n = len(traj.transitions)
        pov = np.stack([t.pov_u8 for t in traj.transitions]) if n else \
            np.zeros((0, p, p, 3), dtype=np.uint8)
        inv = np.stack([t.inv_obf for t in traj.transitions]) if n else np.zeros((0, VEC_DIM))
        act = np.stack([t.action for t in traj.transitions]) if n else np.zeros((0, VEC_DIM))
        rdense = np.array([t.reward_dense for t in traj.transitions], dtype=np.float64)
        rsparse = np.array([t.reward_sparse for t in traj.transitions], dtype=np.float64)
        changed = np.array([t.inventory_changed for t in traj.transitions], dtype=np.uint8)
        stones = np.array([t.milestones for t in traj.transitions], dtype=np.uint16)
        logs_ev = np.array([t.log_events for t in traj.transitions], dtype=np.uint8)
        cobble_ev = np.array([t.cobble_events for t in traj.transitions], dtype=np.uint8)
        payload = b"".join([
            struct.pack("<qBId", traj.seed, _VARIANT_CODES[traj.variant], n,
                        traj.final_score),
            pov.tobytes(),
            np.ascontiguousarray(inv, dtype="<f8").tobytes(),
            np.ascontiguousarray(act, dtype="<f8").tobytes(),
            rdense.astype("<f8").tobytes(),
            rsparse.astype("<f8").tobytes(),
            changed.tobytes(),
            stones.astype("<u2").tobytes(),
            logs_ev.tobytes(),
            cobble_ev.tobytes(),
        ])
        chunks.append(struct.pack("<Q", len(payload)))
        chunks.append(payload)
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = memoryview(raw)
    if raw[:len(MAGIC)] != MAGIC:
        raise FormatError(f"bad magic; not a {MAGIC.decode()} file")
    off = len(MAGIC)
    version, pov_size, pov_scale = struct.unpack_from("<IHd", buf, off)
    off += struct.calcsize("<IHd")
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version} (want {VERSION})")
    if pov_scale != POV_SCALE:
        raise FormatError(f"unexpected pov scale {pov_scale}")
    codec, off = _unpack_codec(buf, off)
    env_digest = bytes(buf[off:off + 32])
    off += 32
    (n_traj,) = struct.unpack_from("<I", buf, off)
    off += 4

    trajectories = []
    p = pov_size
    for _ in range(n_traj):
        if off + 8 > len(raw):
            raise FormatError("truncated dataset: missing trajectory header")
        (payload_len,) = struct.unpack_from("<Q", buf, off)
        off += 8
        end = off + payload_len
        if end > len(raw):
            raise FormatError("truncated dataset: trajectory payload cut short")
        seed, vcode, n, final_score = struct.unpack_from("<qBId", buf, off)
        pos = off + struct.calcsize("<qBId")

        def take(dtype, count, shape):
            nonlocal pos
            arr = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
            pos += arr.nbytes
            return arr.reshape(shape).copy()

        pov = take(np.uint8, n * p * p * 3, (n, p, p, 3))
        inv = take("<f8", n * VEC_DIM, (n, VEC_DIM))
        act = take("<f8", n * VEC_DIM, (n, VEC_DIM))
        rdense = take("<f8", n, (n,))
        rsparse = take("<f8", n, (n,))
        changed = take(np.uint8, n, (n,))
        stones = take("<u2", n, (n,))
        logs_ev = take(np.uint8, n, (n,))
        cobble_ev = take(np.uint8, n, (n,))
        if pos != end:
            raise FormatError("trajectory payload size mismatch")
        off = end
        transitions = [
            Transition(
                pov_u8=pov[t], inv_obf=inv[t], action=act[t],
                reward_dense=float(rdense[t]), reward_sparse=float(rsparse[t]),
                inventory_changed=bool(changed[t]), milestones=int(stones[t]),
                log_events=int(logs_ev[t]), cobble_events=int(cobble_ev[t]),
            )
            for t in range(n)
        ]
        trajectories.append(Trajectory(
            seed=seed, variant=_CODE_VARIANTS[vcode], transitions=transitions,
            final_score=float(final_score),
        ))
    if off != len(raw):
        raise FormatError("trailing bytes after last trajectory")
    return Dataset(codec=codec, env_digest=env_digest, pov_size=pov_size,
                   trajectories=trajectories)
