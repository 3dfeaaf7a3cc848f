"""Deterministic crafting-chain gridworld.

A 2D surface layer (trees, water) sits on top of a column of underground
layers (stone, iron ore, diamond ore).  The agent chops trees for logs,
crafts tools through a fixed dependency chain, digs downward for stone,
iron and finally diamond.  Each item grants a one-time milestone reward;
dense variants additionally pay +1 for every log chopped or stone dug.

All interaction happens through the obfuscation codec: `step` accepts a
64-dim action vector (decoded by nearest codebook entry) and observations
expose only a rendered pixel view plus the obfuscated inventory vector.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .obfuscation import (
    VEC_DIM,
    Codec,
    build_codec,
    encode_action,
    encode_inventory,
    nearest_action,
)


class ItemId(enum.IntEnum):
    """Items in dependency-chain order. Every item after LOG has a prerequisite."""

    LOG = 0
    PLANK = 1
    STICK = 2
    CRAFTING_TABLE = 3
    WOODEN_PICKAXE = 4
    COBBLESTONE = 5
    STONE_PICKAXE = 6
    FURNACE = 7
    IRON_ORE = 8
    IRON_INGOT = 9
    IRON_PICKAXE = 10
    DIAMOND = 11


N_ITEMS = len(ItemId)

# One-time reward for the first acquisition of each item.
MILESTONE_REWARDS: dict[ItemId, float] = {
    ItemId.LOG: 1.0,
    ItemId.PLANK: 2.0,
    ItemId.STICK: 4.0,
    ItemId.CRAFTING_TABLE: 4.0,
    ItemId.WOODEN_PICKAXE: 8.0,
    ItemId.COBBLESTONE: 16.0,
    ItemId.STONE_PICKAXE: 32.0,
    ItemId.FURNACE: 32.0,
    ItemId.IRON_ORE: 64.0,
    ItemId.IRON_INGOT: 128.0,
    ItemId.IRON_PICKAXE: 256.0,
    ItemId.DIAMOND: 1024.0,
}

# Items that must have been obtained before each item can first appear.
ITEM_PREREQS: dict[ItemId, tuple[ItemId, ...]] = {
    ItemId.LOG: (),
    ItemId.PLANK: (ItemId.LOG,),
    ItemId.STICK: (ItemId.PLANK,),
    ItemId.CRAFTING_TABLE: (ItemId.PLANK,),
    ItemId.WOODEN_PICKAXE: (ItemId.PLANK, ItemId.STICK, ItemId.CRAFTING_TABLE),
    ItemId.COBBLESTONE: (ItemId.WOODEN_PICKAXE,),
    ItemId.STONE_PICKAXE: (ItemId.COBBLESTONE, ItemId.STICK),
    ItemId.FURNACE: (ItemId.COBBLESTONE,),
    ItemId.IRON_ORE: (ItemId.STONE_PICKAXE,),
    ItemId.IRON_INGOT: (ItemId.IRON_ORE, ItemId.FURNACE, ItemId.PLANK),
    ItemId.IRON_PICKAXE: (ItemId.IRON_INGOT, ItemId.STICK),
    ItemId.DIAMOND: (ItemId.IRON_PICKAXE,),
}


class Action(enum.IntEnum):
    MOVE_NORTH = 0
    MOVE_SOUTH = 1
    MOVE_EAST = 2
    MOVE_WEST = 3
    TURN_LEFT = 4
    TURN_RIGHT = 5
    ATTACK = 6
    DIG_DOWN = 7
    PLACE_TABLE = 8
    PLACE_FURNACE = 9
    CRAFT_PLANK = 10
    CRAFT_STICK = 11
    CRAFT_TABLE = 12
    CRAFT_WOODEN_PICKAXE = 13
    CRAFT_STONE_PICKAXE = 14
    CRAFT_FURNACE = 15
    SMELT_IRON = 16
    CRAFT_IRON_PICKAXE = 17
    EQUIP_BEST = 18
    NOOP = 19


N_ACTIONS = len(Action)

# Actions that can never change inventory state (counts or equipped tool).
PURE_MOVE_ACTIONS = frozenset(
    {Action.MOVE_NORTH, Action.MOVE_SOUTH, Action.MOVE_EAST, Action.MOVE_WEST,
     Action.TURN_LEFT, Action.TURN_RIGHT, Action.NOOP}
)


class EnvVariant(enum.Enum):
    OBTAIN_CHAIN_SPARSE = "obtain_chain_sparse"
    OBTAIN_CHAIN_DENSE = "obtain_chain_dense"
    TREE_CHOP = "tree_chop"


DENSE_VARIANTS = (EnvVariant.OBTAIN_CHAIN_DENSE, EnvVariant.TREE_CHOP)


@dataclass(frozen=True)
class Recipe:
    output: ItemId
    output_count: int
    inputs: tuple[tuple[ItemId, int], ...]
    requires_placed: ItemId | None = None


RECIPES: dict[ItemId, Recipe] = {
    ItemId.PLANK: Recipe(ItemId.PLANK, 4, ((ItemId.LOG, 1),)),
    ItemId.STICK: Recipe(ItemId.STICK, 4, ((ItemId.PLANK, 2),)),
    ItemId.CRAFTING_TABLE: Recipe(ItemId.CRAFTING_TABLE, 1, ((ItemId.PLANK, 4),)),
    ItemId.WOODEN_PICKAXE: Recipe(
        ItemId.WOODEN_PICKAXE, 1, ((ItemId.PLANK, 3), (ItemId.STICK, 2)),
        requires_placed=ItemId.CRAFTING_TABLE,
    ),
    ItemId.STONE_PICKAXE: Recipe(
        ItemId.STONE_PICKAXE, 1, ((ItemId.COBBLESTONE, 3), (ItemId.STICK, 2)),
        requires_placed=ItemId.CRAFTING_TABLE,
    ),
    ItemId.FURNACE: Recipe(
        ItemId.FURNACE, 1, ((ItemId.COBBLESTONE, 8),),
        requires_placed=ItemId.CRAFTING_TABLE,
    ),
    ItemId.IRON_INGOT: Recipe(
        ItemId.IRON_INGOT, 1, ((ItemId.IRON_ORE, 1), (ItemId.PLANK, 1)),
        requires_placed=ItemId.FURNACE,
    ),
    ItemId.IRON_PICKAXE: Recipe(
        ItemId.IRON_PICKAXE, 1, ((ItemId.IRON_INGOT, 3), (ItemId.STICK, 2)),
        requires_placed=ItemId.CRAFTING_TABLE,
    ),
}

ACTION_TO_RECIPE: dict[Action, ItemId] = {
    Action.CRAFT_PLANK: ItemId.PLANK,
    Action.CRAFT_STICK: ItemId.STICK,
    Action.CRAFT_TABLE: ItemId.CRAFTING_TABLE,
    Action.CRAFT_WOODEN_PICKAXE: ItemId.WOODEN_PICKAXE,
    Action.CRAFT_STONE_PICKAXE: ItemId.STONE_PICKAXE,
    Action.CRAFT_FURNACE: ItemId.FURNACE,
    Action.SMELT_IRON: ItemId.IRON_INGOT,
    Action.CRAFT_IRON_PICKAXE: ItemId.IRON_PICKAXE,
}

PICKAXE_BY_TIER = {1: ItemId.WOODEN_PICKAXE, 2: ItemId.STONE_PICKAXE, 3: ItemId.IRON_PICKAXE}

# Surface cell codes.
SURF_EMPTY, SURF_TREE, SURF_WATER = 0, 1, 2
# Underground cell codes.
UG_EMPTY, UG_STONE, UG_IRON, UG_DIAMOND = 0, 1, 2, 3
# block code -> (required tool tier, item collected)
MINE_TABLE = {
    UG_STONE: (1, ItemId.COBBLESTONE),
    UG_IRON: (2, ItemId.IRON_ORE),
    UG_DIAMOND: (3, ItemId.DIAMOND),
}

# facing: 0=N 1=E 2=S 3=W as (row, col) deltas
FACING_DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1))
MOVE_FACING = {
    Action.MOVE_NORTH: 0,
    Action.MOVE_EAST: 1,
    Action.MOVE_SOUTH: 2,
    Action.MOVE_WEST: 3,
}

N_INV_FEATURES = N_ITEMS + 4  # item counts + equipped-tool one-hot (none/wood/stone/iron)


@dataclass
class EnvConfig:
    grid_size: int = 32
    pov_size: int = 32
    horizon: int = 2000
    treechop_horizon: int = 500
    tree_density: float = 0.10
    ore_density: float = 0.08
    water_density: float = 0.03
    depth_levels: int = 8
    seed: int = 0  # codec seed; worldgen seeds are passed to reset()

    def validate(self) -> None:
        if self.grid_size < 8:
            raise ConfigError("grid_size must be at least 8")
        if self.pov_size < 8 or self.pov_size > 64 or self.pov_size % 2 != 0:
            raise ConfigError("pov_size must be an even number in 8..64")
        if self.horizon < 1 or self.treechop_horizon < 1:
            raise ConfigError("horizons must be positive")
        if not (0.0 < self.tree_density < 1.0):
            raise ConfigError("tree_density must be in (0, 1)")
        if not (0.0 <= self.ore_density < 1.0):
            raise ConfigError("ore_density must be in [0, 1)")
        if self.depth_levels < 4:
            raise ConfigError("depth_levels must be at least 4")


def env_config_digest(config: EnvConfig) -> bytes:
    """32-byte digest of the parameters that define world generation."""
    canon = "|".join(
        f"{k}={getattr(config, k)!r}"
        for k in (
            "grid_size", "pov_size", "horizon", "treechop_horizon",
            "tree_density", "ore_density", "water_density", "depth_levels", "seed",
        )
    )
    return hashlib.sha256(canon.encode()).digest()


@dataclass
class WorldState:
    variant: EnvVariant
    seed: int
    surface: np.ndarray          # (N, N) uint8 surface codes
    underground: np.ndarray      # (D, N, N) uint8, index d holds depth d+1
    row: int
    col: int
    depth: int                   # 0 = surface, 1..D below
    facing: int                  # 0=N 1=E 2=S 3=W
    inventory: np.ndarray        # (N_ITEMS,) int64
    equipped_tier: int           # 0 none, 1 wooden, 2 stone, 3 iron
    placed: dict[tuple[int, int, int], ItemId]  # (depth, row, col) -> object
    placed_flags: np.ndarray     # (N_ITEMS,) bool, True once placed anywhere
    first_time_flags: np.ndarray  # (N_ITEMS,) bool
    step_count: int
    done: bool
    horizon: int
    rng: np.random.Generator


@dataclass(frozen=True)
class Observation:
    pov: np.ndarray      # (P, P, 3) float64 in [0, 1]
    inv_obf: np.ndarray  # (VEC_DIM,) float64 in [-1.049, 1.049]


@dataclass(frozen=True)
class StepResult:
    obs: Observation
    reward: float
    done: bool
    info: dict


def milestone_score(flags) -> float:
    """Sum of milestone rewards for a set of achieved items.

    Accepts a boolean array over ItemId, an iterable of ItemId, or a dict
    of ItemId -> bool.
    """
    if isinstance(flags, np.ndarray):
        achieved = [ItemId(i) for i in range(N_ITEMS) if flags[i]]
    elif isinstance(flags, dict):
        achieved = [item for item, hit in flags.items() if hit]
    else:
        achieved = list(flags)
    return float(sum(MILESTONE_REWARDS[ItemId(item)] for item in achieved))


def inventory_features(state: WorldState) -> np.ndarray:
    """Raw features fed to the inventory obfuscation: log1p counts + tool one-hot."""
    feats = np.zeros(N_INV_FEATURES, dtype=np.float64)
    feats[:N_ITEMS] = np.log1p(state.inventory.astype(np.float64))
    feats[N_ITEMS + state.equipped_tier] = 1.0
    return feats


# ---------------------------------------------------------------------------
# rendering

_BORDER_CODE = 255
_PLACED_TABLE_CODE = 10
_PLACED_FURNACE_CODE = 11

_SURFACE_LUT = np.zeros((256, 3), dtype=np.float64)
_SURFACE_LUT[SURF_EMPTY] = (0.35, 0.62, 0.25)
_SURFACE_LUT[SURF_TREE] = (0.09, 0.38, 0.12)
_SURFACE_LUT[SURF_WATER] = (0.15, 0.35, 0.80)
_SURFACE_LUT[_PLACED_TABLE_CODE] = (0.58, 0.38, 0.14)
_SURFACE_LUT[_PLACED_FURNACE_CODE] = (0.33, 0.33, 0.36)
_SURFACE_LUT[_BORDER_CODE] = (0.0, 0.0, 0.0)

_UNDERGROUND_LUT = np.zeros((256, 3), dtype=np.float64)
_UNDERGROUND_LUT[UG_EMPTY] = (0.05, 0.05, 0.07)
_UNDERGROUND_LUT[UG_STONE] = (0.50, 0.50, 0.53)
_UNDERGROUND_LUT[UG_IRON] = (0.78, 0.48, 0.18)
_UNDERGROUND_LUT[UG_DIAMOND] = (0.30, 0.85, 0.92)
_UNDERGROUND_LUT[_PLACED_TABLE_CODE] = (0.58, 0.38, 0.14)
_UNDERGROUND_LUT[_PLACED_FURNACE_CODE] = (0.33, 0.33, 0.36)
_UNDERGROUND_LUT[_BORDER_CODE] = (0.0, 0.0, 0.0)

AGENT_COLOR = np.array((0.92, 0.10, 0.10))
TREE_COLOR = _SURFACE_LUT[SURF_TREE].copy()
EQUIP_COLORS = np.array(
    [(0.0, 0.0, 0.0), (0.62, 0.40, 0.10), (0.66, 0.66, 0.70), (0.93, 0.93, 0.96)]
)


def render_pov(state: WorldState, pov_size: int) -> np.ndarray:
    """Egocentric view of the current layer, rotated so the facing points up.

    The agent sits at the center pixel; a two-row strip along the top edge
    shows the equipped-tool color (absent entirely for an empty hand).
    """
    p = pov_size
    half = p // 2
    layer = state.surface if state.depth == 0 else state.underground[state.depth - 1]
    n = layer.shape[0]

    window = np.full((p, p), _BORDER_CODE, dtype=np.uint8)
    r0, c0 = state.row - half, state.col - half
    rs, re = max(r0, 0), min(r0 + p, n)
    cs, ce = max(c0, 0), min(c0 + p, n)
    if rs < re and cs < ce:
        window[rs - r0:re - r0, cs - c0:ce - c0] = layer[rs:re, cs:ce]

    for (d, rr, cc), item in state.placed.items():
        if d != state.depth:
            continue
        wr, wc = rr - r0, cc - c0
        if 0 <= wr < p and 0 <= wc < p:
            window[wr, wc] = (
                _PLACED_TABLE_CODE if item == ItemId.CRAFTING_TABLE else _PLACED_FURNACE_CODE
            )

    window = np.rot90(window, k=state.facing)
    lut = _SURFACE_LUT if state.depth == 0 else _UNDERGROUND_LUT
    img = lut[window]
    img[half, half] = AGENT_COLOR
    if state.equipped_tier > 0:
        img[:2, :] = EQUIP_COLORS[state.equipped_tier]
    return img


# ---------------------------------------------------------------------------
# environment

class CraftWorld:
    """Deterministic single-agent environment over the obfuscation codec."""

    def __init__(self, config: EnvConfig, codec: Codec | None = None):
        config.validate()
        self.config = config
        self.codec = codec if codec is not None else build_codec(
            config.seed, N_ACTIONS, N_INV_FEATURES
        )
        if self.codec.codebook.n_actions != N_ACTIONS:
            raise ConfigError(
                f"codebook has {self.codec.codebook.n_actions} entries, need {N_ACTIONS}"
            )
        if self.codec.encoder.n_features != N_INV_FEATURES:
            raise ConfigError(
                f"inventory encoder has {self.codec.encoder.n_features} features, "
                f"need {N_INV_FEATURES}"
            )
        self.state: WorldState | None = None

    # -- world generation ---------------------------------------------------

    def reset(self, seed: int, variant: EnvVariant) -> Observation:
        if not isinstance(variant, EnvVariant):
            raise ConfigError(f"invalid environment variant: {variant!r}")
        cfg = self.config
        n = cfg.grid_size
        rng = np.random.Generator(np.random.PCG64(seed))

        surface = np.zeros((n, n), dtype=np.uint8)
        if variant != EnvVariant.TREE_CHOP:
            n_patches = int(round(n * n * cfg.water_density / 9.0))
            for _ in range(n_patches):
                r = int(rng.integers(1, n - 1))
                c = int(rng.integers(1, n - 1))
                surface[r - 1:r + 2, c - 1:c + 2] = SURF_WATER
        tree_mask = (rng.random((n, n)) < cfg.tree_density) & (surface == SURF_EMPTY)
        surface[tree_mask] = SURF_TREE

        d = cfg.depth_levels
        underground = np.full((d, n, n), UG_STONE, dtype=np.uint8)
        if variant != EnvVariant.TREE_CHOP:
            iron_mask = rng.random((d, n, n)) < cfg.ore_density
            iron_mask[:2] = False  # no ore in the two shallowest layers
            underground[iron_mask] = UG_IRON
            diamond_mask = rng.random((d, n, n)) < cfg.ore_density / 4.0
            diamond_mask[:5] = False  # diamond only in the deep layers
            underground[diamond_mask] = UG_DIAMOND

        open_cells = np.argwhere(surface == SURF_EMPTY)
        if len(open_cells) == 0:  # pathological density corner, keep a legal spawn
            surface[n // 2, n // 2] = SURF_EMPTY
            open_cells = np.array([[n // 2, n // 2]])
        row, col = map(int, open_cells[rng.integers(len(open_cells))])
        facing = int(rng.integers(4))

        horizon = cfg.treechop_horizon if variant == EnvVariant.TREE_CHOP else cfg.horizon
        self.state = WorldState(
            variant=variant,
            seed=seed,
            surface=surface,
            underground=underground,
            row=row,
            col=col,
            depth=0,
            facing=facing,
            inventory=np.zeros(N_ITEMS, dtype=np.int64),
            equipped_tier=0,
            placed={},
            placed_flags=np.zeros(N_ITEMS, dtype=bool),
            first_time_flags=np.zeros(N_ITEMS, dtype=bool),
            step_count=0,
            done=False,
            horizon=horizon,
            rng=rng,
        )
        return self._observe()

    # -- stepping -----------------------------------------------------------

    def step(self, action_vec: np.ndarray) -> StepResult:
        state = self._require_state()
        if state.done:
            raise RuntimeError("step() called after episode finished; call reset()")
        action_id = nearest_action(action_vec, self.codec.codebook)
        return self._step_id(Action(action_id))

    def _step_id(self, action: Action) -> StepResult:
        state = self._require_state()
        new_items, log_events, cobble_events = self._apply(action)

        state.step_count += 1
        sparse = float(sum(MILESTONE_REWARDS[i] for i in new_items))
        dense_events = log_events + cobble_events
        if state.variant in DENSE_VARIANTS:
            reward = sparse + float(dense_events)
        else:
            reward = sparse
        if state.first_time_flags[ItemId.DIAMOND] or state.step_count >= state.horizon:
            state.done = True

        info = {
            "action": action,
            "milestones": tuple(new_items),
            "reward_sparse": sparse,
            "dense_events": dense_events,
            "log_events": log_events,
            "cobble_events": cobble_events,
        }
        return StepResult(self._observe(), reward, state.done, info)

    def _apply(self, action: Action) -> tuple[list[ItemId], int, int]:
        state = self.state
        new_items: list[ItemId] = []
        log_events = 0
        cobble_events = 0

        def gain(item: ItemId, count: int = 1) -> None:
            state.inventory[item] += count
            if not state.first_time_flags[item]:
                state.first_time_flags[item] = True
                new_items.append(item)

        if action in MOVE_FACING:
            state.facing = MOVE_FACING[action]
            tr, tc = self._target_cell()
            if self._walkable(tr, tc):
                state.row, state.col = tr, tc
        elif action == Action.TURN_LEFT:
            state.facing = (state.facing - 1) % 4
        elif action == Action.TURN_RIGHT:
            state.facing = (state.facing + 1) % 4
        elif action == Action.ATTACK:
            tr, tc = self._target_cell()
            if self._in_bounds(tr, tc) and (state.depth, tr, tc) not in state.placed:
                if state.depth == 0:
                    if state.surface[tr, tc] == SURF_TREE:
                        state.surface[tr, tc] = SURF_EMPTY
                        gain(ItemId.LOG)
                        log_events += 1
                else:
                    cobble_events += self._mine(state.depth, tr, tc, gain)
        elif action == Action.DIG_DOWN:
            if state.depth < self.config.depth_levels:
                below = state.underground[state.depth, state.row, state.col]
                if below == UG_EMPTY:
                    state.depth += 1
                else:
                    mined = self._mine(state.depth + 1, state.row, state.col, gain)
                    cobble_events += mined
                    if state.underground[state.depth, state.row, state.col] == UG_EMPTY:
                        state.depth += 1
        elif action in (Action.PLACE_TABLE, Action.PLACE_FURNACE):
            item = ItemId.CRAFTING_TABLE if action == Action.PLACE_TABLE else ItemId.FURNACE
            key = (state.depth, state.row, state.col)
            if state.inventory[item] >= 1 and key not in state.placed:
                state.inventory[item] -= 1
                state.placed[key] = item
                state.placed_flags[item] = True
        elif action in ACTION_TO_RECIPE:
            recipe = RECIPES[ACTION_TO_RECIPE[action]]
            if self._can_craft(recipe):
                for inp, count in recipe.inputs:
                    state.inventory[inp] -= count
                gain(recipe.output, recipe.output_count)
        elif action == Action.EQUIP_BEST:
            for tier in (3, 2, 1):
                if state.inventory[PICKAXE_BY_TIER[tier]] >= 1:
                    state.equipped_tier = tier
                    break
        elif action == Action.NOOP:
            pass
        else:  # pragma: no cover - the Action enum is exhaustive
            raise AssertionError(f"unhandled action {action}")

        return new_items, log_events, cobble_events

    def _mine(self, depth: int, row: int, col: int, gain) -> int:
        """Try to mine the block at (depth, row, col). Returns 1 for a stone dig."""
        state = self.state
        block = int(state.underground[depth - 1, row, col])
        if block == UG_EMPTY:
            return 0
        tier_needed, item = MINE_TABLE[block]
        if state.equipped_tier < tier_needed:
            return 0
        state.underground[depth - 1, row, col] = UG_EMPTY
        gain(item)
        return 1 if block == UG_STONE else 0

    def _can_craft(self, recipe: Recipe) -> bool:
        state = self.state
        if recipe.requires_placed is not None and not state.placed_flags[recipe.requires_placed]:
            return False
        return all(state.inventory[inp] >= count for inp, count in recipe.inputs)

    def _target_cell(self) -> tuple[int, int]:
        dr, dc = FACING_DELTAS[self.state.facing]
        return self.state.row + dr, self.state.col + dc

    def _in_bounds(self, row: int, col: int) -> bool:
        n = self.config.grid_size
        return 0 <= row < n and 0 <= col < n

    def _walkable(self, row: int, col: int) -> bool:
        state = self.state
        if not self._in_bounds(row, col):
            return False
        if (state.depth, row, col) in state.placed:
            return False
        if state.depth == 0:
            return state.surface[row, col] == SURF_EMPTY
        return state.underground[state.depth - 1, row, col] == UG_EMPTY

    # -- observation & bookkeeping -------------------------------------------

    def _observe(self) -> Observation:
        state = self._require_state()
        pov = render_pov(state, self.config.pov_size)
        inv = encode_inventory(inventory_features(state), self.codec.encoder)
        return Observation(pov=pov, inv_obf=inv)

    def _require_state(self) -> WorldState:
        if self.state is None:
            raise RuntimeError("reset() must be called before stepping")
        return self.state

    def action_vector(self, action: Action | int) -> np.ndarray:
        return encode_action(int(action), self.codec.codebook)

    def milestone_flags(self) -> frozenset[ItemId]:
        state = self._require_state()
        return frozenset(ItemId(i) for i in range(N_ITEMS) if state.first_time_flags[i])

    def score(self) -> float:
        return milestone_score(self._require_state().first_time_flags)
