"""Action and inventory obfuscation codec.

Both channels of the environment interface are deliberately opaque: actions
travel as 64-dim real vectors decoded by nearest neighbour against a seeded
codebook, and the inventory is observed only through a fixed random linear
projection.  Agents never see symbolic action ids or raw item counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

VEC_DIM = 64
COMPONENT_BOUND = 1.049
MIN_CODE_DISTANCE = 0.5


@dataclass(frozen=True)
class ActionCodebook:
    """Fixed set of obfuscated action vectors, one per original action id."""

    entries: np.ndarray  # (n_actions, VEC_DIM) float64
    seed: int
    min_pairwise_distance: float

    @property
    def n_actions(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class InventoryEncoder:
    """Linear projection from raw inventory features to the obfuscated vector."""

    projection: np.ndarray  # (VEC_DIM, n_features) float64, orthonormal columns
    seed: int
    scale: float = 0.5
    component_bound: float = COMPONENT_BOUND

    @property
    def n_features(self) -> int:
        return self.projection.shape[1]


@dataclass(frozen=True)
class Codec:
    """Bundle of the two obfuscation channels used by one environment build."""

    codebook: ActionCodebook
    encoder: InventoryEncoder


def _pairwise_min_distance(entries: np.ndarray) -> float:
    diff = entries[:, None, :] - entries[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    n = entries.shape[0]
    dist[np.arange(n), np.arange(n)] = np.inf
    return float(dist.min())


def build_codebook(
    seed: int,
    n_actions: int,
    min_distance: float = MIN_CODE_DISTANCE,
    component_bound: float = COMPONENT_BOUND,
    max_tries: int = 1000,
) -> ActionCodebook:
    """Rejection-sample a codebook whose entries are pairwise well separated.

    Entries are drawn uniformly from [-component_bound, +component_bound]^64
    and the whole draw is rejected until the minimum pairwise Euclidean
    distance reaches ``min_distance``.
    """
    if n_actions < 2:
        raise ConfigError("codebook needs at least 2 actions")
    rng = np.random.Generator(np.random.PCG64(seed))
    for _ in range(max_tries):
        entries = rng.uniform(-component_bound, component_bound, size=(n_actions, VEC_DIM))
        min_dist = _pairwise_min_distance(entries)
        if min_dist >= min_distance:
            entries.setflags(write=False)
            return ActionCodebook(entries=entries, seed=seed, min_pairwise_distance=min_dist)
    raise ConfigError(
        f"could not sample {n_actions} codebook entries with min distance {min_distance}"
    )


def encode_action(action_id: int, codebook: ActionCodebook) -> np.ndarray:
    if not 0 <= action_id < codebook.n_actions:
        raise ValueError(f"action id {action_id} out of range 0..{codebook.n_actions - 1}")
    return codebook.entries[action_id].copy()


def nearest_action(vec: np.ndarray, codebook: ActionCodebook) -> int:
    """Decode a vector to the nearest codebook id. Ties go to the lowest id."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (VEC_DIM,):
        raise ValueError(f"action vector must have shape ({VEC_DIM},), got {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("action vector has non-finite components")
    diff = codebook.entries - vec[None, :]
    # argmin returns the first minimum, which is the lowest action id on ties
    return int(np.argmin((diff * diff).sum(axis=1)))


def build_inventory_encoder(
    seed: int,
    n_features: int,
    scale: float = 0.5,
    component_bound: float = COMPONENT_BOUND,
) -> InventoryEncoder:
    """Build a fixed projection with orthonormal columns via QR of a Gaussian draw."""
    if n_features < 1 or n_features > VEC_DIM:
        raise ConfigError(f"n_features must be in 1..{VEC_DIM}")
    rng = np.random.Generator(np.random.PCG64(seed))
    gauss = rng.normal(size=(VEC_DIM, n_features))
    q, r = np.linalg.qr(gauss)
    # fix the sign convention so the projection is unique given the seed
    q = q * np.sign(np.diag(r))[None, :]
    q.setflags(write=False)
    return InventoryEncoder(projection=q, seed=seed, scale=scale, component_bound=component_bound)


def encode_inventory(features: np.ndarray, encoder: InventoryEncoder) -> np.ndarray:
    """Project raw inventory features and clamp into the legal component range."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (encoder.n_features,):
        raise ValueError(
            f"features must have shape ({encoder.n_features},), got {features.shape}"
        )
    if not np.all(np.isfinite(features)):
        raise ValueError("inventory features have non-finite components")
    out = encoder.scale * (encoder.projection @ features)
    np.clip(out, -encoder.component_bound, encoder.component_bound, out=out)
    return out


def build_codec(seed: int, n_actions: int, n_features: int) -> Codec:
    """Derive both channels from one base seed with fixed offsets."""
    return Codec(
        codebook=build_codebook(seed, n_actions),
        encoder=build_inventory_encoder(seed + 1, n_features),
    )
