"""Action discretization: cluster continuous action vectors into a fixed table.

Demonstration actions are 64-dim vectors. They are split into two pools by
whether the step changed the inventory state (item counts or the equipped
tool). Each pool is clustered with k-means, and the two centroid sets are
stacked, movement rows first, into a single lookup table that downstream
agents treat as their discrete action space.

A small DP-means variant (clusters spawned whenever a point sits farther than
a distance penalty from every existing centroid) is used where the number of
distinct interactions must be discovered instead of fixed.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, FormatError
from .obfuscation import VEC_DIM

TABLE_MAGIC = b"CRAFTCHAIN-ACTS"
TABLE_VERSION = 1


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray        # (k, d)
    labels: np.ndarray           # (n,) int64
    inertia_history: list[float]  # assignment-step inertia, nonincreasing

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


@dataclass(frozen=True)
class DPClusterResult:
    centroids: np.ndarray  # (k, d)
    labels: np.ndarray     # (n,) int64
    penalty: float


def _squared_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """(n, k) matrix of squared euclidean distances, clipped at zero."""
    xx = np.einsum("ij,ij->i", X, X)[:, None]
    cc = np.einsum("ij,ij->i", C, C)[None, :]
    d2 = xx + cc - 2.0 * (X @ C.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]), dtype=np.float64)
    centroids[0] = X[int(rng.integers(n))]
    d2 = _squared_distances(X, centroids[:1]).ravel()
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = X[idx]
        d2 = np.minimum(d2, _squared_distances(X, centroids[j:j + 1]).ravel())
    return centroids


def kmeans_fit(
    X: np.ndarray,
    k: int,
    seed: int,
    max_iter: int = 200,
    init: str | np.ndarray = "kmeans++",
) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are re-seeded to the point farthest from every live
    centroid, which never increases the assignment inertia. The returned
    inertia history is nonincreasing by construction.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a nonempty 2-d array")
    n = X.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k={k} must be in [1, {n}]")
    rng = np.random.Generator(np.random.PCG64(seed))
    if isinstance(init, str):
        if init != "kmeans++":
            raise ValueError(f"unknown init scheme {init!r}")
        centroids = _kmeans_pp_init(X, k, rng)
    else:
        centroids = np.array(init, dtype=np.float64)
        if centroids.shape != (k, X.shape[1]):
            raise ValueError("init centroid array has the wrong shape")

    history: list[float] = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        d2 = _squared_distances(X, centroids)
        labels = d2.argmin(axis=1)
        min_d2 = d2[np.arange(n), labels]
        history.append(float(min_d2.sum()))

        new_centroids = centroids.copy()
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j] > 0:
                new_centroids[j] = X[labels == j].mean(axis=0)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            # pull each empty centroid onto the currently worst-served point
            gap = min_d2.copy()
            for j in empties:
                idx = int(gap.argmax())
                new_centroids[j] = X[idx]
                gap = np.minimum(
                    gap, _squared_distances(X, new_centroids[j:j + 1]).ravel())
        if np.array_equal(new_centroids, centroids):
            break
        centroids = new_centroids
    return KMeansResult(centroids=centroids, labels=labels,
                        inertia_history=history)


def default_dp_penalty(X: np.ndarray, max_points: int = 2000, seed: int = 0) -> float:
    """Half the median pairwise distance (seeded subsample beyond max_points)."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two points to set a distance penalty")
    if n > max_points:
        rng = np.random.Generator(np.random.PCG64(seed))
        X = X[rng.choice(n, size=max_points, replace=False)]
        n = max_points
    d2 = _squared_distances(X, X)
    iu = np.triu_indices(n, k=1)
    return float(np.median(np.sqrt(d2[iu]))) / 2.0


def dp_cluster_fit(
    X: np.ndarray,
    penalty: float | None = None,
    max_passes: int = 50,
) -> DPClusterResult:
    """Distance-penalized clustering: spawn a cluster when a point is farther
    than `penalty` from every existing centroid.

    Deterministic for a fixed data order. At convergence every point lies
    within `penalty` of its assigned centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a nonempty 2-d array")
    if penalty is None:
        penalty = default_dp_penalty(X)
    if penalty <= 0:
        raise ValueError("penalty must be positive")
    p2 = penalty * penalty

    n = X.shape[0]
    centroids = [X.mean(axis=0)]
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_passes):
        changed = False
        for i in range(n):
            C = np.asarray(centroids)
            d2 = np.einsum("ij,ij->i", C - X[i], C - X[i])
            j = int(d2.argmin())
            if d2[j] > p2:
                centroids.append(X[i].copy())
                j = len(centroids) - 1
                changed = True
            if labels[i] != j:
                labels[i] = j
                changed = True
        # recompute centroids; drop clusters that lost every point
        C = []
        remap = {}
        for j in range(len(centroids)):
            members = X[labels == j]
            if len(members):
                remap[j] = len(C)
                C.append(members.mean(axis=0))
        old = centroids
        centroids = C
        labels = np.array([remap[j] for j in labels], dtype=np.int64)
        if not changed and len(old) == len(centroids) and \
                all(np.array_equal(a, b) for a, b in zip(old, centroids)):
            break
    return DPClusterResult(centroids=np.asarray(centroids), labels=labels,
                           penalty=float(penalty))


# ---------------------------------------------------------------------------
# action table

@dataclass(frozen=True)
class ActionTable:
    """Discrete action lookup: row index -> 64-dim action vector.

    Movement rows come first; rows n_movement.. are interaction centroids.
    """

    entries: np.ndarray
    n_movement: int
    seed: int

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[1] != VEC_DIM:
            raise ValueError(f"entries must be (n, {VEC_DIM})")
        if not 0 <= self.n_movement <= entries.shape[0]:
            raise ValueError("n_movement out of range")
        entries = entries.copy()
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n_entries(self) -> int:
        return self.entries.shape[0]

    def vector(self, index: int) -> np.ndarray:
        return self.entries[index]

    def is_movement(self, index: int) -> bool:
        return index < self.n_movement

    def nearest_index(self, vec: np.ndarray) -> int:
        vec = np.asarray(vec, dtype=np.float64)
        diff = self.entries - vec[None, :]
        return int(np.einsum("ij,ij->i", diff, diff).argmin())

    def digest(self) -> bytes:
        h = hashlib.sha256()
        h.update(struct.pack("<IIq", self.n_entries, self.n_movement, self.seed))
        h.update(np.ascontiguousarray(self.entries, dtype="<f8").tobytes())
        return h.digest()


def split_by_inventory_change(ds) -> tuple[np.ndarray, np.ndarray]:
    """All recorded action vectors, split into (movement, interaction) pools."""
    movement, interaction = [], []
    for traj in ds.trajectories:
        for tr in traj.transitions:
            (interaction if tr.inventory_changed else movement).append(tr.action)
    if not movement:
        raise DegenerateDataError("dataset contains no movement steps")
    if not interaction:
        raise DegenerateDataError("dataset contains no inventory-changing steps")
    return np.asarray(movement), np.asarray(interaction)


def build_action_table(
    ds,
    seed: int,
    n_movement: int = 30,
    n_interaction: int = 30,
) -> ActionTable:
    movement, interaction = split_by_inventory_change(ds)
    if len(movement) < n_movement:
        raise DegenerateDataError(
            f"{len(movement)} movement samples cannot fill {n_movement} clusters")
    if len(interaction) < n_interaction:
        raise DegenerateDataError(
            f"{len(interaction)} interaction samples cannot fill {n_interaction} clusters")
    move_fit = kmeans_fit(movement, n_movement, seed=seed)
    inter_fit = kmeans_fit(interaction, n_interaction, seed=seed + 1)
    entries = np.vstack([move_fit.centroids, inter_fit.centroids])
    return ActionTable(entries=entries, n_movement=n_movement, seed=seed)


def save_action_table(table: ActionTable, path) -> None:
    with open(path, "wb") as fh:
        fh.write(TABLE_MAGIC)
        fh.write(struct.pack("<IIIq", TABLE_VERSION, table.n_entries,
                             table.n_movement, table.seed))
        fh.write(table.digest())
        fh.write(np.ascontiguousarray(table.entries, dtype="<f8").tobytes())


def load_action_table(path) -> ActionTable:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:len(TABLE_MAGIC)] != TABLE_MAGIC:
        raise FormatError(f"bad magic; not a {TABLE_MAGIC.decode()} file")
    off = len(TABLE_MAGIC)
    version, n_entries, n_movement, seed = struct.unpack_from("<IIIq", raw, off)
    off += struct.calcsize("<IIIq")
    if version != TABLE_VERSION:
        raise FormatError(f"unsupported action table version {version}")
    digest = raw[off:off + 32]
    off += 32
    want = n_entries * VEC_DIM * 8
    if len(raw) - off != want:
        raise FormatError("action table payload has the wrong size")
    entries = np.frombuffer(raw, dtype="<f8", count=n_entries * VEC_DIM,
                            offset=off).reshape(n_entries, VEC_DIM)
    table = ActionTable(entries=entries, n_movement=n_movement, seed=seed)
    if table.digest() != digest:
        raise FormatError("action table digest mismatch; file is corrupt")
    return table
