"""Hash-based multi-resolution tri-plane feature grid.

A point's feature is assembled by projecting it onto the three orthogonal
planes (xy, xz, yz), bilinearly interpolating a small learnable table at
every resolution level of every plane, and concatenating the results in
plane-major, level-minor order. Coarse levels whose full vertex lattice
fits in the table budget are stored densely; finer levels fall back to a
spatial hash, so colliding cells share (and sum gradients into) one entry.

Per-point feature width is ``N = 3 * levels * feature_dim``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Aabb

# plane index -> the two world axes it spans
PLANE_AXES = ((0, 1), (0, 2), (1, 2))
PLANE_NAMES = ("xy", "xz", "yz")

_HASH_B = 2654435761  # large prime multiplier for the second coordinate
_MASK32 = np.uint64(0xFFFFFFFF)

# offsets of the four bilinear corners, paired with weights
# (1-fu)(1-fv), fu(1-fv), (1-fu)fv, fu*fv
_CORNERS = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=np.int64)


@dataclass(frozen=True)
class GridConfig:
    """Shape of the tri-plane: level count, resolution range, channels, table cap."""

    levels: int
    r_min: int
    r_max: int
    feature_dim: int = 2
    table_cap: int = 2**14

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if not (0 < self.r_min <= self.r_max):
            raise ValueError("need 0 < r_min <= r_max")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.table_cap < 1 or (self.table_cap & (self.table_cap - 1)) != 0:
            raise ValueError("table_cap must be a power of two")

    @property
    def point_feature_dim(self) -> int:
        return 3 * self.levels * self.feature_dim


@dataclass(frozen=True)
class LevelMask:
    """Zero out the ``masked_top_k`` highest-resolution levels of every plane."""

    masked_top_k: int = 0

    def __post_init__(self):
        if self.masked_top_k < 0:
            raise ValueError("masked_top_k must be >= 0")

    def is_masked(self, level: int, n_levels: int) -> bool:
        return level >= n_levels - self.masked_top_k


def resolution_ladder(cfg: GridConfig) -> list[int]:
    """Per-level grid resolutions, geometrically spaced from r_min to r_max.

    ``r_l = floor(r_min * b**l)`` with ``b = exp((ln r_max - ln r_min)/(L-1))``;
    both endpoints are forced exactly.
    """
    if cfg.levels == 1:
        return [cfg.r_min]
    b = math.exp((math.log(cfg.r_max) - math.log(cfg.r_min)) / (cfg.levels - 1))
    ladder = [int(math.floor(cfg.r_min * b**level)) for level in range(cfg.levels)]
    ladder[0] = cfg.r_min
    ladder[-1] = cfg.r_max
    return ladder


def hash_index(x, y, table_size: int):
    """Spatial hash of 2D integer cell coordinates into ``[0, table_size)``.

    ``((x * 1) xor (y * 2654435761)) mod table_size`` with unsigned 32-bit
    wrapping multiplication. Accepts scalars or arrays; table_size must be a
    power of two.
    """
    if table_size < 1 or (table_size & (table_size - 1)) != 0:
        raise ValueError("table_size must be a power of two")
    if np.ndim(x) == 0 and np.ndim(y) == 0:
        h = (int(x) & 0xFFFFFFFF) ^ ((int(y) * _HASH_B) & 0xFFFFFFFF)
        return h & (table_size - 1)
    xs = np.asarray(x).astype(np.uint32)  # wrapping casts match u32 semantics
    ys = np.asarray(y).astype(np.uint32)
    h = xs ^ (ys * np.uint32(_HASH_B))
    return (h & np.uint32(table_size - 1)).astype(np.int64)


class _FeatureCache:
    """Saved lookup state from a forward pass, consumed by the backward pass."""

    __slots__ = ("n_points", "indices", "weights")

    def __init__(self, n_points: int):
        self.n_points = n_points
        self.indices: list[np.ndarray] = []  # per plane-level, (n, 4) int64
        self.weights: list[np.ndarray] = []  # per plane-level, (n, 4)


class HashTriPlane:
    """Three orthogonal multi-resolution feature planes over an AABB.

    All learnable entries live in one flat ``values`` array; ``table(plane,
    level)`` exposes a ``(entries, feature_dim)`` view into it. Gradients are
    scatter-added into a caller-provided array of the same layout, so hash
    collisions naturally sum, which is what lets hashed levels self-adapt
    toward the cells that matter.
    """

    def __init__(self, cfg: GridConfig, aabb: Aabb, dtype=np.float32):
        self.cfg = cfg
        self.aabb = aabb
        self.dtype = np.dtype(dtype)
        self.resolutions = resolution_ladder(cfg)
        self.level_entries = [
            min((r + 1) ** 2, cfg.table_cap) for r in self.resolutions
        ]
        per_plane = sum(self.level_entries) * cfg.feature_dim
        self._plane_stride = per_plane
        self._level_offsets = np.cumsum([0] + self.level_entries[:-1]).tolist()
        self.values = np.zeros(3 * per_plane, dtype=self.dtype)

    # -- layout -------------------------------------------------------------

    def is_dense(self, level: int) -> bool:
        """Dense storage iff the full vertex lattice fits in the table cap."""
        return (self.resolutions[level] + 1) ** 2 <= self.cfg.table_cap

    @property
    def param_count(self) -> int:
        return self.values.size

    def table_slice(self, plane: int, level: int) -> slice:
        f = self.cfg.feature_dim
        start = plane * self._plane_stride + self._level_offsets[level] * f
        return slice(start, start + self.level_entries[level] * f)

    def table(self, plane: int, level: int, base: np.ndarray | None = None) -> np.ndarray:
        """(entries, feature_dim) view into ``base`` (default: the values array)."""
        arr = self.values if base is None else base
        return arr[self.table_slice(plane, level)].reshape(
            self.level_entries[level], self.cfg.feature_dim
        )

    def feature_slice(self, plane: int, level: int) -> slice:
        """Columns of the output feature vector owned by one plane-level."""
        f = self.cfg.feature_dim
        start = (plane * self.cfg.levels + level) * f
        return slice(start, start + f)

    def init_params(self, rng: np.random.Generator, scale: float = 1e-4):
        """Uniform init in [-scale, scale] per entry."""
        self.values[:] = rng.uniform(-scale, scale, size=self.values.size).astype(
            self.dtype
        )

    # -- lookup -------------------------------------------------------------

    def _cells_and_weights(self, level: int, uv: np.ndarray):
        """Cell coords and the 4 bilinear corner weights; dtype follows uv."""
        r = self.resolutions[level]
        scaled = np.clip(uv, 0.0, 1.0)
        scaled *= r
        cells_f = np.floor(scaled)
        np.minimum(cells_f, r - 1, out=cells_f)  # uv = 1 falls in the last cell
        frac = scaled
        frac -= cells_f
        fu, fv = frac[:, 0], frac[:, 1]
        w = np.empty((uv.shape[0], 4), dtype=frac.dtype)
        np.multiply(fu, fv, out=w[:, 3])
        np.subtract(fu, w[:, 3], out=w[:, 1])  # fu(1-fv)
        np.subtract(fv, w[:, 3], out=w[:, 2])  # (1-fu)fv
        np.subtract(1.0, fu, out=w[:, 0])  # (1-fu)(1-fv) = 1 - fu - fv + fu*fv
        w[:, 0] -= fv
        w[:, 0] += w[:, 3]
        return cells_f.astype(np.int64), w

    def _corner_indices(self, level: int, cells: np.ndarray) -> np.ndarray:
        """(n, 4) table indices for the four bilinear corners of each cell."""
        cx = cells[:, 0:1] + _CORNERS[:, 0]
        cy = cells[:, 1:2] + _CORNERS[:, 1]
        if self.is_dense(level):
            return cx * (self.resolutions[level] + 1) + cy
        return hash_index(cx, cy, self.cfg.table_cap)

    def plane_feature(self, plane: int, level: int, uv) -> np.ndarray:
        """Bilinear feature of one plane-level at ``uv`` in the unit square.

        Float64 throughout, so a query exactly on a lattice vertex degenerates
        to weights (1,0,0,0) and returns the stored entry bit-for-bit. Out of
        range uv is clamped; with points constrained to the AABB this only
        absorbs float round-off.
        """
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        cells, w = self._cells_and_weights(level, uv)
        idx = self._corner_indices(level, cells)
        tab = self.table(plane, level)
        out = np.einsum("nc,ncf->nf", w, tab[idx].astype(np.float64))
        return out[0] if out.shape[0] == 1 else out

    def normalize_points(self, pts: np.ndarray) -> np.ndarray:
        return (pts - self.aabb.min) / self.aabb.extent

    def point_features(
        self,
        pts: np.ndarray,
        mask: LevelMask | None = None,
        want_cache: bool = False,
    ):
        """Features for world points inside the AABB; shape ``(n, N)``.

        Concatenation order matches the lookup procedure: for each plane in
        (xy, xz, yz), levels coarse to fine. Masked levels contribute zeros.
        Returns ``(features, cache)``; cache is None unless requested.

        Bulk lookups run in float32 (cell/weight math included); worst case
        that shifts a query by ~1e-5 of a cell, far below training noise.
        ``plane_feature`` is the full-precision single-plane reference.
        """
        pts = np.asarray(pts, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"expected (n, 3) points, got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("points contain non-finite coordinates")
        mask = mask or LevelMask(0)
        if mask.masked_top_k > self.cfg.levels:
            raise ValueError("masked_top_k exceeds level count")
        n = pts.shape[0]
        norm = self.normalize_points(pts).astype(np.float32)
        out = np.zeros((n, self.cfg.point_feature_dim), dtype=self.dtype)
        cache = _FeatureCache(n) if want_cache else None
        for plane, (a, b) in enumerate(PLANE_AXES):
            uv = np.ascontiguousarray(norm[:, (a, b)])
            for level in range(self.cfg.levels):
                if mask.is_masked(level, self.cfg.levels):
                    if cache is not None:
                        cache.indices.append(None)
                        cache.weights.append(None)
                    continue
                cells, w = self._cells_and_weights(level, uv)
                idx = self._corner_indices(level, cells)
                tab = self.table(plane, level)
                gathered = tab[idx]  # (n, 4, f)
                out[:, self.feature_slice(plane, level)] = np.einsum(
                    "nc,ncf->nf", w, gathered
                )
                if cache is not None:
                    cache.indices.append(idx)
                    cache.weights.append(w)
        return out, cache

    def point_features_backward(
        self,
        cache: _FeatureCache,
        upstream: np.ndarray,
        grads: np.ndarray,
    ) -> None:
        """Scatter-add ``upstream * bilinear weight`` into table gradients.

        ``grads`` must have the same flat layout as ``values``. Colliding
        hashed cells sum their contributions. Masked levels were skipped in
        the forward pass and receive nothing.
        """
        if cache is None:
            raise RuntimeError("backward requires a cache from point_features(want_cache=True)")
        up = np.asarray(upstream)
        if up.shape != (cache.n_points, self.cfg.point_feature_dim):
            raise ValueError(f"upstream shape {up.shape} does not match cache")
        f = self.cfg.feature_dim
        k = 0
        for plane in range(3):
            for level in range(self.cfg.levels):
                idx, w = cache.indices[k], cache.weights[k]
                k += 1
                if idx is None:
                    continue
                g = up[:, self.feature_slice(plane, level)]
                contrib = w[:, :, None] * g[:, None, :]  # (n, 4, f)
                flat_idx = idx.ravel()
                flat = contrib.reshape(-1, f)
                entries = self.level_entries[level]
                tslice = self.table_slice(plane, level)
                tgt = grads[tslice].reshape(entries, f)
                for c in range(f):
                    tgt[:, c] += np.bincount(
                        flat_idx, weights=flat[:, c], minlength=entries
                    ).astype(self.dtype, copy=False)


def point_feature(grid: HashTriPlane, x, mask: LevelMask | None = None) -> np.ndarray:
    """Feature vector of a single world point; length ``3 * levels * feature_dim``."""
    feats, _ = grid.point_features(np.asarray(x, dtype=np.float64)[None], mask)
    return feats[0]


# -- direction encoding ------------------------------------------------------

SH_DIM = 16


def sh_encode(direction) -> np.ndarray:
    """Real spherical-harmonics basis, degree 4, on a unit direction."""
    d = np.asarray(direction, dtype=np.float64).reshape(3)
    n = np.linalg.norm(d)
    if abs(n - 1.0) > 1e-4:
        raise ValueError(f"direction must be unit length (|d| = {n})")
    return sh_encode_batch(d[None])[0]


def sh_encode_batch(dirs: np.ndarray) -> np.ndarray:
    """Degree-4 real SH basis for ``(n, 3)`` unit directions -> ``(n, 16)``.

    Hard-coded polynomial form; component 0 is the constant 0.28209479177.
    """
    d = np.asarray(dirs, dtype=np.float64)
    norms = np.linalg.norm(d, axis=-1)
    if d.size and np.max(np.abs(norms - 1.0)) > 1e-4:
        raise ValueError("directions must be unit length within 1e-4")
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    out = np.empty(d.shape[:-1] + (SH_DIM,), dtype=np.float64)
    out[..., 0] = 0.28209479177387814
    out[..., 1] = 0.4886025119029199 * y
    out[..., 2] = 0.4886025119029199 * z
    out[..., 3] = 0.4886025119029199 * x
    out[..., 4] = 1.0925484305920792 * x * y
    out[..., 5] = 1.0925484305920792 * y * z
    out[..., 6] = 0.9461746957575601 * zz - 0.31539156525251999
    out[..., 7] = 1.0925484305920792 * x * z
    out[..., 8] = 0.5462742152960396 * (xx - yy)
    out[..., 9] = 0.5900435899266435 * y * (3.0 * xx - yy)
    out[..., 10] = 2.890611442640554 * x * y * z
    out[..., 11] = 0.4570457994644658 * y * (5.0 * zz - 1.0)
    out[..., 12] = 0.3731763325901154 * z * (5.0 * zz - 3.0)
    out[..., 13] = 0.4570457994644658 * x * (5.0 * zz - 1.0)
    out[..., 14] = 1.445305721320277 * z * (xx - yy)
    out[..., 15] = 0.5900435899266435 * x * (xx - 3.0 * yy)
    return out


def grid_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two equally-shaped images (or arrays), flattened.

    Used to compare level-masked renders against the unmasked baseline."""
    av = np.asarray(a, dtype=np.float64).ravel()
    bv = np.asarray(b, dtype=np.float64).ravel()
    if av.shape != bv.shape:
        raise ValueError("inputs must have equal shapes")
    na, nb = np.linalg.norm(av), np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm input")
    return float(av @ bv / (na * nb))
