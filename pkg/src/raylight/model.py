"""The assembled light field: grid encoder + ray decoder over one scene box.

`LightField.ray_colors` is the whole forward pass for a batch of rays:
intersect the scene box (after an optional NDC warp for forward-facing
scenes), place K deterministic mid-bin samples on each surviving segment,
look their features up in the tri-plane, and run the recurrent decoder.
Rays that miss the box return the background color and carry no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    Aabb,
    Ray,
    intersect_aabb_batch,
    ndc_rays_batch,
    sample_ts_batch,
)
from .gridenc import GridConfig, HashTriPlane, LevelMask, sh_encode_batch
from .raydecoder import DecoderConfig, RayColorDecoder

SCENE_MODES = ("aabb-360", "ndc-forward")


@dataclass(frozen=True)
class NdcParams:
    """Camera description a forward-facing scene was trained with; required to
    map world rays into the NDC cube at render time."""

    focal: float
    width: float
    height: float
    near: float = 1.0

    def __post_init__(self):
        if self.focal <= 0 or self.width <= 0 or self.height <= 0 or self.near <= 0:
            raise ValueError("ndc parameters must be positive")


class _RenderCache:
    __slots__ = ("n", "hit_idx", "grid_cache", "decoder_cache", "k")

    def __init__(self, n, hit_idx, grid_cache, decoder_cache, k):
        self.n = n
        self.hit_idx = hit_idx
        self.grid_cache = grid_cache
        self.decoder_cache = decoder_cache
        self.k = k


class LightField:
    """A trainable scene: feature grid, decoder, sampling box, background.

    Parameters are initialized by `init_params`; `ray_colors` /` backward`
    are the training-facing forward and reverse passes. Construction is
    cheap, so checkpoint loading builds an empty model and fills the arrays.
    """

    def __init__(
        self,
        grid_cfg: GridConfig,
        aabb: Aabb,
        hidden_size: int,
        num_layers: int,
        k_samples: int,
        background=(1.0, 1.0, 1.0),
        scene_mode: str = "aabb-360",
        ndc: NdcParams | None = None,
        mlp_hidden: int = 0,
        dtype=np.float32,
    ):
        if scene_mode not in SCENE_MODES:
            raise ValueError(f"scene_mode must be one of {SCENE_MODES}")
        if scene_mode == "ndc-forward" and ndc is None:
            raise ValueError("ndc-forward mode requires NdcParams")
        if k_samples < 1:
            raise ValueError("k_samples must be >= 1")
        self.grid = HashTriPlane(grid_cfg, aabb, dtype=dtype)
        dec_cfg = DecoderConfig(
            hidden_size=hidden_size,
            num_layers=num_layers,
            input_dim=grid_cfg.point_feature_dim + 16,
            mlp_hidden=mlp_hidden,
        )
        self.decoder = RayColorDecoder(dec_cfg, dtype=dtype)
        self.aabb = aabb
        self.k_samples = k_samples
        self.background = np.asarray(background, dtype=np.float32).reshape(3)
        if np.any(self.background < 0) or np.any(self.background > 1):
            raise ValueError("background must lie in [0,1]^3")
        self.scene_mode = scene_mode
        self.ndc = ndc

    def init_params(self, seed: int):
        """Deterministic init: grid tables first, then decoder, one RNG stream."""
        rng = np.random.default_rng(seed)
        self.grid.init_params(rng)
        self.decoder.init_params(rng)

    @property
    def param_count(self) -> int:
        return self.grid.param_count + self.decoder.param_count

    # -- forward / backward ----------------------------------------------------

    def _clip_rays(self, origins: np.ndarray, dirs: np.ndarray):
        """Map rays into the sampling box; returns (o, d, t_near, t_far, hit)."""
        if self.scene_mode == "ndc-forward":
            fwd = dirs[:, 2] < 0
            o2 = np.zeros_like(origins)
            d2 = np.zeros_like(dirs)
            if fwd.any():
                o2[fwd], d2[fwd] = ndc_rays_batch(
                    origins[fwd],
                    dirs[fwd],
                    self.ndc.focal,
                    self.ndc.width,
                    self.ndc.height,
                    self.ndc.near,
                )
            d2[~fwd] = (0.0, 0.0, 1.0)  # placeholder; masked out below
            t_near, t_far, hit = intersect_aabb_batch(o2, d2, self.aabb)
            hit &= fwd
            return o2, d2, t_near, t_far, hit
        t_near, t_far, hit = intersect_aabb_batch(origins, dirs, self.aabb)
        return origins, dirs, t_near, t_far, hit

    def ray_colors(
        self,
        origins: np.ndarray,
        dirs: np.ndarray,
        mask: LevelMask | None = None,
        want_cache: bool = False,
    ):
        """RGB for a batch of world-space rays; misses get the background.

        Directions need not be unit length for intersection/sampling, but the
        view-direction encoding always normalizes. Returns ``(rgb, cache)``
        with rgb ``(n, 3)`` in the model dtype.
        """
        o = np.asarray(origins, dtype=np.float64)
        d = np.asarray(dirs, dtype=np.float64)
        if o.ndim != 2 or o.shape[1] != 3 or o.shape != d.shape:
            raise ValueError(f"origins/dirs must be matching (n, 3), got {o.shape} {d.shape}")
        if not (np.isfinite(o).all() and np.isfinite(d).all()):
            raise ValueError("rays contain non-finite values")
        norms = np.linalg.norm(d, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero-length ray direction")
        n = o.shape[0]
        out = np.tile(self.background.astype(self.decoder.dtype), (n, 1))
        o2, d2, t_near, t_far, hit = self._clip_rays(o, d)
        hit_idx = np.flatnonzero(hit)
        if hit_idx.size == 0:
            cache = _RenderCache(n, hit_idx, None, None, self.k_samples) if want_cache else None
            return out, cache
        k = self.k_samples
        ts = sample_ts_batch(t_near[hit_idx], t_far[hit_idx], k)  # (H, K)
        # time-major points (K, H, 3): matches the decoder's internal layout
        pts = o2[None, hit_idx, :] + ts.T[:, :, None] * d2[None, hit_idx, :]
        feats, gcache = self.grid.point_features(
            pts.reshape(-1, 3), mask=mask, want_cache=want_cache
        )
        dir_enc = sh_encode_batch(d[hit_idx] / norms[hit_idx, None])
        rgb, dcache = self.decoder.forward(
            feats.reshape(k, hit_idx.size, -1),
            dir_enc,
            want_cache=want_cache,
            time_major=True,
        )
        out[hit_idx] = rgb
        cache = (
            _RenderCache(n, hit_idx, gcache, dcache, k) if want_cache else None
        )
        return out, cache

    def backward(
        self,
        cache: _RenderCache,
        upstream: np.ndarray,
        grid_grads: np.ndarray,
        decoder_grads: np.ndarray,
    ) -> None:
        """Accumulate gradients for a previous ray_colors(want_cache=True) call.

        ``upstream`` is d(loss)/d(rgb) for the full batch, shape (n, 3); rows
        for rays that missed the box are ignored (background is constant).
        """
        if cache is None:
            raise RuntimeError("backward requires a cache from ray_colors(want_cache=True)")
        up = np.asarray(upstream)
        if up.shape != (cache.n, 3):
            raise ValueError(f"upstream must be ({cache.n}, 3), got {up.shape}")
        if cache.hit_idx.size == 0:
            return
        dfeats = self.decoder.backward(
            cache.decoder_cache, up[cache.hit_idx], decoder_grads, time_major=True
        )
        self.grid.point_features_backward(
            cache.grid_cache,
            dfeats.reshape(cache.k * cache.hit_idx.size, -1),
            grid_grads,
        )

    def render_ray(self, ray: Ray, mask: LevelMask | None = None) -> np.ndarray:
        """Color of a single ray; background if it misses the scene box."""
        rgb, _ = self.ray_colors(ray.origin[None], ray.direction[None], mask=mask)
        return rgb[0]
