"""Scikit-learn style regressor wrapping the ray-to-color model.

X rows are rays (origin xyz, direction xyz), y rows are RGB targets in
[0, 1]. fit() trains on the supplied rays directly, which suits desk-scale
experiments and pipelines that already do their own ray bookkeeping; the
dataset-level entry points in pipeline/cli remain the way to train on posed
images.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .geometry import Aabb
from .model import LightField
from .optim import AdamHyper, NonFiniteGradient, ParamGroup, adam_step, mse_loss
from .pipeline import get_preset
from .validation import check_color_array, check_ray_array


class LightFieldRegressor(BaseEstimator, RegressorMixin):
    """Ray-supervised light field with a fit/predict surface.

    Parameters
    ----------
    preset : str, default "tiny-test"
        Named size configuration (tiny-test, small, medium, large).
    n_steps : int, default 2000
        Adam steps over minibatches drawn from (X, y).
    batch_size : int, default 512
    lr_grid, lr_decoder : float or None
        Learning-rate overrides; None keeps the preset values.
    aabb : (2, 3) array-like or None
        Scene bounds; None uses the unit box spanned by [-1, 1].
    background : 3-tuple
        Color returned for rays that miss the bounds.
    seed : int
        Controls init and batch sampling; fixed seed gives bit-identical fits.
    """

    def __init__(
        self,
        preset="tiny-test",
        n_steps=2000,
        batch_size=512,
        lr_grid=None,
        lr_decoder=None,
        aabb=None,
        background=(0.0, 0.0, 0.0),
        seed=0,
    ):
        self.preset = preset
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.lr_grid = lr_grid
        self.lr_decoder = lr_decoder
        self.aabb = aabb
        self.background = background
        self.seed = seed

    def _make_model(self):
        cfg = get_preset(self.preset)
        if self.lr_grid is not None:
            cfg = dataclasses.replace(cfg, lr_grid=self.lr_grid)
        if self.lr_decoder is not None:
            cfg = dataclasses.replace(cfg, lr_decoder=self.lr_decoder)
        if self.aabb is None:
            box = Aabb(np.full(3, -1.0), np.full(3, 1.0))
        else:
            arr = np.asarray(self.aabb, dtype=np.float64)
            box = Aabb(arr[0], arr[1])
        model = LightField(
            grid_cfg=cfg.grid,
            aabb=box,
            hidden_size=cfg.hidden_size,
            num_layers=cfg.num_layers,
            k_samples=cfg.k_samples,
            background=tuple(self.background),
        )
        model.init_params(self.seed)
        return model, cfg

    def fit(self, X, y):
        """Train from scratch on rays X (n, 6) and colors y (n, 3)."""
        X = check_ray_array(X)
        y = check_color_array(y, n=X.shape[0])
        if X.shape[0] == 0:
            raise ValueError("cannot fit on an empty ray set")
        self.model_, self._cfg = self._make_model()
        self._groups = {
            "grid": ParamGroup(
                "grid", self.model_.grid.values, AdamHyper(lr=self._cfg.lr_grid)
            ),
            "decoder": ParamGroup(
                "decoder", self.model_.decoder.params, AdamHyper(lr=self._cfg.lr_decoder)
            ),
        }
        self._rng = np.random.default_rng(self.seed)
        self._step = 0
        self.n_features_in_ = 6
        return self._run_steps(X, y, self.n_steps)

    def partial_fit(self, X, y):
        """Continue training on more rays; first call behaves like fit."""
        if not hasattr(self, "model_"):
            return self.fit(X, y)
        X = check_ray_array(X)
        y = check_color_array(y, n=X.shape[0])
        return self._run_steps(X, y, self.n_steps)

    def _run_steps(self, X, y, n_steps):
        n = X.shape[0]
        total = self._step + n_steps
        for _ in range(n_steps):
            idx = self._rng.integers(0, n, size=min(self.batch_size, n))
            out, cache = self.model_.ray_colors(X[idx, :3], X[idx, 3:], want_cache=True)
            loss, dloss = mse_loss(out, y[idx])
            if not math.isfinite(loss):
                raise NonFiniteGradient(f"loss became non-finite at step {self._step}")
            self._step += 1
            if cache.hit_idx.size == 0:
                continue
            self.model_.backward(
                cache,
                dloss.astype(np.float32),
                self._groups["grid"].grads,
                self._groups["decoder"].grads,
            )
            decay = self._cfg.lr_decay ** (self._step / max(total, 1))
            adam_step(self._groups["grid"], lr=self._cfg.lr_grid * decay)
            adam_step(self._groups["decoder"], lr=self._cfg.lr_decoder * decay)
        return self

    def predict(self, X):
        """Colors for rays X (n, 3 origins + 3 directions) as float64 (n, 3)."""
        if not hasattr(self, "model_"):
            raise AttributeError("this LightFieldRegressor is not fitted yet")
        X = check_ray_array(X)
        out, _ = self.model_.ray_colors(X[:, :3], X[:, 3:])
        return np.asarray(out, dtype=np.float64)
