"""Recurrent ray color decoder.

A ray is presented to the decoder as an ordered sequence of K grid feature
vectors (near to far). Stacked LSTM cells consume one sample per step, with
the encoded view direction re-appended to every step's input, and a small
two-layer head (affine, ReLU, affine, sigmoid) maps the final top-layer
hidden state to RGB. Order matters: the recurrence lets late samples be
gated by what was already seen, which is what stands in for occlusion
handling without any explicit density integration.

Everything is plain numpy with an exact hand-written backward pass. All
parameters live in one flat array so the optimizer can treat the decoder as
a single parameter group.

Performance notes, since this is the training hot path on a CPU:
  - all sequence buffers are time-major (K, B, width) so every per-step slab
    is contiguous; per-step work is done in place into those slabs;
  - sigmoid goes through tanh (0.5 + 0.5*tanh(x/2)), which is several times
    faster than a generic expit ufunc and agrees to float round-off;
  - input projections and weight-gradient reductions run as one big matmul
    over all K steps; only the recurrent term stays inside the loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gridenc import SH_DIM

# gate block order inside every 4h-row weight/bias: input, forget, cell, output
GATES = ("i", "f", "g", "o")


def sigmoid(x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Numerically clean logistic function, in place when ``out`` is given."""
    out = np.multiply(x, 0.5, out=out)
    np.tanh(out, out=out)
    out *= 0.5
    out += 0.5
    return out


@dataclass(frozen=True)
class DecoderConfig:
    """Decoder shape. ``input_dim`` is the full per-step width: N + 16."""

    hidden_size: int
    num_layers: int
    input_dim: int
    mlp_hidden: int = 0  # 0 -> default 2 * hidden_size

    def __post_init__(self):
        if self.hidden_size < 1 or self.num_layers < 1:
            raise ValueError("hidden_size and num_layers must be >= 1")
        if self.input_dim <= SH_DIM:
            raise ValueError(f"input_dim must exceed the {SH_DIM}-dim direction code")
        if self.mlp_hidden == 0:
            object.__setattr__(self, "mlp_hidden", 2 * self.hidden_size)
        if self.mlp_hidden < 1:
            raise ValueError("mlp_hidden must be >= 1")

    @property
    def feature_dim(self) -> int:
        """Width of the grid feature part of each step input."""
        return self.input_dim - SH_DIM


def expected_param_count(cfg: DecoderConfig) -> int:
    """Closed-form scalar count: sum over layers of 4h(in_l + h + 2), plus head."""
    h, m = cfg.hidden_size, cfg.mlp_hidden
    total = 0
    for layer in range(cfg.num_layers):
        in_l = cfg.input_dim if layer == 0 else h
        total += 4 * h * (in_l + h + 2)
    total += h * m + m
    total += m * 3 + 3
    return total


@dataclass
class _LayerViews:
    W: np.ndarray  # (4h, in)
    U: np.ndarray  # (4h, h)
    b_ih: np.ndarray  # (4h,)
    b_hh: np.ndarray  # (4h,)


@dataclass
class _Cache:
    """Per-batch forward state kept for backpropagation through time.

    Sequence arrays are time-major. Per layer: post-activation gate arrays
    i, f, g, o, cell states c, tanh(c), and hiddens H, each (K, B, h) and
    contiguous so the reverse loop streams through them."""

    x: np.ndarray  # (K, B, input_dim) step inputs of layer 0
    layers: list = field(default_factory=list)
    h_last: np.ndarray | None = None  # (B, h) top-layer H_K
    a1: np.ndarray | None = None  # (B, m) head pre-activation
    z1: np.ndarray | None = None  # (B, m) after ReLU
    rgb: np.ndarray | None = None  # (B, 3)


class RayColorDecoder:
    """Stacked LSTM cells + output head over flat parameter storage.

    Layout of ``params``: per layer W, U, b_ih, b_hh; then head W1, b1, W2, b2.
    The order is fixed so serialized checkpoints stay portable.
    """

    def __init__(self, cfg: DecoderConfig, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.params = np.zeros(expected_param_count(cfg), dtype=self.dtype)
        self.layers: list[_LayerViews] = []
        self._head = None
        self._build_views()

    def _build_views(self):
        h = self.cfg.hidden_size
        p = self.params
        off = 0

        def take(shape):
            nonlocal off
            n = int(np.prod(shape))
            view = p[off : off + n].reshape(shape)
            off += n
            return view

        for layer in range(self.cfg.num_layers):
            in_l = self.cfg.input_dim if layer == 0 else h
            self.layers.append(
                _LayerViews(
                    W=take((4 * h, in_l)),
                    U=take((4 * h, h)),
                    b_ih=take((4 * h,)),
                    b_hh=take((4 * h,)),
                )
            )
        m = self.cfg.mlp_hidden
        self._head = _LayerViews(  # reuse the container: W=W1, U=W2, b_ih=b1, b_hh=b2
            W=take((m, h)), U=take((3, m)), b_ih=take((m,)), b_hh=take((3,))
        )
        if off != p.size:
            raise AssertionError("parameter layout does not cover the flat array")

    @property
    def param_count(self) -> int:
        return self.params.size

    def head_views(self):
        """(W1, b1, W2, b2) of the output head."""
        hd = self._head
        return hd.W, hd.b_ih, hd.U, hd.b_hh

    def init_params(self, rng: np.random.Generator):
        """Uniform ±1/sqrt(hidden) for recurrent blocks, ±1/sqrt(fan_in) for the
        head; biases zero except the forget-gate rows of b_ih at +1.0."""
        h = self.cfg.hidden_size
        bound = 1.0 / np.sqrt(h)
        for lv in self.layers:
            lv.W[:] = rng.uniform(-bound, bound, lv.W.shape)
            lv.U[:] = rng.uniform(-bound, bound, lv.U.shape)
            lv.b_ih[:] = 0.0
            lv.b_hh[:] = 0.0
            lv.b_ih[h : 2 * h] = 1.0
        W1, b1, W2, b2 = self.head_views()
        mb = 1.0 / np.sqrt(self.cfg.mlp_hidden)
        W1[:] = rng.uniform(-bound, bound, W1.shape)
        W2[:] = rng.uniform(-mb, mb, W2.shape)
        b1[:] = 0.0
        b2[:] = 0.0

    # -- single-cell contract -------------------------------------------------

    def lstm_cell_forward(self, layer: int, x, h_prev, c_prev):
        """One cell step. Gates i, f, o are sigmoid, g is tanh, of
        W·x + U·h_prev + b_ih + b_hh split in (i, f, g, o) row order;
        C = f*C_prev + i*g; H = o*tanh(C)."""
        lv = self.layers[layer]
        hs = self.cfg.hidden_size
        x = np.asarray(x, dtype=self.dtype)
        a = lv.W @ x + lv.U @ np.asarray(h_prev, dtype=self.dtype) + lv.b_ih + lv.b_hh
        i = sigmoid(a[:hs])
        f = sigmoid(a[hs : 2 * hs])
        g = np.tanh(a[2 * hs : 3 * hs])
        o = sigmoid(a[3 * hs :])
        c = f * np.asarray(c_prev, dtype=self.dtype) + i * g
        return o * np.tanh(c), c

    def output_head(self, h) -> np.ndarray:
        """affine -> ReLU -> affine -> sigmoid on a hidden state."""
        W1, b1, W2, b2 = self.head_views()
        z = np.maximum(W1 @ np.asarray(h, dtype=self.dtype) + b1, 0.0)
        return sigmoid(W2 @ z + b2)

    def decode_ray(self, feature_seq: np.ndarray, dir_enc: np.ndarray) -> np.ndarray:
        """RGB in (0,1)^3 for one ray's (K, N) feature sequence + 16-dim code."""
        rgb, _ = self.forward(
            np.asarray(feature_seq)[None], np.asarray(dir_enc)[None], want_cache=False
        )
        return rgb[0]

    # -- batched forward / backward -------------------------------------------

    def forward(
        self,
        features: np.ndarray,
        dir_enc: np.ndarray,
        want_cache: bool = False,
        time_major: bool = False,
    ):
        """Decode a batch: ``(B, K, N)`` features + ``(B, 16)`` codes -> ``(B, 3)``.

        ``time_major=True`` treats ``features`` as ``(K, B, N)`` instead,
        which skips an internal transpose (the render/training path already
        produces sample-major data). The direction code is appended to every
        step's input. Returns ``(rgb, cache)``.
        """
        feats = np.asarray(features, dtype=self.dtype)
        denc = np.asarray(dir_enc, dtype=self.dtype)
        if feats.ndim != 3 or feats.shape[2] != self.cfg.feature_dim:
            raise ValueError(
                f"features must be 3-d with last dim {self.cfg.feature_dim}, got {feats.shape}"
            )
        if not time_major:
            feats = feats.transpose(1, 0, 2)
        K, B, _ = feats.shape
        if denc.shape != (B, SH_DIM):
            raise ValueError(f"dir_enc must be ({B}, {SH_DIM}), got {denc.shape}")
        if not np.isfinite(feats).all():
            raise ValueError("features contain non-finite values")
        hs = self.cfg.hidden_size

        x = np.empty((K, B, self.cfg.input_dim), dtype=self.dtype)
        x[:, :, : self.cfg.feature_dim] = feats
        x[:, :, self.cfg.feature_dim :] = denc[None, :, :]

        cache = _Cache(x=x) if want_cache else None
        layer_in = x
        H = None
        ig = np.empty((B, hs), dtype=self.dtype)
        tc_buf = np.empty((B, hs), dtype=self.dtype)
        for lv in self.layers:
            # per-gate input contributions for every step in four matmuls
            # (gate row blocks of W/b are contiguous slices in i,f,g,o order)
            x2 = layer_in.reshape(K * B, -1)
            pre = []
            for gi in range(4):
                rows = slice(gi * hs, (gi + 1) * hs)
                p = x2 @ lv.W[rows].T
                p += lv.b_ih[rows] + lv.b_hh[rows]
                pre.append(p.reshape(K, B, hs))
            H = np.empty((K, B, hs), dtype=self.dtype)
            if want_cache:
                slab = lambda: np.empty((K, B, hs), dtype=self.dtype)
                I, F, G, O = slab(), slab(), slab(), slab()
                c_all, tc_all = slab(), slab()
            else:
                buf = lambda: np.empty((B, hs), dtype=self.dtype)
                I = F = G = O = None
                ib, fb, gb, ob = buf(), buf(), buf(), buf()
            h = np.zeros((B, hs), dtype=self.dtype)
            c = np.zeros((B, hs), dtype=self.dtype)
            Ui = lv.U[:hs].T
            Uf = lv.U[hs : 2 * hs].T
            Ug = lv.U[2 * hs : 3 * hs].T
            Uo = lv.U[3 * hs :].T
            for t in range(K):
                if want_cache:
                    it, ft, gt, ot = I[t], F[t], G[t], O[t]
                else:
                    it, ft, gt, ot = ib, fb, gb, ob
                np.dot(h, Ui, out=it)
                it += pre[0][t]
                sigmoid(it, out=it)
                np.dot(h, Uf, out=ft)
                ft += pre[1][t]
                sigmoid(ft, out=ft)
                np.dot(h, Ug, out=gt)
                gt += pre[2][t]
                np.tanh(gt, out=gt)
                np.dot(h, Uo, out=ot)
                ot += pre[3][t]
                sigmoid(ot, out=ot)
                np.multiply(ft, c, out=c)
                np.multiply(it, gt, out=ig)
                c += ig
                h = H[t]
                if want_cache:
                    c_all[t] = c
                    tc = tc_all[t]
                else:
                    tc = tc_buf
                np.tanh(c, out=tc)
                np.multiply(ot, tc, out=h)
            if want_cache:
                cache.layers.append(
                    {"i": I, "f": F, "g": G, "o": O, "c": c_all, "tc": tc_all, "H": H}
                )
            layer_in = H

        h_last = H[K - 1]
        W1, b1, W2, b2 = self.head_views()
        a1 = h_last @ W1.T + b1
        z1 = np.maximum(a1, 0.0)
        rgb = sigmoid(z1 @ W2.T + b2)
        if want_cache:
            cache.h_last = h_last
            cache.a1 = a1
            cache.z1 = z1
            cache.rgb = rgb
        return rgb, cache

    def backward(
        self,
        cache: _Cache,
        upstream: np.ndarray,
        grads: np.ndarray,
        time_major: bool = False,
    ) -> np.ndarray:
        """BPTT. Accumulates parameter gradients into ``grads`` (same flat
        layout as ``params``) and returns d(loss)/d(features), shaped like
        the features passed to forward (``time_major`` must match). The
        direction-code part of each step input is a broadcast constant, so
        its gradient is dropped.
        """
        if cache is None or cache.rgb is None:
            raise RuntimeError("backward requires the cache from forward(want_cache=True)")
        up = np.asarray(upstream, dtype=self.dtype)
        K, B, _ = cache.x.shape
        hs = self.cfg.hidden_size
        if up.shape != (B, 3):
            raise ValueError(f"upstream must be ({B}, 3), got {up.shape}")

        gview = RayColorDecoder.__new__(RayColorDecoder)
        gview.cfg = self.cfg
        gview.dtype = self.dtype
        gview.params = grads
        gview.layers = []
        gview._build_views()

        # head
        W1, b1, W2, b2 = self.head_views()
        gW1, gb1, gW2, gb2 = gview.head_views()
        da2 = up * cache.rgb * (1.0 - cache.rgb)
        gW2 += da2.T @ cache.z1
        gb2 += da2.sum(axis=0)
        da1 = (da2 @ W2) * (cache.a1 > 0)
        gW1 += da1.T @ cache.h_last
        gb1 += da1.sum(axis=0)
        dh_head = da1 @ W1  # (B, h), lands on top-layer H at t = K-1

        dh = np.empty((B, hs), dtype=self.dtype)
        dc = np.empty((B, hs), dtype=self.dtype)
        scratch = np.empty((B, hs), dtype=self.dtype)
        gemm = np.empty((B, hs), dtype=self.dtype)
        d_ext = None  # (K, B, h) gradient arriving at this layer's H from above
        for layer in range(self.cfg.num_layers - 1, -1, -1):
            lv, glv = self.layers[layer], gview.layers[layer]
            st = cache.layers[layer]
            I, F, G, O = st["i"], st["f"], st["g"], st["o"]
            c_all, tc_all, H = st["c"], st["tc"], st["H"]
            slab = lambda: np.empty((K, B, hs), dtype=self.dtype)
            dI, dF, dG, dO = slab(), slab(), slab(), slab()
            Ui = lv.U[:hs]
            Uf = lv.U[hs : 2 * hs]
            Ug = lv.U[2 * hs : 3 * hs]
            Uo = lv.U[3 * hs :]
            dh[:] = 0.0
            dc[:] = 0.0
            for t in range(K - 1, -1, -1):
                if d_ext is not None:
                    dh += d_ext[t]
                elif t == K - 1:
                    dh += dh_head
                it, ft, gt, ot = I[t], F[t], G[t], O[t]
                tct = tc_all[t]
                # dc += dh * o * (1 - tc^2)
                np.multiply(tct, tct, out=scratch)
                np.subtract(1.0, scratch, out=scratch)
                scratch *= ot
                scratch *= dh
                dc += scratch
                # pre-activation gradients via gate derivatives
                di, df, dg, do = dI[t], dF[t], dG[t], dO[t]
                np.multiply(dc, gt, out=di)
                di *= it
                np.subtract(1.0, it, out=scratch)
                di *= scratch
                if t > 0:
                    np.multiply(dc, c_all[t - 1], out=df)
                    df *= ft
                    np.subtract(1.0, ft, out=scratch)
                    df *= scratch
                else:
                    df[:] = 0.0  # c_prev is zero
                np.multiply(gt, gt, out=dg)
                np.subtract(1.0, dg, out=dg)
                dg *= dc
                dg *= it
                np.multiply(dh, tct, out=do)
                do *= ot
                np.subtract(1.0, ot, out=scratch)
                do *= scratch
                np.dot(di, Ui, out=dh)
                np.dot(df, Uf, out=gemm)
                dh += gemm
                np.dot(dg, Ug, out=gemm)
                dh += gemm
                np.dot(do, Uo, out=gemm)
                dh += gemm
                dc *= ft
            layer_in = cache.x if layer == 0 else cache.layers[layer - 1]["H"]
            x2 = layer_in.reshape(K * B, -1)
            h_prev = np.concatenate(
                [np.zeros((1, B, hs), dtype=self.dtype), H[:-1]], axis=0
            ).reshape(K * B, hs)
            d_in = None
            for gi, dGate in enumerate((dI, dF, dG, dO)):
                rows = slice(gi * hs, (gi + 1) * hs)
                flat = dGate.reshape(K * B, hs)
                glv.W[rows] += flat.T @ x2
                glv.U[rows] += flat.T @ h_prev
                db = flat.sum(axis=0)
                glv.b_ih[rows] += db
                glv.b_hh[rows] += db
                if d_in is None:
                    d_in = flat @ lv.W[rows]
                else:
                    d_in += flat @ lv.W[rows]
            d_ext = d_in.reshape(K, B, -1)
        dfeats = d_ext[:, :, : self.cfg.feature_dim]
        if time_major:
            return np.ascontiguousarray(dfeats)
        return np.ascontiguousarray(dfeats.transpose(1, 0, 2))
