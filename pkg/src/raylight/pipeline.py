"""Training, rendering, metrics, ablations, and the preset registry.

The training loop is plain SGD machinery: sample random (frame, pixel)
pairs, render those rays with activation caching, push the MSE gradient
back through the decoder and the grid, and take one Adam step per
parameter group. Everything is deterministic given the config seed when
run sequentially.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.signal import convolve2d

from .dataio import load_checkpoint, model_from_checkpoint, save_checkpoint
from .geometry import generate_rays
from .gridenc import GridConfig, LevelMask, grid_similarity
from .model import SCENE_MODES, LightField, NdcParams
from .optim import AdamHyper, NonFiniteGradient, ParamGroup, adam_step, mse_loss

# Image rendering is partitioned into fixed row blocks regardless of thread
# count, so parallel and sequential renders are bit-identical.
_ROW_BLOCK = 32


@dataclasses.dataclass
class PresetConfig:
    """Everything a training run needs, mirrored 1:1 by the JSON config file."""

    name: str
    grid: GridConfig
    hidden_size: int
    num_layers: int
    mlp_hidden: int = 0  # 0 = twice the hidden size
    k_samples: int = 256
    scene_mode: str = "aabb-360"
    background: tuple = (1.0, 1.0, 1.0)
    lr_grid: float = 1e-2
    lr_decoder: float = 1e-3
    lr_decay: float = 0.1  # lr multiplier reached at the end of the run
    batch_size: int = 512
    total_steps: int = 20000
    seed: int = 0
    val_every: int = 1000
    val_views: int = 4
    val_scale: int = 2
    checkpoint_every: int = 1000
    stop_psnr: float = 0.0  # early-stop once val PSNR reaches this; 0 disables

    def __post_init__(self):
        if self.scene_mode not in SCENE_MODES:
            raise ValueError(f"scene_mode must be one of {SCENE_MODES}")
        if self.k_samples < 1 or self.batch_size < 1:
            raise ValueError("k_samples and batch_size must be positive")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.val_scale not in (1, 2, 4, 8):
            raise ValueError("val_scale must be one of 1, 2, 4, 8")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must be in (0, 1]")
        self.background = tuple(float(b) for b in self.background)
        if len(self.background) != 3 or any(
            not 0.0 <= b <= 1.0 for b in self.background
        ):
            raise ValueError("background must be 3 values in [0, 1]")


def get_preset(name):
    """Named configurations. small/medium/large follow the published ladder;
    tiny-test is sized so the acceptance suite runs in minutes."""
    if name == "tiny-test":
        return PresetConfig(
            name="tiny-test",
            grid=GridConfig(levels=4, r_min=16, r_max=128, feature_dim=2, table_cap=2**12),
            hidden_size=32,
            num_layers=2,
            k_samples=64,
            background=(0.0, 0.0, 0.0),
            # grid tables tolerate a hotter lr than the decoder; 3e-2 measured
            # best on toy-scene sweeps
            lr_grid=3e-2,
            batch_size=512,
            total_steps=20000,
        )
    if name == "small":
        return PresetConfig(
            name="small",
            grid=GridConfig(levels=8, r_min=16, r_max=1024, feature_dim=2, table_cap=2**14),
            hidden_size=32,
            num_layers=2,
            k_samples=256,
            batch_size=1024,
            total_steps=200000,
        )
    if name == "medium":
        return PresetConfig(
            name="medium",
            grid=GridConfig(levels=8, r_min=16, r_max=1024, feature_dim=2, table_cap=2**14),
            hidden_size=128,
            num_layers=2,
            k_samples=256,
            batch_size=1024,
            total_steps=200000,
        )
    if name == "large":
        return PresetConfig(
            name="large",
            grid=GridConfig(levels=16, r_min=16, r_max=2048, feature_dim=2, table_cap=2**16),
            hidden_size=128,
            num_layers=3,
            k_samples=256,
            batch_size=1024,
            total_steps=200000,
        )
    raise ValueError(f"unknown preset {name!r}; expected tiny-test/small/medium/large")


PRESET_NAMES = ("tiny-test", "small", "medium", "large")


def config_to_dict(cfg):
    d = dataclasses.asdict(cfg)
    d["grid"] = dataclasses.asdict(cfg.grid)
    d["background"] = list(cfg.background)
    return d


_GRID_FIELDS = {f.name for f in dataclasses.fields(GridConfig)}
_CFG_FIELDS = {f.name for f in dataclasses.fields(PresetConfig)}


def config_from_dict(d):
    """Build a config from a dict: start from the named preset, then apply
    the remaining keys. Unknown keys are rejected."""
    d = dict(d)
    name = d.pop("name", "tiny-test")
    cfg = get_preset(name)
    grid_over = d.pop("grid", None)
    unknown = set(d) - _CFG_FIELDS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if grid_over is not None:
        bad = set(grid_over) - _GRID_FIELDS
        if bad:
            raise ValueError(f"unknown grid config keys: {sorted(bad)}")
        cfg = dataclasses.replace(cfg, grid=dataclasses.replace(cfg.grid, **grid_over))
    if "background" in d:
        d["background"] = tuple(d["background"])
    if d.get("scene_mode") == "ndc-forward" and "k_samples" not in d:
        d["k_samples"] = 128  # forward-facing default sequence length
    return dataclasses.replace(cfg, **d)


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            d = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ValueError(f"cannot load config {path}: {e}") from e
    return config_from_dict(d)


def apply_overrides(cfg, assignments):
    """Apply --set style dotted key=value overrides to a config.

    Values are parsed as JSON where possible, otherwise taken as strings.
    """
    d = config_to_dict(cfg)
    updates = {}
    for a in assignments:
        if "=" not in a:
            raise ValueError(f"override {a!r} is not key=value")
        key, raw = a.split("=", 1)
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        if key.startswith("grid."):
            sub = key[len("grid.") :]
            if sub not in _GRID_FIELDS:
                raise ValueError(f"unknown grid config key {sub!r}")
            d.setdefault("grid", {})
            d["grid"][sub] = val
        elif key in _CFG_FIELDS:
            d[key] = val
            updates[key] = val
        else:
            raise ValueError(f"unknown config key {key!r}")
    if updates.get("scene_mode") == "ndc-forward" and "k_samples" not in updates:
        d["k_samples"] = 128  # forward-facing default sequence length
    return config_from_dict(d)


@dataclasses.dataclass
class TrainLog:
    """Line-oriented training record: one dict per step, strictly increasing."""

    seed: int
    records: list = dataclasses.field(default_factory=list)
    diverged: bool = False

    def append(self, step, **fields):
        if self.records and step <= self.records[-1]["step"]:
            raise ValueError(
                f"log steps must strictly increase ({step} after {self.records[-1]['step']})"
            )
        rec = {"step": int(step), **fields}
        self.records.append(rec)
        return rec

    def write_jsonl(self, path):
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(json.dumps({"kind": "train-log", "seed": self.seed, "diverged": self.diverged}) + "\n")
            for rec in self.records:
                f.write(json.dumps(rec) + "\n")
        os.replace(tmp, path)

    @staticmethod
    def read_jsonl(path):
        with open(path, "r", encoding="utf-8") as f:
            lines = [json.loads(ln) for ln in f if ln.strip()]
        if not lines or lines[0].get("kind") != "train-log":
            raise ValueError(f"{path}: not a training log")
        log = TrainLog(seed=lines[0]["seed"], diverged=lines[0].get("diverged", False))
        for rec in lines[1:]:
            log.append(rec.pop("step"), **rec)
        return log


def build_model(cfg, dataset, dtype=np.float32):
    """Instantiate an untrained model sized by cfg for this dataset.

    The model background comes from the dataset so misses reproduce the
    compositing used when the images were made.
    """
    ndc = None
    if cfg.scene_mode == "ndc-forward":
        near = dataset.near if dataset.near is not None else 1.0
        intr = dataset.intrinsics
        ndc = NdcParams(focal=intr.focal, width=intr.width, height=intr.height, near=near)
    return LightField(
        grid_cfg=cfg.grid,
        aabb=dataset.aabb,
        hidden_size=cfg.hidden_size,
        num_layers=cfg.num_layers,
        k_samples=cfg.k_samples,
        background=tuple(dataset.background),
        scene_mode=cfg.scene_mode,
        ndc=ndc,
        mlp_hidden=cfg.mlp_hidden,
        dtype=dtype,
    )


def _camera_dirs(intr):
    # camera-frame direction per pixel, row-major, matching generate_rays
    jj, ii = np.meshgrid(np.arange(intr.height), np.arange(intr.width), indexing="ij")
    return np.stack(
        [
            (ii.ravel() - intr.cx) / intr.focal,
            -(jj.ravel() - intr.cy) / intr.focal,
            -np.ones(intr.width * intr.height),
        ],
        axis=-1,
    )


def train(
    cfg,
    dataset,
    val_data=None,
    out_dir=None,
    resume=None,
    threads=1,
    log_path=None,
):
    """Run the training loop. Returns (model, TrainLog).

    Per step: cfg.batch_size random (frame, pixel) pairs, one forward/backward
    over the rays that hit the scene bounds, one Adam step per group with the
    exponential learning-rate schedule. A batch whose rays all miss updates
    nothing. Validation PSNR is computed every cfg.val_every steps on up to
    cfg.val_views views of val_data at cfg.val_scale.

    A non-finite loss or gradient aborts the run; the returned model is then
    the last checkpointed state (log.diverged is set). resume loads model and
    optimizer state from a checkpoint path and continues its step numbering.
    The loop itself is sequential; threads only parallelizes validation
    renders.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    start_step = 0
    wall_offset = 0.0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        if ckpt.header.get("precision") != "f32" or "optimizer" not in ckpt.header:
            raise ValueError(f"{resume}: not a resumable f32 training checkpoint")
        model = model_from_checkpoint(ckpt)
        start_step = int(ckpt.header["step"])
        wall_offset = float(ckpt.header.get("extra", {}).get("wall", 0.0))
    else:
        model = build_model(cfg, dataset)
        model.init_params(cfg.seed)

    groups = {
        "grid": ParamGroup("grid", model.grid.values, AdamHyper(lr=cfg.lr_grid)),
        "decoder": ParamGroup("decoder", model.decoder.params, AdamHyper(lr=cfg.lr_decoder)),
    }
    if resume is not None:
        for gname, grp in groups.items():
            meta = ckpt.header["optimizer"][gname]
            grp.m[...] = ckpt.tensors[f"adam.{gname}.m"]
            grp.v[...] = ckpt.tensors[f"adam.{gname}.v"]
            grp.t = int(meta["t"])

    # stack frames once; per-pixel camera dirs are shared across frames
    rots = np.stack([p.rotation for p, _ in dataset.frames])
    trans = np.stack([p.translation for p, _ in dataset.frames])
    images = np.stack([im for _, im in dataset.frames]).astype(np.float32)
    n_frames, h, w = images.shape[:3]
    images = images.reshape(n_frames, h * w, 3)
    dcam = _camera_dirs(dataset.intrinsics)

    # a fresh run and a resumed one must not replay identical batches
    rng = np.random.default_rng(cfg.seed + (start_step << 20))
    log = TrainLog(seed=cfg.seed)
    ckpt_path = os.path.join(out_dir, "checkpoint.gnlf") if out_dir else None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    def save(step):
        if ckpt_path:
            save_checkpoint(
                ckpt_path,
                model,
                step=step,
                preset=cfg.name,
                groups=groups,
                intrinsics=dataset.intrinsics,
                extra={"wall": wall_offset + time.perf_counter() - t0},
            )

    t0 = time.perf_counter()
    step = start_step
    stop = False
    for step in range(start_step + 1, cfg.total_steps + 1):
        fidx = rng.integers(0, n_frames, size=cfg.batch_size)
        pix = rng.integers(0, h * w, size=cfg.batch_size)
        dirs = np.einsum("nij,nj->ni", rots[fidx], dcam[pix])
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = trans[fidx]
        targets = images[fidx, pix].astype(np.float64)

        out, cache = model.ray_colors(origins, dirs, want_cache=True)
        loss, dloss = mse_loss(out, targets)
        diverged = not math.isfinite(loss)
        if not diverged and cache.hit_idx.size:
            model.backward(
                cache,
                dloss.astype(np.float32),
                groups["grid"].grads,
                groups["decoder"].grads,
            )
            decay = cfg.lr_decay ** (step / cfg.total_steps)
            try:
                adam_step(groups["grid"], lr=cfg.lr_grid * decay)
                adam_step(groups["decoder"], lr=cfg.lr_decoder * decay)
            except NonFiniteGradient:
                diverged = True
        if diverged:
            log.diverged = True
            log.append(step, loss=float(loss), wall=wall_offset + time.perf_counter() - t0, diverged=True)
            if ckpt_path and os.path.exists(ckpt_path):
                model = model_from_checkpoint(load_checkpoint(ckpt_path))
            break

        rec = log.append(step, loss=loss, wall=wall_offset + time.perf_counter() - t0)
        if val_data is not None and cfg.val_every and step % cfg.val_every == 0:
            metrics = evaluate(
                model,
                val_data,
                scale=cfg.val_scale,
                threads=threads,
                max_views=cfg.val_views,
            )
            rec["val_psnr"] = metrics["psnr"]
            rec["val_ssim"] = metrics["ssim"]
            if cfg.stop_psnr and metrics["psnr"] >= cfg.stop_psnr:
                rec["stopped_early"] = True
                stop = True
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save(step)
        if stop:
            break

    if not log.diverged:
        save(step)
    if log_path is None and out_dir:
        log_path = os.path.join(out_dir, "train_log.jsonl")
    if log_path:
        log.write_jsonl(log_path)
    return model, log


def render_image(model, intrinsics, pose, scale=1, threads=1, mask=None):
    """Render a full image at 1/scale resolution. Returns H x W x 3 float64.

    Rows are processed in fixed-size blocks; with threads > 1 the same blocks
    render concurrently, so output bits never depend on the thread count.
    """
    if scale not in (1, 2, 4, 8):
        raise ValueError("scale must be one of 1, 2, 4, 8")
    cam = intrinsics.scaled(scale)
    blocks = [
        (r0, min(r0 + _ROW_BLOCK, cam.height)) for r0 in range(0, cam.height, _ROW_BLOCK)
    ]

    def render_block(block):
        r0, r1 = block
        jj, ii = np.meshgrid(np.arange(r0, r1), np.arange(cam.width), indexing="ij")
        origins, dirs = generate_rays(cam, pose, ii.ravel(), jj.ravel())
        rgb, _ = model.ray_colors(origins, dirs, mask=mask)
        return rgb.reshape(r1 - r0, cam.width, 3)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(render_block, blocks))
    else:
        parts = [render_block(b) for b in blocks]
    return np.concatenate(parts, axis=0)


def psnr(img, ref):
    """Peak signal-to-noise ratio in dB for [0, 1] images, capped at 99."""
    a = np.asarray(img, dtype=np.float64)
    b = np.asarray(ref, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean(np.square(a - b)))
    if mse == 0.0:
        return 99.0
    return min(99.0, -10.0 * math.log10(mse))


def _gaussian_window(size=11, sigma=1.5):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ssim(img, ref, window=11, sigma=1.5):
    """Structural similarity: Gaussian-windowed, valid-region, channel mean."""
    a = np.asarray(img, dtype=np.float64)
    b = np.asarray(ref, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"image smaller than the {window}x{window} window")
    kern = _gaussian_window(window, sigma)
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for c in range(a.shape[2]):
        x, y = a[:, :, c], b[:, :, c]
        mu1 = convolve2d(x, kern, mode="valid")
        mu2 = convolve2d(y, kern, mode="valid")
        s11 = convolve2d(x * x, kern, mode="valid") - mu1 * mu1
        s22 = convolve2d(y * y, kern, mode="valid") - mu2 * mu2
        s12 = convolve2d(x * y, kern, mode="valid") - mu1 * mu2
        num = (2.0 * mu1 * mu2 + c1) * (2.0 * s12 + c2)
        den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))


def _box_downsample(img, factor):
    if factor == 1:
        return img
    h, w = img.shape[:2]
    return img.reshape(h // factor, factor, w // factor, factor, 3).mean(axis=(1, 3))


def evaluate(model, dataset, scale=1, threads=1, max_views=None, mask=None):
    """Mean PSNR/SSIM of rendered views against dataset ground truth."""
    frames = dataset.frames if max_views is None else dataset.frames[:max_views]
    if not frames:
        raise ValueError("no frames to evaluate")
    views = []
    for i, (pose, img) in enumerate(frames):
        ren = render_image(model, dataset.intrinsics, pose, scale=scale, threads=threads, mask=mask)
        ref = _box_downsample(img, scale)
        views.append({"view": i, "psnr": psnr(ren, ref), "ssim": ssim(ren, ref)})
    return {
        "psnr": float(np.mean([v["psnr"] for v in views])),
        "ssim": float(np.mean([v["ssim"] for v in views])),
        "views": views,
    }


def ablate_masking(model, dataset, ks, scale=2, threads=1):
    """Render the dataset with the top-k grid levels masked for each k.

    Returns one row per k: eval PSNR against ground truth and cosine
    similarity of the masked renders to the unmasked ones.
    """
    n_levels = model.grid.cfg.levels
    for k in ks:
        if not 0 <= int(k) <= n_levels:
            raise ValueError(f"masked_top_k {k} outside [0, {n_levels}]")
    base = [
        render_image(model, dataset.intrinsics, pose, scale=scale, threads=threads)
        for pose, _ in dataset.frames
    ]
    refs = [_box_downsample(img, scale) for _, img in dataset.frames]
    rows = []
    for k in ks:
        k = int(k)
        if k == 0:
            rend = base
        else:
            m = LevelMask(masked_top_k=k)
            rend = [
                render_image(model, dataset.intrinsics, pose, scale=scale, threads=threads, mask=m)
                for pose, _ in dataset.frames
            ]
        rows.append(
            {
                "k": k,
                "psnr": float(np.mean([psnr(r, gt) for r, gt in zip(rend, refs)])),
                "similarity": float(
                    np.mean([grid_similarity(r, b) for r, b in zip(rend, base)])
                ),
            }
        )
    return rows
