"""Dataset ingestion, procedural toy scenes, and the checkpoint container.

Three concerns live here because they all touch bytes on disk: loading
Blender-convention scenes (transforms_*.json + PNGs), synthesizing small
scenes with an exact analytic renderer so training targets have a known
ground truth, and reading/writing model checkpoints in a small custom
container format.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import struct
import tempfile

import numpy as np
from PIL import Image

from .geometry import Aabb, CameraIntrinsics, Pose, image_rays, pose_from_orbit
from .gridenc import GridConfig
from .model import LightField, NdcParams

CHECKPOINT_MAGIC = b"GNLF1"

# Blender synthetic cameras use roughly this horizontal FOV; toy scenes
# default to a tighter one so the bounds fill more of the frame.
_DEFAULT_BOUNDS = Aabb(np.full(3, -1.0), np.full(3, 1.0))


@dataclasses.dataclass
class SceneDataset:
    """A posed image collection with shared intrinsics.

    frames holds (pose, image) pairs with images as float64 H x W x 3 in
    [0, 1]. near is only populated for forward-facing camera sets.
    """

    frames: list
    intrinsics: CameraIntrinsics
    aabb: Aabb
    background: np.ndarray
    split: str = "train"
    near: float | None = None

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64)
        if self.background.shape != (3,) or not np.all(
            (self.background >= 0.0) & (self.background <= 1.0)
        ):
            raise ValueError("background must be 3 values in [0, 1]")
        shape = (self.intrinsics.height, self.intrinsics.width, 3)
        for i, (pose, img) in enumerate(self.frames):
            if not isinstance(pose, Pose):
                raise TypeError(f"frame {i}: pose must be a Pose")
            if img.shape != shape:
                raise ValueError(
                    f"frame {i}: image shape {img.shape} does not match "
                    f"intrinsics {shape}"
                )
            if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
                raise ValueError(f"frame {i}: pixels must be finite in [0, 1]")

    def __len__(self):
        return len(self.frames)


@dataclasses.dataclass(frozen=True)
class ToyPrimitive:
    """One flat-colored solid: an axis-aligned box or a sphere."""

    kind: str
    center: tuple
    size: tuple  # box: half extents (3,); sphere: (radius,)
    color: tuple

    def __post_init__(self):
        if self.kind not in ("box", "sphere"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if self.kind == "box" and len(self.size) != 3:
            raise ValueError("box size must be 3 half extents")
        if self.kind == "sphere" and len(self.size) != 1:
            raise ValueError("sphere size must be (radius,)")
        if any(s <= 0 for s in self.size):
            raise ValueError("primitive size must be positive")
        if len(self.color) != 3 or any(c < 0 or c > 1 for c in self.color):
            raise ValueError("color must be 3 values in [0, 1]")


@dataclasses.dataclass(frozen=True)
class ToySceneSpec:
    """Deterministic description of a toy scene.

    Every primitive must sit fully inside bounds so the scene AABB is also
    a valid model AABB.
    """

    seed: int
    primitives: tuple
    bounds: Aabb = dataclasses.field(default_factory=lambda: _DEFAULT_BOUNDS)

    def __post_init__(self):
        lo, hi = self.bounds.min, self.bounds.max
        for i, p in enumerate(self.primitives):
            c = np.asarray(p.center, dtype=np.float64)
            if p.kind == "box":
                ext = np.asarray(p.size, dtype=np.float64)
            else:
                ext = np.full(3, p.size[0])
            if np.any(c - ext < lo) or np.any(c + ext > hi):
                raise ValueError(f"primitive {i} extends outside bounds")


def make_toy_spec(seed, n_primitives=3, bounds=None, constant_color=None):
    """Draw a random toy scene: alternating boxes and spheres, bright flat
    colors, everything inside bounds.

    constant_color, if given, paints all primitives that color (used for
    the constant-scene sanity checks).
    """
    if bounds is None:
        bounds = _DEFAULT_BOUNDS
    rng = np.random.default_rng(seed)
    lo = np.asarray(bounds.min, dtype=np.float64)
    hi = np.asarray(bounds.max, dtype=np.float64)
    extent = hi - lo
    prims = []
    for i in range(n_primitives):
        kind = "box" if i % 2 == 0 else "sphere"
        # size first, then a center that keeps the primitive inside
        frac = rng.uniform(0.2, 0.34)
        if kind == "box":
            half = rng.uniform(0.7, 1.3, size=3) * frac * extent / 2.0
            margin = half
        else:
            r = frac * float(extent.min()) / 2.0
            half = np.array([r])
            margin = np.full(3, r)
        center = rng.uniform(lo + margin, hi - margin)
        if constant_color is not None:
            color = tuple(float(c) for c in constant_color)
        else:
            color = tuple(rng.uniform(0.25, 1.0, size=3))
        prims.append(
            ToyPrimitive(
                kind=kind,
                center=tuple(center),
                size=tuple(half),
                color=color,
            )
        )
    return ToySceneSpec(seed=seed, primitives=tuple(prims), bounds=bounds)


def _ray_box_t(origins, dirs, lo, hi):
    """First positive hit parameter per ray against one AABB, inf on miss."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo[None, :] - origins) * inv
        t1 = (hi[None, :] - origins) * inv
    t_near = np.fmax(np.fmin(t0, t1).max(axis=1), 1e-9)
    t_far = np.fmax(t0, t1).min(axis=1)
    t = np.where(t_near <= t_far, t_near, np.inf)
    return t


def _ray_sphere_t(origins, dirs, center, radius):
    """First positive hit parameter per ray against one sphere, inf on miss."""
    oc = origins - center[None, :]
    a = np.einsum("nd,nd->n", dirs, dirs)
    b = 2.0 * np.einsum("nd,nd->n", dirs, oc)
    c = np.einsum("nd,nd->n", oc, oc) - radius * radius
    disc = b * b - 4.0 * a * c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t0 = (-b - sq) / (2.0 * a)
    t1 = (-b + sq) / (2.0 * a)
    t = np.where(t0 > 1e-9, t0, t1)
    return np.where(hit & (t > 1e-9), t, np.inf)


def oracle_colors(spec, origins, dirs, background):
    """Exact first-hit flat shading for a batch of rays.

    Nearest primitive wins; rays that miss everything get the background.
    Shading is view independent by construction.
    """
    n = origins.shape[0]
    out = np.tile(np.asarray(background, dtype=np.float64), (n, 1))
    t_best = np.full(n, np.inf)
    for p in spec.primitives:
        c = np.asarray(p.center, dtype=np.float64)
        if p.kind == "box":
            half = np.asarray(p.size, dtype=np.float64)
            t = _ray_box_t(origins, dirs, c - half, c + half)
        else:
            t = _ray_sphere_t(origins, dirs, c, p.size[0])
        closer = t < t_best
        t_best[closer] = t[closer]
        out[closer] = np.asarray(p.color, dtype=np.float64)
    return out


def oracle_render(spec, intrinsics, pose, background=(0.0, 0.0, 0.0)):
    """Render one view of a toy scene analytically. Returns H x W x 3 in [0, 1]."""
    origins, dirs = image_rays(intrinsics, pose)
    colors = oracle_colors(spec, origins, dirs, background)
    return colors.reshape(intrinsics.height, intrinsics.width, 3)


def toy_intrinsics(width, height):
    # focal chosen so the default bounds roughly fill the frame from the
    # default orbit radius
    return CameraIntrinsics(width=width, height=height, focal=0.87 * width)


def gen_toy_scene(
    spec,
    n_views,
    width,
    height,
    radius=3.0,
    elevation_range=(-30.0, 30.0),
    background=(0.0, 0.0, 0.0),
    split="train",
    azimuth_offset=0.0,
):
    """Orbit cameras around the scene and render ground truth for each.

    Azimuths are evenly spaced; elevations sweep the band deterministically
    from the spec seed. Same spec and arguments give bit-identical datasets.
    """
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    intr = toy_intrinsics(width, height)
    rng = np.random.default_rng(spec.seed + 17)
    elevations = rng.uniform(elevation_range[0], elevation_range[1], size=n_views)
    frames = []
    for i in range(n_views):
        az = azimuth_offset + 360.0 * i / n_views
        pose = pose_from_orbit(radius=radius, azimuth_deg=az, elevation_deg=elevations[i])
        img = oracle_render(spec, intr, pose, background)
        frames.append((pose, img))
    return SceneDataset(
        frames=frames,
        intrinsics=intr,
        aabb=spec.bounds,
        background=background,
        split=split,
    )


def _load_png(path):
    try:
        with Image.open(path) as im:
            if im.mode not in ("RGB", "RGBA"):
                im = im.convert("RGBA" if "A" in im.getbands() else "RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except OSError as e:
        raise ValueError(f"cannot read image {path}: {e}") from e
    return arr


def _downsample(img, factor):
    h, w = img.shape[:2]
    if h % factor or w % factor:
        raise ValueError(
            f"image {h}x{w} not divisible by downsample factor {factor}"
        )
    return img.reshape(h // factor, factor, w // factor, factor, -1).mean(axis=(1, 3))


def load_blender_dataset(
    root,
    split="train",
    downsample=1,
    background=(1.0, 1.0, 1.0),
    aabb=None,
):
    """Load a Blender-convention scene directory.

    Expects transforms_{split}.json with camera_angle_x and per-frame
    file_path + transform_matrix (row-major camera-to-world). RGBA images
    are composited over the background. downsample must divide the image
    size exactly (box filter).
    """
    tpath = os.path.join(root, f"transforms_{split}.json")
    try:
        with open(tpath, "r", encoding="utf-8") as f:
            meta = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ValueError(f"cannot load {tpath}: {e}") from e
    if "camera_angle_x" not in meta or "frames" not in meta:
        raise ValueError(f"{tpath}: missing camera_angle_x or frames")

    bg = np.asarray(background, dtype=np.float64)
    frames = []
    wh = None
    for fr in meta["frames"]:
        fp = fr["file_path"]
        ipath = os.path.join(root, fp)
        if not os.path.exists(ipath) and os.path.exists(ipath + ".png"):
            ipath += ".png"
        img = _load_png(ipath)
        if downsample > 1:
            img = _downsample(img, downsample)
        if img.shape[2] == 4:
            alpha = img[:, :, 3:4]
            img = img[:, :, :3] * alpha + bg[None, None, :] * (1.0 - alpha)
        if wh is None:
            wh = img.shape[:2]
        elif img.shape[:2] != wh:
            raise ValueError(f"{ipath}: frame size differs from the first frame")

        m = np.asarray(fr["transform_matrix"], dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"{tpath}: transform_matrix for {fp} is not 4x4")
        try:
            pose = Pose(m)
        except ValueError as e:
            raise ValueError(f"{tpath}: bad pose for {fp}: {e}") from e
        frames.append((pose, np.clip(img, 0.0, 1.0)))

    if not frames:
        raise ValueError(f"{tpath}: no frames")
    h, w = wh
    focal = 0.5 * w / math.tan(0.5 * float(meta["camera_angle_x"]))
    intr = CameraIntrinsics(width=w, height=h, focal=focal)
    if aabb is None:
        aabb = Aabb(np.full(3, -1.5), np.full(3, 1.5))
    return SceneDataset(
        frames=frames,
        intrinsics=intr,
        aabb=aabb,
        background=bg,
        split=split,
    )


def load_camera_set(path, downsample=1, background=(0.0, 0.0, 0.0)):
    """Load a forward-facing camera set: {intrinsics, near, frames:[{pose, image}]}.

    pose is 16 numbers (row-major camera-to-world) or a 4x4 nested list;
    image paths are relative to the JSON file.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            meta = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ValueError(f"cannot load {path}: {e}") from e
    for key in ("intrinsics", "near", "frames"):
        if key not in meta:
            raise ValueError(f"{path}: missing {key}")
    ji = meta["intrinsics"]
    if "focal" in ji:
        focal = float(ji["focal"])
    else:
        focal = float(ji["fx"])
        if abs(float(ji.get("fy", focal)) - focal) > 1e-6 * focal:
            raise ValueError(f"{path}: fx != fy; square pixels are assumed")
    root = os.path.dirname(os.path.abspath(path))
    frames = []
    for fr in meta["frames"]:
        m = np.asarray(fr["pose"], dtype=np.float64).reshape(4, 4)
        img = _load_png(os.path.join(root, fr["image"]))
        if downsample > 1:
            img = _downsample(img, downsample)
        if img.shape[2] == 4:
            bg = np.asarray(background, dtype=np.float64)
            img = img[:, :, :3] * img[:, :, 3:4] + bg[None, None, :] * (1.0 - img[:, :, 3:4])
        frames.append((Pose(m), np.clip(img, 0.0, 1.0)))
    if not frames:
        raise ValueError(f"{path}: no frames")
    ds = max(1, int(downsample))
    h, w = frames[0][1].shape[:2]
    intr = CameraIntrinsics(
        width=w,
        height=h,
        focal=focal / ds,
        cx=float(ji["cx"]) / ds if "cx" in ji else None,
        cy=float(ji["cy"]) / ds if "cy" in ji else None,
    )
    # forward-facing scenes are unbounded along -z; the AABB is unused there
    aabb = Aabb(np.full(3, -1.0), np.full(3, 1.0))
    return SceneDataset(
        frames=frames,
        intrinsics=intr,
        aabb=aabb,
        background=background,
        split=meta.get("split", "train"),
        near=float(meta["near"]),
    )


def to_uint8(img):
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(
        np.uint8
    )


def save_png(path, img):
    """Write an [0, 1] float image as 8-bit PNG, atomically."""
    if os.path.isdir(path):
        raise ValueError(f"output path {path} is a directory")
    arr = to_uint8(img)
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".png.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            Image.fromarray(arr).save(f, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_json(path, obj):
    """Write JSON atomically (temp file + rename)."""
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".json.tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(obj, f, indent=2)
            f.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_blender_dataset(out_dir, spec, splits, width, height, background=(0.0, 0.0, 0.0)):
    """Render a toy scene to a Blender-convention directory layout.

    splits maps split name to view count, e.g. {"train": 20, "val": 4}.
    Writes transforms_{split}.json plus 8-bit PNGs, and a toy_spec.json echo
    so the scene can be regenerated exactly.
    """
    os.makedirs(out_dir, exist_ok=True)
    offsets = {"train": 0.0, "val": 9.0, "test": 4.5}
    for split, n_views in splits.items():
        ds = gen_toy_scene(
            spec,
            n_views,
            width,
            height,
            background=background,
            split=split,
            azimuth_offset=offsets.get(split, 13.0),
        )
        img_dir = os.path.join(out_dir, split)
        os.makedirs(img_dir, exist_ok=True)
        frames = []
        for i, (pose, img) in enumerate(ds.frames):
            rel = f"./{split}/r_{i:03d}"
            save_png(os.path.join(out_dir, rel + ".png"), img)
            frames.append(
                {"file_path": rel, "transform_matrix": pose.matrix.tolist()}
            )
        angle_x = 2.0 * math.atan(0.5 * width / ds.intrinsics.focal)
        save_json(
            os.path.join(out_dir, f"transforms_{split}.json"),
            {"camera_angle_x": angle_x, "frames": frames},
        )
    save_json(
        os.path.join(out_dir, "toy_spec.json"),
        {
            "seed": spec.seed,
            "bounds": {
                "min": [float(v) for v in spec.bounds.min],
                "max": [float(v) for v in spec.bounds.max],
            },
            "background": [float(b) for b in np.asarray(background, dtype=np.float64)],
            "primitives": [
                {
                    "kind": p.kind,
                    "center": [float(v) for v in p.center],
                    "size": [float(v) for v in p.size],
                    "color": [float(v) for v in p.color],
                }
                for p in spec.primitives
            ],
        },
    )


def load_toy_spec(path):
    """Rebuild a ToySceneSpec from a toy_spec.json echo."""
    with open(path, "r", encoding="utf-8") as f:
        d = json.load(f)
    prims = tuple(
        ToyPrimitive(
            kind=p["kind"],
            center=tuple(p["center"]),
            size=tuple(p["size"]),
            color=tuple(p["color"]),
        )
        for p in d["primitives"]
    )
    bounds = Aabb(
        np.asarray(d["bounds"]["min"], dtype=np.float64),
        np.asarray(d["bounds"]["max"], dtype=np.float64),
    )
    return ToySceneSpec(seed=d["seed"], primitives=prims, bounds=bounds)


# ---------------------------------------------------------------------------
# checkpoint container


@dataclasses.dataclass
class Checkpoint:
    header: dict
    tensors: dict


def _align8(n):
    return (n + 7) & ~7


def write_container(path, header, tensors):
    """Write magic + u32 header length + JSON header + 8-aligned payload.

    The tensor manifest (name, shape, width, offset) is injected into the
    header. Writes are atomic: temp file in the same directory, then rename.
    """
    manifest = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        if arr.dtype == np.float32:
            width = 4
        elif arr.dtype == np.float16:
            width = 2
        else:
            raise ValueError(f"tensor {name}: unsupported dtype {arr.dtype}")
        offset = _align8(offset)
        raw = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
        manifest.append(
            {"name": name, "shape": list(arr.shape), "width": width, "offset": offset}
        )
        blobs.append((offset, raw))
        offset += len(raw)

    header = dict(header)
    header["tensors"] = manifest
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    # pad the header so the payload begins on an 8-byte file offset
    pad = _align8(len(CHECKPOINT_MAGIC) + 4 + len(hbytes)) - (
        len(CHECKPOINT_MAGIC) + 4 + len(hbytes)
    )
    hbytes += b" " * pad

    payload = bytearray(_align8(offset))
    for off, raw in blobs:
        payload[off : off + len(raw)] = raw

    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<I", len(hbytes)))
            f.write(hbytes)
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path):
    """Read and validate a checkpoint container. Raises ValueError naming the
    offending tensor on any manifest inconsistency."""
    with open(path, "rb") as f:
        data = f.read()
    if data[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic, not a checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    if len(data) < pos + 4:
        raise ValueError(f"{path}: truncated header length")
    (hlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if len(data) < pos + hlen:
        raise ValueError(f"{path}: truncated header")
    try:
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"{path}: corrupt header: {e}") from e
    payload = data[pos + hlen :]

    manifest = header.get("tensors")
    if not isinstance(manifest, list):
        raise ValueError(f"{path}: header missing tensor manifest")
    spans = []
    tensors = {}
    for ent in manifest:
        name = ent.get("name", "<unnamed>")
        width = ent["width"]
        if width not in (2, 4):
            raise ValueError(f"{path}: tensor {name}: bad scalar width {width}")
        shape = tuple(int(s) for s in ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(ent["offset"])
        end = start + count * width
        if start < 0 or end > len(payload):
            raise ValueError(f"{path}: tensor {name}: payload range out of bounds")
        spans.append((start, end, name))
        dtype = np.dtype("<f4" if width == 4 else "<f2")
        arr = np.frombuffer(payload, dtype=dtype, count=count, offset=start)
        tensors[name] = arr.astype(dtype.newbyteorder("=")).reshape(shape)
    spans.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ValueError(f"{path}: tensors {n0} and {n1} overlap")
    return Checkpoint(header=header, tensors=tensors)


def _model_config_header(model):
    g = model.grid.cfg
    d = model.decoder.cfg
    cfg = {
        "grid": {
            "levels": g.levels,
            "r_min": g.r_min,
            "r_max": g.r_max,
            "feature_dim": g.feature_dim,
            "table_cap": g.table_cap,
        },
        "decoder": {
            "hidden_size": d.hidden_size,
            "num_layers": d.num_layers,
            "mlp_hidden": d.mlp_hidden,
        },
        "k_samples": model.k_samples,
        "scene_mode": model.scene_mode,
        "background": [float(b) for b in model.background],
        "aabb": {
            "lo": [float(v) for v in model.aabb.min],
            "hi": [float(v) for v in model.aabb.max],
        },
    }
    if model.ndc is not None:
        cfg["ndc"] = {
            "focal": model.ndc.focal,
            "width": model.ndc.width,
            "height": model.ndc.height,
            "near": model.ndc.near,
        }
    return cfg


def save_checkpoint(
    path,
    model,
    step=0,
    preset="custom",
    precision="f32",
    groups=None,
    intrinsics=None,
    extra=None,
):
    """Save a model (and optionally optimizer state) to a checkpoint.

    precision "f32" keeps exact training state; "f16" is the compact export
    (parameters only, halved to two bytes each).
    """
    if precision not in ("f32", "f16"):
        raise ValueError(f"precision must be f32 or f16, got {precision!r}")
    header = {
        "version": 1,
        "kind": "light-field",
        "preset": preset,
        "precision": precision,
        "step": int(step),
        "param_count": model.param_count,
        "config": _model_config_header(model),
    }
    if intrinsics is not None:
        header["intrinsics"] = {
            "width": intrinsics.width,
            "height": intrinsics.height,
            "focal": intrinsics.focal,
            "cx": intrinsics.cx,
            "cy": intrinsics.cy,
        }
    if extra:
        header["extra"] = extra

    if precision == "f16":
        tensors = {
            "grid.values": model.grid.values.astype(np.float16),
            "decoder.params": model.decoder.params.astype(np.float16),
        }
    else:
        tensors = {
            "grid.values": model.grid.values.astype(np.float32),
            "decoder.params": model.decoder.params.astype(np.float32),
        }
        if groups is not None:
            opt_meta = {}
            for gname, grp in groups.items():
                tensors[f"adam.{gname}.m"] = grp.m.astype(np.float32)
                tensors[f"adam.{gname}.v"] = grp.v.astype(np.float32)
                opt_meta[gname] = {
                    "t": grp.t,
                    "lr": grp.hyper.lr,
                    "beta1": grp.hyper.beta1,
                    "beta2": grp.hyper.beta2,
                    "eps": grp.hyper.eps,
                }
            header["optimizer"] = opt_meta
    write_container(path, header, tensors)


def load_checkpoint(path):
    ckpt = read_container(path)
    hdr = ckpt.header
    if hdr.get("kind") != "light-field":
        raise ValueError(f"{path}: not a light-field checkpoint")
    for required in ("grid.values", "decoder.params"):
        if required not in ckpt.tensors:
            raise ValueError(f"{path}: tensor {required} missing")
    return ckpt


def model_from_checkpoint(ckpt, dtype=np.float32):
    """Rebuild a LightField from a loaded checkpoint. f16 payloads are
    widened; shape mismatches against the config echo are rejected."""
    cfg = ckpt.header["config"]
    g = cfg["grid"]
    grid_cfg = GridConfig(
        levels=g["levels"],
        r_min=g["r_min"],
        r_max=g["r_max"],
        feature_dim=g["feature_dim"],
        table_cap=g["table_cap"],
    )
    ndc = None
    if "ndc" in cfg:
        n = cfg["ndc"]
        ndc = NdcParams(
            focal=n["focal"], width=n["width"], height=n["height"], near=n["near"]
        )
    aabb = Aabb(
        np.asarray(cfg["aabb"]["lo"], dtype=np.float64),
        np.asarray(cfg["aabb"]["hi"], dtype=np.float64),
    )
    model = LightField(
        grid_cfg=grid_cfg,
        aabb=aabb,
        hidden_size=cfg["decoder"]["hidden_size"],
        num_layers=cfg["decoder"]["num_layers"],
        k_samples=cfg["k_samples"],
        background=tuple(cfg["background"]),
        scene_mode=cfg["scene_mode"],
        ndc=ndc,
        mlp_hidden=cfg["decoder"]["mlp_hidden"],
        dtype=dtype,
    )
    for name, target in (
        ("grid.values", model.grid.values),
        ("decoder.params", model.decoder.params),
    ):
        arr = ckpt.tensors[name]
        if arr.shape != target.shape:
            raise ValueError(
                f"tensor {name}: shape {arr.shape} does not match config "
                f"{target.shape}"
            )
        target[...] = arr.astype(target.dtype)
    return model


def intrinsics_from_checkpoint(ckpt):
    ji = ckpt.header.get("intrinsics")
    if ji is None:
        return None
    return CameraIntrinsics(
        width=int(ji["width"]),
        height=int(ji["height"]),
        focal=float(ji["focal"]),
        cx=float(ji["cx"]),
        cy=float(ji["cy"]),
    )
