"""Desk-scale neural light field engine.

Rays in, colors out: a hash-based tri-plane feature grid feeds a recurrent
decoder that maps each ray's ordered sample features straight to RGB, with
no density field or volume integration. Pure numpy, deterministic under a
seed, trainable on a laptop-sized scene in minutes.

The sklearn-style entry point is `LightFieldRegressor`; the functional API
lives in `pipeline` (train / render_image / evaluate) with presets sized
small / medium / large / tiny-test.
"""

from .dataio import (
    SceneDataset,
    ToySceneSpec,
    gen_toy_scene,
    load_blender_dataset,
    load_checkpoint,
    make_toy_spec,
    model_from_checkpoint,
    save_checkpoint,
)
from .estimator import LightFieldRegressor
from .geometry import Aabb, CameraIntrinsics, Pose, Ray
from .gridenc import GridConfig, HashTriPlane, LevelMask, grid_similarity, sh_encode
from .model import LightField, NdcParams
from .pipeline import (
    PresetConfig,
    TrainLog,
    ablate_masking,
    evaluate,
    get_preset,
    psnr,
    render_image,
    ssim,
    train,
)
from .raydecoder import DecoderConfig, RayColorDecoder

__version__ = "0.1.0"

__all__ = [
    "Aabb",
    "CameraIntrinsics",
    "Pose",
    "Ray",
    "GridConfig",
    "HashTriPlane",
    "LevelMask",
    "grid_similarity",
    "sh_encode",
    "DecoderConfig",
    "RayColorDecoder",
    "LightField",
    "NdcParams",
    "LightFieldRegressor",
    "SceneDataset",
    "ToySceneSpec",
    "make_toy_spec",
    "gen_toy_scene",
    "load_blender_dataset",
    "save_checkpoint",
    "load_checkpoint",
    "model_from_checkpoint",
    "PresetConfig",
    "TrainLog",
    "get_preset",
    "train",
    "render_image",
    "evaluate",
    "ablate_masking",
    "psnr",
    "ssim",
    "__version__",
]
