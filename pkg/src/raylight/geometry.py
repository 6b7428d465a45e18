"""Camera models, ray generation, AABB intersection and point sampling.

All functions here are pure and come in two flavors where it matters:
a scalar form operating on single :class:`Ray` objects (convenient for
tests and composition) and a batched form operating on ``(n, 3)`` arrays
(what the training/rendering pipeline actually calls).

Conventions:
  * pixel ``(i, j)`` is column ``i``, row ``j``; no half-pixel offset,
    matching the original synthetic-dataset convention.
  * camera looks along ``-z`` in its own frame, ``y`` is up.
  * poses are 4x4 row-major camera-to-world rigid transforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera: image size, focal length and principal point, all in pixels."""

    width: int
    height: int
    focal: float
    cx: float = None  # type: ignore[assignment]
    cy: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.focal <= 0:
            raise ValueError("width, height and focal must be positive")
        if self.cx is None:
            object.__setattr__(self, "cx", self.width / 2.0)
        if self.cy is None:
            object.__setattr__(self, "cy", self.height / 2.0)

    def scaled(self, scale: int) -> "CameraIntrinsics":
        """Intrinsics for rendering at ``width/scale x height/scale``."""
        if scale < 1 or self.width % scale or self.height % scale:
            raise ValueError(f"scale {scale} does not divide {self.width}x{self.height}")
        return CameraIntrinsics(
            self.width // scale,
            self.height // scale,
            self.focal / scale,
            self.cx / scale,
            self.cy / scale,
        )


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform stored as a 4x4 row-major matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"pose matrix must be 4x4, got {m.shape}")
        if not np.allclose(m[3], (0.0, 0.0, 0.0, 1.0), atol=1e-6):
            raise ValueError("pose last row must be (0, 0, 0, 1)")
        r = m[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-4):
            raise ValueError("pose rotation block is not orthonormal (tol 1e-4)")
        object.__setattr__(self, "matrix", m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]


@dataclass(frozen=True)
class Ray:
    """A ray with world-space origin and unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = float(np.linalg.norm(d))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"ray direction must be unit length, |d| = {n}")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned bounding box, ``min < max`` componentwise."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if not np.all(lo < hi):
            raise ValueError("aabb min must be < max componentwise")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    def contains(self, points: np.ndarray, atol: float = 0.0) -> np.ndarray:
        p = np.asarray(points)
        return np.all((p >= self.min - atol) & (p <= self.max + atol), axis=-1)


@dataclass(frozen=True)
class PointSequence:
    """K ordered sample points along a ray, near to far."""

    points: np.ndarray  # (K, 3)
    ts: np.ndarray  # (K,), strictly increasing
    valid: bool = field(default=True)


def generate_ray(cam: CameraIntrinsics, pose: Pose, i: float, j: float) -> Ray:
    """Ray through pixel ``(i, j)``: column i, row j.

    Camera-frame direction is ``((i - cx)/f, -(j - cy)/f, -1)`` rotated into
    world space and normalized; the origin is the camera center.
    """
    if not (0 <= i < cam.width) or not (0 <= j < cam.height):
        raise ValueError(f"pixel ({i}, {j}) outside {cam.width}x{cam.height} image")
    d_cam = np.array(
        [(i - cam.cx) / cam.focal, -(j - cam.cy) / cam.focal, -1.0], dtype=np.float64
    )
    d = pose.rotation @ d_cam
    d /= np.linalg.norm(d)
    return Ray(pose.translation.copy(), d)


def generate_rays(
    cam: CameraIntrinsics, pose: Pose, ii: np.ndarray, jj: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Batched :func:`generate_ray` over pixel coordinate arrays.

    Returns ``(origins, directions)`` of shape ``(n, 3)`` float64, directions
    unit length.
    """
    ii = np.asarray(ii, dtype=np.float64).ravel()
    jj = np.asarray(jj, dtype=np.float64).ravel()
    if ii.size and (
        ii.min() < 0 or ii.max() >= cam.width or jj.min() < 0 or jj.max() >= cam.height
    ):
        raise ValueError("pixel coordinates outside image bounds")
    d_cam = np.stack(
        [
            (ii - cam.cx) / cam.focal,
            -(jj - cam.cy) / cam.focal,
            -np.ones_like(ii),
        ],
        axis=-1,
    )
    d = d_cam @ pose.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(pose.translation, d.shape).copy()
    return o, d


def image_rays(cam: CameraIntrinsics, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Rays for every pixel of the image, row-major pixel order."""
    jj, ii = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
    return generate_rays(cam, pose, ii.ravel(), jj.ravel())


def intersect_aabb(ray: Ray, box: Aabb) -> tuple[float, float] | None:
    """Slab-method ray/box intersection.

    Returns ``(t_near, t_far)`` with ``0 <= t_near < t_far`` when the ray hits
    the box in front of its origin, otherwise None. Zero direction components
    are handled through IEEE infinities.
    """
    tn, tf, hit = intersect_aabb_batch(ray.origin[None], ray.direction[None], box)
    if not hit[0]:
        return None
    return float(tn[0]), float(tf[0])


def intersect_aabb_batch(
    origins: np.ndarray, dirs: np.ndarray, box: Aabb
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized slab intersection for ``(n, 3)`` origins/directions.

    Returns ``(t_near, t_far, hit)``; entries of t_near/t_far are meaningful
    only where ``hit`` is True.
    """
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (box.min - o) * inv
        t1 = (box.max - o) * inv
    near = np.fmin(t0, t1)  # fmin/fmax drop the NaN from 0 * inf
    far = np.fmax(t0, t1)
    t_near = np.max(near, axis=-1)
    t_far = np.min(far, axis=-1)
    t_near = np.maximum(t_near, 0.0)
    hit = (t_near < t_far) & np.isfinite(t_near) & np.isfinite(t_far)
    return t_near, t_far, hit


def sample_points(ray: Ray, t_near: float, t_far: float, k: int) -> PointSequence:
    """Deterministic mid-bin sampling of ``k`` points on ``[t_near, t_far]``.

    ``t_i = t_near + (i + 0.5)/k * (t_far - t_near)``, ordered near to far.
    """
    if not (t_near < t_far):
        raise ValueError(f"need t_near < t_far, got ({t_near}, {t_far})")
    if k < 1:
        raise ValueError("k must be >= 1")
    ts = sample_ts_batch(np.array([t_near]), np.array([t_far]), k)[0]
    return PointSequence(ray.origin + ts[:, None] * ray.direction, ts, True)


def sample_ts_batch(t_near: np.ndarray, t_far: np.ndarray, k: int) -> np.ndarray:
    """Mid-bin depths for a batch of intervals; shape ``(n, k)``."""
    t_near = np.asarray(t_near, dtype=np.float64)
    t_far = np.asarray(t_far, dtype=np.float64)
    bins = (np.arange(k, dtype=np.float64) + 0.5) / k
    return t_near[:, None] + bins[None, :] * (t_far - t_near)[:, None]


def to_ndc(ray: Ray, focal: float, width: int, height: int, near: float) -> Ray:
    """Map a forward-facing world ray into normalized device coordinates.

    The origin is first shifted onto the near plane, then origin and
    direction follow the standard projective NDC mapping for a pinhole
    camera looking along ``-z``. The returned direction is re-normalized so
    the result is a valid :class:`Ray`; this reparameterizes the line without
    changing it.
    """
    o_ndc, d_ndc = ndc_rays_batch(
        ray.origin[None], ray.direction[None], focal, width, height, near
    )
    d = d_ndc[0]
    return Ray(o_ndc[0], d / np.linalg.norm(d))


def ndc_rays_batch(
    origins: np.ndarray,
    dirs: np.ndarray,
    focal: float,
    width: int,
    height: int,
    near: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched NDC conversion; directions are returned unnormalized.

    With the origin shifted to the near plane, ``o + t * d`` for t in [0, 1]
    sweeps the world segment from the near plane out to infinity.
    """
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    if np.any(d[..., 2] >= 0):
        raise ValueError("NDC conversion requires d_z < 0 (forward-facing rays)")
    # shift origins onto the z = -near plane
    t = -(near + o[..., 2]) / d[..., 2]
    o = o + t[..., None] * d
    wx = -focal / (width / 2.0)
    wy = -focal / (height / 2.0)
    o_ndc = np.stack(
        [
            wx * o[..., 0] / o[..., 2],
            wy * o[..., 1] / o[..., 2],
            1.0 + 2.0 * near / o[..., 2],
        ],
        axis=-1,
    )
    d_ndc = np.stack(
        [
            wx * (d[..., 0] / d[..., 2] - o[..., 0] / o[..., 2]),
            wy * (d[..., 1] / d[..., 2] - o[..., 1] / o[..., 2]),
            -2.0 * near / o[..., 2],
        ],
        axis=-1,
    )
    return o_ndc, d_ndc


def ndc_points(points: np.ndarray, focal: float, width: int, height: int, near: float) -> np.ndarray:
    """NDC image of world points with z < 0 (the point-wise projective map)."""
    p = np.asarray(points, dtype=np.float64)
    z = p[..., 2]
    return np.stack(
        [
            -focal / (width / 2.0) * p[..., 0] / z,
            -focal / (height / 2.0) * p[..., 1] / z,
            1.0 + 2.0 * near / z,
        ],
        axis=-1,
    )


def ndc_points_to_world(
    points_ndc: np.ndarray, focal: float, width: int, height: int, near: float
) -> np.ndarray:
    """Inverse of :func:`ndc_points`, valid for NDC z < 1."""
    p = np.asarray(points_ndc, dtype=np.float64)
    z = 2.0 * near / (p[..., 2] - 1.0)
    return np.stack(
        [
            -p[..., 0] * z * (width / 2.0) / focal,
            -p[..., 1] * z * (height / 2.0) / focal,
            z,
        ],
        axis=-1,
    )


def pose_from_lookat(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose for a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    z = eye - target  # camera looks along -z
    zn = np.linalg.norm(z)
    if zn < 1e-12:
        raise ValueError("eye and target coincide")
    z /= zn
    x = np.cross(up, z)
    xn = np.linalg.norm(x)
    if xn < 1e-12:  # up parallel to view direction; pick another up
        up = np.array([0.0, 1.0, 0.0])
        x = np.cross(up, z)
        xn = np.linalg.norm(x)
    x /= xn
    y = np.cross(z, x)
    m = np.eye(4)
    m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = x, y, z, eye
    return Pose(m)


def pose_from_orbit(
    azimuth_deg: float, elevation_deg: float, radius: float, look_at=(0.0, 0.0, 0.0)
) -> Pose:
    """Orbit parameterization shared by the CLI and the HTTP viewer."""
    if radius <= 0:
        raise ValueError("orbit radius must be positive")
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    center = np.asarray(look_at, dtype=np.float64)
    eye = center + radius * np.array(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)]
    )
    return Pose(pose_from_lookat(eye, center).matrix)
