"""HTTP render service: POST /render returns PNGs, GET /meta describes the
loaded checkpoint.

Built on the stdlib threading HTTP server. The model is read-only after
startup, so concurrent renders are safe; per-session admission control
(at most 2 renders in flight per session) keeps an interactive client from
piling up stale work. A session is the X-Session header when the client
sends one, otherwise the client address.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

from .dataio import (
    intrinsics_from_checkpoint,
    load_checkpoint,
    model_from_checkpoint,
    to_uint8,
    toy_intrinsics,
)
from .geometry import CameraIntrinsics, Pose, pose_from_orbit
from .pipeline import render_image

MAX_PIXELS = 4_000_000
QUEUE_DEPTH = 2


class RequestError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class ServiceState:
    """Shared service state: the render callable, static metadata, and the
    per-session in-flight counters. render_fn is injectable for tests."""

    def __init__(self, render_fn, meta, queue_depth=QUEUE_DEPTH, max_pixels=MAX_PIXELS):
        self.render_fn = render_fn
        self.meta = meta
        self.queue_depth = queue_depth
        self.max_pixels = max_pixels
        self._lock = threading.Lock()
        self._inflight = {}

    def try_acquire(self, session):
        with self._lock:
            if self._inflight.get(session, 0) >= self.queue_depth:
                return False
            self._inflight[session] = self._inflight.get(session, 0) + 1
            return True

    def release(self, session):
        with self._lock:
            n = self._inflight.get(session, 0) - 1
            if n <= 0:
                self._inflight.pop(session, None)
            else:
                self._inflight[session] = n


def parse_render_request(body, max_pixels=MAX_PIXELS):
    """Validate a /render body. Returns (pose, width, height, scale, fov_y).

    Raises RequestError(400) on malformed input and RequestError(413) when
    width*height exceeds the pixel budget.
    """
    try:
        req = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise RequestError(400, f"body is not valid JSON: {e}") from e
    if not isinstance(req, dict):
        raise RequestError(400, "body must be a JSON object")
    has_pose = "pose" in req
    has_orbit = "orbit" in req
    if has_pose == has_orbit:
        raise RequestError(400, "exactly one of pose/orbit is required")
    try:
        width = int(req["width"])
        height = int(req["height"])
    except (KeyError, TypeError, ValueError) as e:
        raise RequestError(400, f"width/height must be integers: {e}") from e
    if width < 1 or height < 1:
        raise RequestError(400, "width/height must be positive")
    if width * height > max_pixels:
        raise RequestError(413, f"{width}x{height} exceeds {max_pixels} pixel budget")
    scale = req.get("scale", 1)
    if scale not in (1, 2, 4, 8):
        raise RequestError(400, "scale must be one of 1, 2, 4, 8")
    if width % scale or height % scale:
        raise RequestError(400, f"scale {scale} does not divide {width}x{height}")
    fov_y = req.get("fov_y")
    if fov_y is not None:
        try:
            fov_y = float(fov_y)
        except (TypeError, ValueError) as e:
            raise RequestError(400, f"fov_y must be a number: {e}") from e
        if not 0.0 < fov_y < 180.0:
            raise RequestError(400, "fov_y must be in (0, 180) degrees")

    if has_orbit:
        orb = req["orbit"]
        try:
            pose = pose_from_orbit(
                azimuth_deg=float(orb["azimuth"]),
                elevation_deg=float(orb["elevation"]),
                radius=float(orb["radius"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise RequestError(400, f"bad orbit: {e}") from e
    else:
        vals = req["pose"]
        if not isinstance(vals, list) or len(vals) != 16:
            raise RequestError(400, "pose must be 16 numbers, row-major 4x4")
        try:
            pose = Pose(np.asarray(vals, dtype=np.float64).reshape(4, 4))
        except (TypeError, ValueError) as e:
            raise RequestError(400, f"bad pose: {e}") from e
    return pose, width, height, scale, fov_y


def _png_bytes(img):
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img)).save(buf, format="PNG")
    return buf.getvalue()


def _make_handler(state):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # keep test output quiet
            pass

        def _cors(self):
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type, X-Session")

        def _reply(self, code, body, ctype="application/json"):
            self.send_response(code)
            self._cors()
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _reply_error(self, code, message):
            self._reply(code, json.dumps({"error": message}).encode("utf-8"))

        def do_OPTIONS(self):
            self.send_response(204)
            self._cors()
            self.send_header("Content-Length", "0")
            self.end_headers()

        def do_GET(self):
            if self.path.split("?")[0] == "/meta":
                self._reply(200, json.dumps(state.meta, sort_keys=True).encode("utf-8"))
            else:
                self._reply_error(404, f"no such path {self.path!r}")

        def do_POST(self):
            if self.path.split("?")[0] != "/render":
                self._reply_error(404, f"no such path {self.path!r}")
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                self._reply_error(400, "bad Content-Length")
                return
            body = self.rfile.read(length) if length else b""
            session = self.headers.get("X-Session") or self.client_address[0]
            try:
                pose, width, height, scale, fov_y = parse_render_request(
                    body, state.max_pixels
                )
            except RequestError as e:
                self._reply_error(e.code, str(e))
                return
            if not state.try_acquire(session):
                self._reply_error(503, "render queue full for this session")
                return
            try:
                img = state.render_fn(pose, width, height, scale, fov_y)
                self._reply(200, _png_bytes(img), ctype="image/png")
            except ValueError as e:
                self._reply_error(400, str(e))
            finally:
                state.release(session)

    return Handler


def build_render_fn(model, base_intr, threads=1):
    """Render callable for the service: request size, checkpoint field of view
    unless the request carries its own fov_y."""

    def render(pose, width, height, scale, fov_y):
        if fov_y is not None:
            focal = 0.5 * height / math.tan(0.5 * math.radians(fov_y))
        else:
            focal = base_intr.focal * (height / base_intr.height)
        intr = CameraIntrinsics(width=width, height=height, focal=focal)
        return render_image(model, intr, pose, scale=scale, threads=threads)

    return render


def service_from_checkpoint(path, threads=1):
    """Load a checkpoint and assemble the ServiceState for it."""
    ckpt = load_checkpoint(path)
    model = model_from_checkpoint(ckpt)
    intr = intrinsics_from_checkpoint(ckpt) or toy_intrinsics(256, 256)
    with open(path, "rb") as f:
        digest = hashlib.sha256(f.read()).hexdigest()
    cfg = ckpt.header["config"]
    meta = {
        "aabb": cfg["aabb"],
        "intrinsics": {
            "width": intr.width,
            "height": intr.height,
            "focal": intr.focal,
            "cx": intr.cx,
            "cy": intr.cy,
        },
        "preset": ckpt.header.get("preset", "custom"),
        "param_count": int(ckpt.header.get("param_count", 0)),
        "checkpoint_hash": digest,
        "scene_mode": cfg["scene_mode"],
        "background": cfg["background"],
        "step": ckpt.header.get("step", 0),
    }
    return ServiceState(build_render_fn(model, intr, threads=threads), meta)


def create_server(state, port=7860, host="127.0.0.1"):
    """Bind (but do not start) the HTTP server; port 0 picks a free port."""
    return ThreadingHTTPServer((host, port), _make_handler(state))


def run_server(checkpoint_path, port=7860, threads=1, host="127.0.0.1"):
    state = service_from_checkpoint(checkpoint_path, threads=threads)
    httpd = create_server(state, port=port, host=host)
    print(
        f"serving {state.meta['preset']} checkpoint "
        f"({state.meta['param_count']} params) on http://{host}:{httpd.server_address[1]}"
    )
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
