"""HTTP render/edit service over a registry of immutable scene snapshots.

Edits never modify a registered scene; they insert the edited result under a
fresh id and return it, so renders in flight keep a consistent snapshot and
undo is just "use the old id".  Built on the standard library's threading
HTTP server; request handlers share the registry under a lock.
"""

from __future__ import annotations

import io
import json
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
from PIL import Image

from .editor import Cuboid, blend_scenes, swap_objects
from .renderer import CameraPose, RenderConfig, render_image
from .scene import CompositeScene

DEFAULT_MAX_PIXELS = 512 * 512


class BadRequest(ValueError):
    pass


def quaternion_to_rotation(q) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to a 3x3 rotation matrix."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,) or not np.all(np.isfinite(q)):
        raise BadRequest("quaternion must be four finite numbers (w, x, y, z)")
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise BadRequest("quaternion has zero norm")
    w, x, y, z = q / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def pose_from_json(d: dict) -> CameraPose:
    try:
        position = np.asarray(d["position"], dtype=np.float64)
        rotation = quaternion_to_rotation(d["quaternion_wxyz"])
        pose = CameraPose(position=position, rotation=rotation,
                          fx=float(d["fx"]), fy=float(d["fy"]),
                          cx=float(d["cx"]), cy=float(d["cy"]),
                          width=int(d["width"]), height=int(d["height"]))
    except BadRequest:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise BadRequest(f"invalid pose: {e}") from e
    if pose.width < 1 or pose.height < 1:
        raise BadRequest("image dimensions must be positive")
    return pose


class SceneRegistry:
    """Thread-safe id -> immutable scene snapshot map."""

    def __init__(self):
        self._scenes = {}
        self._lock = threading.Lock()
        self._counter = 0

    def add(self, scene, name: str | None = None) -> str:
        with self._lock:
            if name is None:
                self._counter += 1
                name = f"s{self._counter}"
            if name in self._scenes:
                raise ValueError(f"scene id {name!r} already registered")
            self._scenes[name] = scene
            return name

    def get(self, scene_id: str):
        with self._lock:
            return self._scenes.get(scene_id)

    def ids(self) -> list:
        with self._lock:
            return sorted(self._scenes)


def scene_info(scene) -> dict:
    if isinstance(scene, CompositeScene):
        return {
            "dims": [scene.dims.nx, scene.dims.ny, scene.dims.nz],
            "feature_dim": scene.sources[0].grid.feature_dim,
            "occupied_voxels": int(scene.occupancy.sum()),
            "active_vertices": sum(s.grid.n_active_vertices for s in scene.sources),
            "decoder": "composite",
            "encoding": "composite",
            "sources": len(scene.sources),
            "voxel_size": scene.voxel_size,
            "origin": list(scene.origin),
        }
    return {
        "dims": [scene.dims.nx, scene.dims.ny, scene.dims.nz],
        "feature_dim": scene.grid.feature_dim,
        "occupied_voxels": scene.grid.n_occupied,
        "active_vertices": scene.grid.n_active_vertices,
        "decoder": f"hidden{getattr(scene.decoder, 'hidden', '?')}"
                   + ("-fused" if scene.is_fused else ""),
        "encoding": "u8tanh" if scene.tanh_mode else "f32",
        "voxel_size": scene.voxel_size,
        "origin": list(scene.origin),
    }


def encode_png(rgb: np.ndarray) -> bytes:
    img = Image.fromarray((np.clip(rgb, 0.0, 1.0) * 255.0).round().astype(np.uint8))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


class DiverService:
    def __init__(self, registry: SceneRegistry, max_pixels: int = DEFAULT_MAX_PIXELS,
                 static_dir: str | None = None):
        self.registry = registry
        self.max_pixels = max_pixels
        self.static_dir = Path(static_dir) if static_dir else None

    # -- endpoint implementations; each returns (status, headers, body) ----

    def render(self, payload: dict):
        scene_id = payload.get("scene")
        scene = self.registry.get(scene_id)
        if scene is None:
            return 404, {}, {"error": f"unknown scene {scene_id!r}"}
        pose = pose_from_json(payload.get("pose") or {})
        if pose.width * pose.height > self.max_pixels:
            return 413, {}, {"error": f"resolution {pose.width}x{pose.height} exceeds "
                                      f"{self.max_pixels} pixels"}
        quality = payload.get("quality") or {}
        config = RenderConfig(tau_t=float(quality.get("tau_t", 0.01)),
                              white_background=bool(quality.get("white_background", True)))
        t0 = time.perf_counter()
        result = render_image(scene, pose, config)
        millis = (time.perf_counter() - t0) * 1000.0
        headers = {
            "Content-Type": "image/png",
            "X-Render-Millis": f"{millis:.2f}",
            "X-Rays": str(result.n_rays),
            "X-MLP-Calls": str(result.mlp_calls),
        }
        return 200, headers, encode_png(result.rgb)

    def info(self, scene_id: str):
        scene = self.registry.get(scene_id)
        if scene is None:
            return 404, {}, {"error": f"unknown scene {scene_id!r}"}
        return 200, {}, {"id": scene_id, **scene_info(scene)}

    def list_scenes(self):
        return 200, {}, {"scenes": self.registry.ids()}

    def edit_swap(self, payload: dict):
        scene = self.registry.get(payload.get("scene"))
        if scene is None:
            return 404, {}, {"error": f"unknown scene {payload.get('scene')!r}"}
        try:
            ca = Cuboid(tuple(payload["cuboid_a"]["min"]), tuple(payload["cuboid_a"]["max"]))
            cb = Cuboid(tuple(payload["cuboid_b"]["min"]), tuple(payload["cuboid_b"]["max"]))
            k = int(payload.get("k", 12))
            seed = int(payload.get("seed", 0))
            edited = swap_objects(scene, ca, cb, k=k, seed=seed)
        except (KeyError, TypeError, ValueError) as e:
            return 400, {}, {"error": str(e)}
        new_id = self.registry.add(edited)
        return 200, {}, {"scene": new_id}

    def edit_blend(self, payload: dict):
        ids = payload.get("scenes") or []
        scenes = [self.registry.get(i) for i in ids]
        if not scenes or any(s is None for s in scenes):
            return 404, {}, {"error": f"unknown scene in {ids!r}"}
        try:
            placements = payload.get("placements")
            composite = blend_scenes(scenes, placements)
        except (TypeError, ValueError) as e:
            return 400, {}, {"error": str(e)}
        new_id = self.registry.add(composite)
        return 200, {}, {"scene": new_id}


def make_handler(service: DiverService):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, status, headers, body):
            if isinstance(body, (dict, list)):
                body = json.dumps(body).encode()
                headers = {"Content-Type": "application/json", **headers}
            self.send_response(status)
            for k, v in headers.items():
                self.send_header(k, v)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _json_body(self):
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b"{}"
            try:
                return json.loads(raw or b"{}")
            except json.JSONDecodeError as e:
                raise BadRequest(f"invalid JSON body: {e}") from e

        def do_POST(self):
            try:
                payload = self._json_body()
                if self.path == "/render":
                    status, headers, body = service.render(payload)
                elif self.path == "/edit/swap":
                    status, headers, body = service.edit_swap(payload)
                elif self.path == "/edit/blend":
                    status, headers, body = service.edit_blend(payload)
                else:
                    status, headers, body = 404, {}, {"error": f"no route {self.path}"}
            except BadRequest as e:
                status, headers, body = 400, {}, {"error": str(e)}
            except Exception as e:  # pragma: no cover - last-resort guard
                status, headers, body = 500, {}, {"error": f"internal error: {e}"}
            self._send(status, headers, body)

        def do_GET(self):
            m = re.fullmatch(r"/scene/([^/]+)/info", self.path)
            if m:
                self._send(*service.info(m.group(1)))
                return
            if self.path == "/scenes":
                self._send(*service.list_scenes())
                return
            if service.static_dir is not None:
                rel = "index.html" if self.path in ("/", "") else self.path.lstrip("/")
                target = (service.static_dir / rel).resolve()
                if target.is_file() and str(target).startswith(str(service.static_dir.resolve())):
                    ctype = {"html": "text/html", "js": "text/javascript",
                             "css": "text/css", "map": "application/json",
                             "png": "image/png"}.get(target.suffix.lstrip("."),
                                                     "application/octet-stream")
                    self._send(200, {"Content-Type": ctype}, target.read_bytes())
                    return
            self._send(404, {}, {"error": f"no route {self.path}"})

    return Handler


def serve(registry: SceneRegistry, host: str = "127.0.0.1", port: int = 8080,
          max_pixels: int = DEFAULT_MAX_PIXELS, static_dir: str | None = None):
    """Start the service; returns the server object (caller joins or shuts down)."""
    service = DiverService(registry, max_pixels, static_dir)
    server = ThreadingHTTPServer((host, port), make_handler(service))
    return server
