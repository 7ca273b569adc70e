"""HTTP API over a loaded checkpoint for interactive palette editing.

The field snapshot is immutable; only the palette changes, guarded by a lock
and a monotonically increasing revision. Every render captures (palette,
revision) atomically at request start, so responses are pure functions of
(checkpoint, revision, view) and identical requests return identical bytes.

The checkpoint palette is clamped to [0, 1] once at load: the service is a
display surface, and keeping the served palette identical to the rendering
palette makes "reset to the original palette" reproduce renders exactly.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field as dc_field

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import dataio, renderer
from .field import GridField2D
from .palette import Palette, parse_hex_color


@dataclass
class SessionState:
    fields: object
    palette: Palette
    initial_palette: Palette
    cameras: list
    mode: str
    resolution: list
    max_side: int = 256
    render_samples: int = 128
    revision: int = 0
    lock: threading.Lock = dc_field(default_factory=threading.Lock)

    @property
    def K(self) -> int:
        return self.palette.K

    def snapshot(self) -> tuple[Palette, int]:
        with self.lock:
            return self.palette, self.revision

    def replace_palette(self, palette: Palette, expected_revision=None) -> int:
        with self.lock:
            if expected_revision is not None and expected_revision != self.revision:
                raise _StaleRevision(self.revision)
            self.palette = palette
            self.revision += 1
            return self.revision

    def view_count(self) -> int:
        return 1 if self.mode == "2d" else len(self.cameras)

    def native_width(self, view: int) -> int:
        if self.mode == "2d":
            return self.resolution[1]
        return self.cameras[view].width


class _StaleRevision(Exception):
    def __init__(self, revision: int):
        self.revision = revision


def load_session(checkpoint_path, max_side: int = 256,
                 render_samples: int = 128) -> SessionState:
    fields, palette, header = dataio.load_checkpoint(checkpoint_path)
    clamped = palette.with_colors(palette.export_colors())
    cameras = [
        renderer.Camera.from_json_dict(c)
        for c in header.get("meta", {}).get("cameras", [])
    ]
    return SessionState(
        fields=fields,
        palette=clamped,
        initial_palette=clamped,
        cameras=cameras,
        mode=header["mode"],
        resolution=list(header["resolution"]),
        max_side=max_side,
        render_samples=render_samples,
    )


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=status)


def _parse_color(value) -> np.ndarray:
    if isinstance(value, str):
        color = parse_hex_color(value)
    else:
        color = np.asarray(value, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(color)) or color.min() < 0.0 or color.max() > 1.0:
        raise ValueError("color channels must lie in [0, 1]")
    return color


def _render(session: SessionState, palette: Palette, view: int,
            width: int | None, layer: int | None):
    if isinstance(session.fields, GridField2D):
        out = renderer.render_image2d(session.fields, palette)
        if width and width < out.rgb.shape[1]:
            out = renderer.decimate_render(out, width)
    else:
        camera = session.cameras[view]
        if width and width < camera.width:
            camera = camera.scaled(width)
        out = renderer.render_image(
            camera, session.fields, palette, M=session.render_samples
        )
    if layer is None:
        return dataio.encode_png(out.rgb)
    return dataio.encode_png(out.layer_weights[..., layer])


def create_app(checkpoint_path=None, max_side: int = 256,
               render_samples: int = 128) -> FastAPI:
    """Build the service; with no checkpoint it reports 'loading' until
    `app.state.session` is assigned."""
    app = FastAPI(title="palettefield")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
        expose_headers=["ETag", "X-Palette-Revision"],
    )
    app.state.session = (
        load_session(checkpoint_path, max_side, render_samples)
        if checkpoint_path
        else None
    )

    def session() -> SessionState | None:
        return app.state.session

    @app.get("/healthz")
    def healthz():
        if session() is None:
            return Response("loading", status_code=503, media_type="text/plain")
        return Response("ok", media_type="text/plain")

    @app.get("/api/meta")
    def meta():
        s = session()
        if s is None:
            return _error(404, "no checkpoint loaded")
        _, revision = s.snapshot()
        views = [
            {
                "index": i,
                "width": s.native_width(i),
                "height": s.resolution[0] if s.mode == "2d" else s.cameras[i].height,
            }
            for i in range(s.view_count())
        ]
        return {
            "mode": s.mode,
            "resolution": s.resolution,
            "K": s.K,
            "views": views,
            "revision": revision,
        }

    @app.get("/api/palette")
    def get_palette():
        s = session()
        if s is None:
            return _error(404, "no checkpoint loaded")
        palette, revision = s.snapshot()
        body = {
            **palette.to_json_dict(),
            "hex": palette.hex_list(),
            "revision": revision,
        }
        return JSONResponse(body, headers={"ETag": str(revision)})

    @app.put("/api/palette")
    async def put_palette(request: Request):
        s = session()
        if s is None:
            return _error(404, "no checkpoint loaded")
        try:
            body = await request.json()
        except Exception:
            return _error(400, "body is not valid JSON")

        if_match = request.headers.get("if-match")
        expected = None
        if if_match is not None:
            try:
                expected = int(if_match.strip('"'))
            except ValueError:
                return _error(400, "If-Match must be a revision number")

        palette, _ = s.snapshot()
        try:
            if isinstance(body, dict) and "colors" in body:
                colors = np.array(
                    [_parse_color(c) for c in body["colors"]], dtype=np.float64
                )
                if len(colors) != s.K + 1:
                    raise ValueError(
                        f"expected {s.K + 1} colors, got {len(colors)}"
                    )
                replacement = palette.with_colors(colors)
            elif isinstance(body, dict) and "index" in body and "color" in body:
                index = int(body["index"])
                if not 0 <= index <= s.K:
                    raise ValueError(f"index {index} outside 0..{s.K}")
                replacement = palette.edit_color(index, _parse_color(body["color"]))
            else:
                raise ValueError("body must carry 'colors' or {'index','color'}")
        except (ValueError, TypeError) as exc:
            return _error(400, str(exc))

        try:
            revision = s.replace_palette(replacement, expected)
        except _StaleRevision as stale:
            return JSONResponse(
                {"error": "revision mismatch", "revision": stale.revision},
                status_code=409,
            )
        return {"revision": revision}

    @app.get("/api/render")
    def render(view: int = 0, width: int | None = None, layer: int | None = None):
        s = session()
        if s is None:
            return _error(404, "no checkpoint loaded")
        if not 0 <= view < s.view_count():
            return _error(400, f"view {view} outside 0..{s.view_count() - 1}")
        native = s.native_width(view)
        if width is None:
            width = min(native, s.max_side)
        if width < 1 or width > native:
            return _error(400, f"width must be in 1..{native}")
        if layer is not None and not 0 <= layer <= s.K:
            return _error(400, f"layer {layer} outside 0..{s.K}")
        palette, revision = s.snapshot()
        png = _render(s, palette, view, width, layer)
        return Response(
            png,
            media_type="image/png",
            headers={"X-Palette-Revision": str(revision), "ETag": str(revision)},
        )

    return app
