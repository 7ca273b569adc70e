"""Dataset loading, image and checkpoint I/O, and synthetic scene generators.

The synthetic generators exist so tests can train against targets that the
model class can represent exactly: 2D composites come straight from the
direct compositor, 3D views are rendered by this package's own renderer from
a hand-built grid field.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import cv2
import numpy as np
import torch
from PIL import Image

from . import compositor, renderer
from .errors import (
    CorruptCheckpoint,
    InconsistentResolution,
    MalformedJson,
    MissingFile,
    UnsupportedFormat,
    VersionMismatch,
)
from .field import GridField2D, GridField3D
from .palette import Palette
from .renderer import Camera

CHECKPOINT_FORMAT = "palettefield-checkpoint"
CHECKPOINT_VERSION = 1

DEFAULT_NERF_AABB = ((-1.5, -1.5, -1.5), (1.5, 1.5, 1.5))


# --------------------------------------------------------------------------
# images


def load_image(path, background=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Decode an 8- or 16-bit PNG (or other cv2-readable file) to floats.

    Returns (H, W, 3) in [0, 1]; grayscale replicates channels and straight
    alpha composites onto the given background color.
    """
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise UnsupportedFormat(f"could not decode {path}")
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    data = raw.astype(np.float64) / scale
    if data.ndim == 2:
        return np.repeat(data[:, :, None], 3, axis=2)
    if data.shape[2] == 3:
        return data[:, :, ::-1].copy()  # BGR -> RGB
    if data.shape[2] == 4:
        rgb = data[:, :, 2::-1]
        alpha = data[:, :, 3:4]
        bg = np.asarray(background, dtype=np.float64)
        return rgb * alpha + bg * (1.0 - alpha)
    raise UnsupportedFormat(f"unsupported channel count {data.shape[2]} in {path}")


def to_uint8(rgb: np.ndarray) -> np.ndarray:
    return np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_png(rgb: np.ndarray) -> bytes:
    """8-bit PNG bytes for a float image (values clamped then quantized)."""
    import io

    arr = to_uint8(rgb)
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, rgb: np.ndarray) -> None:
    Path(path).write_bytes(encode_png(rgb))


def save_weight_maps(directory, render: renderer.ImageRender) -> list[Path]:
    """Per-layer weight maps as grayscale PNGs plus float32 .npy dumps."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for i in range(render.layer_weights.shape[-1]):
        layer = render.layer_weights[..., i]
        png = directory / f"layer_{i:02d}.png"
        write_png(png, layer)
        npy = directory / f"layer_{i:02d}.npy"
        np.save(npy, layer.astype(np.float32))
        written += [png, npy]
    return written


# --------------------------------------------------------------------------
# multi-view datasets


@dataclass
class MultiViewDataset:
    frames: list  # [(Camera, (H, W, 3) float image), ...]
    aabb: np.ndarray
    source: str = ""

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def cameras(self) -> list[Camera]:
        return [cam for cam, _ in self.frames]

    @property
    def images(self) -> np.ndarray:
        return np.stack([img for _, img in self.frames])

    def all_pixels(self) -> np.ndarray:
        return self.images.reshape(-1, 3)


def load_nerf_synthetic(
    directory,
    split: str = "train",
    background=(1.0, 1.0, 1.0),
    aabb=DEFAULT_NERF_AABB,
    near: float = 2.0,
    far: float = 6.0,
) -> MultiViewDataset:
    """Load a `transforms_<split>.json` dataset directory.

    Focal length comes from camera_angle_x as 0.5 * W / tan(angle / 2);
    poses are 4x4 camera-to-world matrices in the OpenGL convention. RGBA
    frames composite onto the configured background (white by default).
    """
    directory = Path(directory)
    transforms = directory / f"transforms_{split}.json"
    if not transforms.exists():
        raise MissingFile(str(transforms))
    try:
        spec = json.loads(transforms.read_text())
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"{transforms}: {exc}") from exc
    if "camera_angle_x" not in spec or "frames" not in spec:
        raise MalformedJson(f"{transforms} lacks camera_angle_x or frames")

    angle_x = float(spec["camera_angle_x"])
    frames = []
    resolution = None
    for entry in spec["frames"]:
        try:
            rel = entry["file_path"]
            matrix = np.asarray(entry["transform_matrix"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedJson(f"bad frame entry in {transforms}: {exc}") from exc
        img_path = directory / rel
        if img_path.suffix == "":
            img_path = img_path.with_suffix(".png")
        image = load_image(img_path, background=background)
        if resolution is None:
            resolution = image.shape[:2]
        elif image.shape[:2] != resolution:
            raise InconsistentResolution(
                f"{img_path} is {image.shape[:2]}, expected {resolution}"
            )
        h, w = image.shape[:2]
        camera = Camera(
            width=w,
            height=h,
            focal=renderer.focal_from_angle_x(w, angle_x),
            pose=matrix,
            near=near,
            far=far,
        )
        frames.append((camera, image))
    return MultiViewDataset(frames, np.asarray(aabb, dtype=np.float64), str(directory))


def load_image_directory(directory, background=(1.0, 1.0, 1.0)) -> list[np.ndarray]:
    """Plain directory-of-images loading (no poses), sorted by filename."""
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingFile(str(directory))
    paths = sorted(
        p for p in directory.iterdir()
        if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    if not paths:
        raise MissingFile(f"no images in {directory}")
    return [load_image(p, background=background) for p in paths]


# --------------------------------------------------------------------------
# checkpoints


def _tensor_bytes(tensor: torch.Tensor) -> bytes:
    return np.ascontiguousarray(
        tensor.detach().numpy().astype("<f4")
    ).tobytes()


def save_checkpoint(path, fields, palette: Palette, meta: dict | None = None) -> None:
    """Write the checkpoint container: one JSON header line, then raw
    little-endian float32 tensors in C order, in header-declared order.

    Palette colors are stored at full precision (training values, not the
    [0, 1] display clamp) so a load reproduces the training state exactly.
    """
    if isinstance(fields, GridField2D):
        mode = "2d"
        resolution = [fields.height, fields.width]
        aabb = None
        tensors = [("opacity_logits", fields.opacity_logits)]
    elif isinstance(fields, GridField3D):
        mode = "3d"
        resolution = list(fields.resolution)
        aabb = fields.aabb.tolist()
        tensors = [
            ("density_logits", fields.density_logits),
            ("opacity_logits", fields.opacity_logits),
        ]
    else:
        raise TypeError(f"unsupported field type {type(fields)!r}")

    payload = b"".join(_tensor_bytes(t) for _, t in tensors)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "mode": mode,
        "resolution": resolution,
        "K": palette.K,
        "aabb": aabb,
        "palette": {
            "colors": palette.colors.tolist(),
            "learnable": palette.learnable.tolist(),
            "background_index": 0,
        },
        "meta": meta or {},
        "tensors": [
            {"name": name, "shape": list(t.shape)} for name, t in tensors
        ],
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(payload)


def load_checkpoint(path):
    """Read a checkpoint; returns (fields, palette, header dict)."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    blob = path.read_bytes()
    newline = blob.find(b"\n")
    if newline < 0:
        raise CorruptCheckpoint("missing header line")
    try:
        header = json.loads(blob[:newline].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable header: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpoint("not a palettefield checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"checkpoint version {header.get('version')}, expected {CHECKPOINT_VERSION}"
        )

    payload = blob[newline + 1 :]
    if hashlib.sha256(payload).hexdigest() != header.get("checksum"):
        raise CorruptCheckpoint("payload checksum mismatch")

    tensors = {}
    offset = 0
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"]))
        nbytes = count * 4
        chunk = payload[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise CorruptCheckpoint(f"tensor {entry['name']} truncated")
        arr = np.frombuffer(chunk, dtype="<f4").reshape(entry["shape"])
        tensors[entry["name"]] = torch.as_tensor(arr.astype(np.float64))
        offset += nbytes
    if offset != len(payload):
        raise CorruptCheckpoint("trailing bytes after declared tensors")

    palette = Palette(
        np.asarray(header["palette"]["colors"], dtype=np.float64),
        np.asarray(header["palette"]["learnable"], dtype=bool),
    )
    if header["mode"] == "2d":
        fields = GridField2D(tensors["opacity_logits"])
    else:
        fields = GridField3D(
            tensors["density_logits"],
            tensors["opacity_logits"],
            np.asarray(header["aabb"], dtype=np.float64),
        )
    return fields, palette, header


# --------------------------------------------------------------------------
# synthetic ground truth


@dataclass
class SyntheticSpec2D:
    palette: Palette
    layers: np.ndarray  # (H, W, K) alphas in [0, 1]

    def __post_init__(self):
        layers = np.asarray(self.layers, dtype=np.float64)
        if layers.ndim != 3:
            raise ValueError("layers must be (H, W, K)")
        if layers.min() < 0.0 or layers.max() > 1.0:
            raise ValueError("layer alphas must lie in [0, 1]")
        if layers.shape[2] != self.palette.K:
            raise ValueError("layer count must match palette K")
        self.layers = layers


def generate_synthetic_2d(spec: SyntheticSpec2D) -> tuple[np.ndarray, np.ndarray]:
    """Composite ground-truth layers into an image; returns (image, layers)."""
    h, w, k = spec.layers.shape
    alphas = np.concatenate([np.ones((h, w, 1)), spec.layers], axis=2)
    image = compositor.composite_direct(spec.palette.colors, alphas)
    return image, spec.layers.copy()


def make_blob_layers(
    height: int,
    width: int,
    K: int,
    seed: int = 0,
    blobs_per_layer: int = 2,
) -> np.ndarray:
    """Sparse blob alpha maps with fully opaque cores and soft rims.

    Opaque cores guarantee every layer color appears pure somewhere, which
    puts the true palette colors on the hull of the pixel cloud.
    """
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:height, 0:width]
    layers = np.zeros((height, width, K))
    scale = min(height, width)
    for k in range(K):
        alpha = np.zeros((height, width))
        for _ in range(blobs_per_layer):
            cy = rng.uniform(0.2, 0.8) * height
            cx = rng.uniform(0.2, 0.8) * width
            radius = rng.uniform(0.10, 0.18) * scale
            dist = np.hypot(rows - cy, cols - cx)
            rim = np.clip((radius - dist) / (0.3 * radius), 0.0, 1.0)
            alpha = np.maximum(alpha, rim)
        layers[:, :, k] = alpha
    return layers


@dataclass
class SpherePrimitive:
    center: tuple
    radius: float
    layer: int

    def inside(self, points: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=np.float64)
        return ((points - c) ** 2).sum(axis=-1) <= self.radius**2


@dataclass
class BoxPrimitive:
    center: tuple
    half_size: tuple
    layer: int

    def inside(self, points: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=np.float64)
        h = np.asarray(self.half_size, dtype=np.float64)
        return (np.abs(points - c) <= h).all(axis=-1)


@dataclass
class SyntheticSpec3D:
    palette: Palette
    primitives: list
    grid_resolution: int = 64
    aabb: tuple = ((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    density: float = 40.0
    empty_density_logit: float = -15.0
    logit_inside: float = 8.0
    logit_outside: float = -8.0


def _inverse_softplus(y: float) -> float:
    return float(np.log(np.expm1(y)))


def build_primitive_field(spec: SyntheticSpec3D) -> GridField3D:
    """Grid field that is dense and single-layer inside each primitive."""
    from .field import allocate3d, node_positions

    K = spec.palette.K
    res = (spec.grid_resolution,) * 3
    fields = allocate3d(
        res, K=K, init_density=spec.empty_density_logit,
        init_logit=spec.logit_outside, aabb=spec.aabb, seed=0,
    )
    fields.density_logits = torch.full(res, float(spec.empty_density_logit),
                                       dtype=torch.float64)
    fields.opacity_logits = torch.full(res + (K,), float(spec.logit_outside),
                                       dtype=torch.float64)
    nodes = node_positions(fields)
    density_inside = _inverse_softplus(spec.density)
    for prim in spec.primitives:
        if not 1 <= prim.layer <= K:
            raise ValueError(f"primitive layer {prim.layer} outside 1..{K}")
        mask = torch.as_tensor(prim.inside(nodes))
        fields.density_logits[mask] = density_inside
        fields.opacity_logits[..., prim.layer - 1][mask] = spec.logit_inside
    return fields


def orbit_cameras(
    count: int,
    radius: float = 3.0,
    elevation_deg: float = 25.0,
    width: int = 128,
    height: int = 128,
    fov_x_deg: float = 50.0,
    near: float = 0.5,
    far: float = 8.0,
    phase: float = 0.0,
) -> list[Camera]:
    """Evenly spaced look-at-origin cameras on a tilted ring."""
    elev = np.deg2rad(elevation_deg)
    focal = renderer.focal_from_angle_x(width, np.deg2rad(fov_x_deg))
    cameras = []
    for i in range(count):
        theta = phase + 2.0 * np.pi * i / count
        eye = (
            radius * np.cos(elev) * np.cos(theta),
            radius * np.sin(elev),
            radius * np.cos(elev) * np.sin(theta),
        )
        cameras.append(
            Camera(width, height, focal, renderer.look_at_pose(eye), near, far)
        )
    return cameras


def generate_synthetic_3d(
    spec: SyntheticSpec3D,
    cameras: list[Camera],
    samples_per_ray: int = 128,
) -> MultiViewDataset:
    """Render ground-truth views from the hand-built primitive field.

    Because views come from this package's own renderer, the training target
    is exactly realizable by the model class.
    """
    fields = build_primitive_field(spec)
    frames = []
    for cam in cameras:
        out = renderer.render_image(cam, fields, spec.palette, M=samples_per_ray)
        frames.append((cam, out.rgb))
    return MultiViewDataset(frames, np.asarray(spec.aabb, dtype=np.float64),
                            "synthetic3d")
