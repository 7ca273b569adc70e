"""Ray generation, marching, and layer-compositing volume rendering.

Cameras are pinhole with OpenGL pose convention (camera looks down -z, y up).
The core compositing functions operate on torch tensors and stay
differentiable; `render_image` wraps them for inference and returns numpy.

Per ray the color is C = sum_j tau_j (1 - exp(-theta_j d_j)) r_j, where r_j
blends palette colors with the per-sample layer weights. Residual
transmittance past the last sample falls to the opaque background color, so
per-pixel layer weights always sum to one and recoloring any palette entry
moves the pixel by exactly that weight times the color delta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import compositor
from .errors import NoIntersection, OutOfBounds, ShapeMismatch
from .field import GridField2D, GridField3D, sample, sample2d

_SLAB_EPS = 1e-9

ABLATIONS = ("full", "direct_opaque", "fixed_palette")


@dataclass(frozen=True)
class Camera:
    width: int
    height: int
    focal: float
    pose: np.ndarray          # (4, 4) camera-to-world
    near: float = 0.05
    far: float = 20.0

    def __post_init__(self):
        pose = np.asarray(self.pose, dtype=np.float64).reshape(4, 4)
        if self.focal <= 0:
            raise ValueError("focal must be positive")
        rot = pose[:3, :3]
        if np.abs(rot @ rot.T - np.eye(3)).max() > 1e-5:
            raise ValueError("pose rotation block is not orthonormal")
        pose.setflags(write=False)
        object.__setattr__(self, "pose", pose)

    def scaled(self, width: int) -> "Camera":
        """Same view at a reduced raster width (height and focal follow)."""
        scale = width / self.width
        return Camera(
            width=width,
            height=max(1, round(self.height * scale)),
            focal=self.focal * scale,
            pose=self.pose.copy(),
            near=self.near,
            far=self.far,
        )

    def to_json_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "focal": self.focal,
            "pose": self.pose.tolist(),
            "near": self.near,
            "far": self.far,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Camera":
        return cls(
            width=int(d["width"]),
            height=int(d["height"]),
            focal=float(d["focal"]),
            pose=np.asarray(d["pose"], dtype=np.float64),
            near=float(d["near"]),
            far=float(d["far"]),
        )


def focal_from_angle_x(width: int, camera_angle_x: float) -> float:
    return 0.5 * width / np.tan(0.5 * camera_angle_x)


def look_at_pose(eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Camera-to-world matrix looking from eye toward target."""
    eye = np.asarray(eye, dtype=np.float64)
    z = eye - np.asarray(target, dtype=np.float64)
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(up, dtype=np.float64), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    pose = np.eye(4)
    pose[:3, 0] = x
    pose[:3, 1] = y
    pose[:3, 2] = z
    pose[:3, 3] = eye
    return pose


@dataclass
class Rays:
    origins: np.ndarray            # (N, 3)
    directions: np.ndarray         # (N, 3), unit length
    t_near: np.ndarray | None = None
    t_far: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.origins)

    def take(self, idx) -> "Rays":
        return Rays(
            self.origins[idx],
            self.directions[idx],
            None if self.t_near is None else self.t_near[idx],
            None if self.t_far is None else self.t_far[idx],
        )


def generate_rays(camera: Camera, pixels) -> Rays:
    """Rays through pixel centers; pixels is (N, 2) integer (row, col)."""
    px = np.asarray(pixels, dtype=np.int64).reshape(-1, 2)
    rows, cols = px[:, 0], px[:, 1]
    if (
        (rows < 0).any() or (rows >= camera.height).any()
        or (cols < 0).any() or (cols >= camera.width).any()
    ):
        raise OutOfBounds(f"pixels outside {camera.height}x{camera.width}")
    x = (cols + 0.5 - camera.width / 2.0) / camera.focal
    y = -(rows + 0.5 - camera.height / 2.0) / camera.focal
    dirs_cam = np.stack([x, y, -np.ones_like(x)], axis=-1)
    dirs = dirs_cam @ camera.pose[:3, :3].T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(camera.pose[:3, 3], dirs.shape).copy()
    return Rays(origins, dirs)


def camera_rays(camera: Camera) -> Rays:
    rows, cols = np.meshgrid(
        np.arange(camera.height), np.arange(camera.width), indexing="ij"
    )
    return generate_rays(camera, np.stack([rows.ravel(), cols.ravel()], axis=-1))


def clip_to_aabb(rays: Rays, aabb, near: float = 0.0, far: float = np.inf) -> tuple[Rays, np.ndarray]:
    """Slab-intersect rays with the box; returns clipped rays + hit mask."""
    aabb = np.asarray(aabb, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / rays.directions
        t1 = (aabb[0] - rays.origins) * inv
        t2 = (aabb[1] - rays.origins) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    t_lo = np.minimum(t1, t2).max(axis=1)
    t_hi = np.maximum(t1, t2).min(axis=1)
    t_near = np.maximum.reduce([t_lo, np.full_like(t_lo, near), np.zeros_like(t_lo)])
    t_far = np.minimum(t_hi, far)
    hit = t_far - t_near > _SLAB_EPS
    return Rays(rays.origins, rays.directions, t_near, t_far), hit


@dataclass
class RaySamples:
    t: torch.Tensor        # (N, M) strictly increasing sample depths
    delta: torch.Tensor    # (N, M) interval widths
    density: torch.Tensor  # (N, M) activated densities >= 0
    logits: torch.Tensor   # (N, M, K) raw per-layer opacity logits


def march(
    rays: Rays,
    field: GridField3D,
    M: int,
    stratified: bool = False,
    seed: int = 0,
    jitter: np.ndarray | None = None,
) -> RaySamples:
    """Sample the field at M points per ray (midpoint rule, equal intervals).

    With stratified=True each sample jitters uniformly inside its own
    interval; pass a precomputed (N, M) jitter array to make chunked renders
    independent of chunk boundaries. Rays must be clipped (t_near < t_far
    everywhere), otherwise NoIntersection is raised.
    """
    if M < 2:
        raise ValueError("need at least 2 samples per ray")
    if rays.t_near is None or rays.t_far is None:
        raise NoIntersection("rays are not clipped; call clip_to_aabb first")
    if np.any(rays.t_far - rays.t_near <= 0):
        raise NoIntersection("some rays do not intersect the volume")

    n = len(rays)
    if jitter is None:
        if stratified:
            jitter = np.random.default_rng(seed).random((n, M))
        else:
            jitter = np.full((n, M), 0.5)
    width = (rays.t_far - rays.t_near)[:, None] / M
    t = rays.t_near[:, None] + (np.arange(M)[None, :] + jitter) * width

    positions = rays.origins[:, None, :] + t[..., None] * rays.directions[:, None, :]
    density, logits = sample(field, torch.as_tensor(positions))
    return RaySamples(
        t=torch.as_tensor(t),
        delta=torch.as_tensor(np.broadcast_to(width, t.shape).copy()),
        density=density,
        logits=logits,
    )


@dataclass
class RayRender:
    color: torch.Tensor          # (N, 3)
    layer_weights: torch.Tensor  # (N, K+1), rows sum to 1
    opaque: torch.Tensor         # (N, K)
    acc: torch.Tensor            # (N,) accumulated opacity


def composite_rays(samples: RaySamples, palette, ablation: str = "full") -> RayRender:
    """Volume-composite ray samples against the palette.

    Differentiable w.r.t. densities, logits, and palette colors.
    """
    colors, _ = compositor._palette_tensor(palette)
    ext = samples.density * samples.delta           # (N, M)
    total = ext.sum(dim=-1)
    tau = torch.exp(ext - torch.cumsum(ext, dim=-1))  # exp(-sum_{t<j})
    contrib = tau * (1.0 - torch.exp(-ext))          # (N, M)
    residual = torch.exp(-total)                     # (N,)

    if ablation == "direct_opaque":
        s = compositor.direct_opaque_weights(samples.logits)  # (N, M, K+1)
        opaque_stage = s[..., 1:]
    else:
        s = torch.exp(compositor.blend_activation(samples.logits))
        opaque_stage = torch.sigmoid(samples.logits)
    per_sample_color = torch.einsum("nmk,kc->nmc", s, colors)

    color = torch.einsum("nm,nmc->nc", contrib, per_sample_color)
    color = color + residual[:, None] * colors[0]

    layer_weights = torch.einsum("nm,nmk->nk", contrib, s)
    layer_weights = torch.cat(
        [layer_weights[:, :1] + residual[:, None], layer_weights[:, 1:]], dim=1
    )
    opaque = torch.einsum("nm,nmk->nk", contrib, opaque_stage)
    return RayRender(
        color=color, layer_weights=layer_weights, opaque=opaque,
        acc=contrib.sum(dim=-1),
    )


def render_color(samples: RaySamples, palette, ablation: str = "full") -> torch.Tensor:
    return composite_rays(samples, palette, ablation).color


def render_opaque(samples: RaySamples, ablation: str = "full") -> torch.Tensor:
    """Per-layer volume-rendered opacity, the sparsity loss input."""
    ext = samples.density * samples.delta
    tau = torch.exp(ext - torch.cumsum(ext, dim=-1))
    contrib = tau * (1.0 - torch.exp(-ext))
    if ablation == "direct_opaque":
        stage = compositor.direct_opaque_weights(samples.logits)[..., 1:]
    else:
        stage = torch.sigmoid(samples.logits)
    return torch.einsum("nm,nmk->nk", contrib, stage)


def render_layer_weights(samples: RaySamples, ablation: str = "full") -> torch.Tensor:
    """Accumulated per-layer mixing weights A with sum_i A_i = 1.

    Residual transmittance folds into the background entry, which makes the
    rendered color exactly sum_i A_i c_i.
    """
    K = samples.logits.shape[-1]
    dummy = torch.zeros((K + 1, 3), dtype=samples.logits.dtype)
    return composite_rays(samples, dummy, ablation).layer_weights


def composite_pixels(logits: torch.Tensor, palette, ablation: str = "full") -> RayRender:
    """Image-mode compositing: no marching, logits map straight to weights."""
    colors, _ = compositor._palette_tensor(palette)
    if ablation == "direct_opaque":
        s = compositor.direct_opaque_weights(logits)
        opaque = s[..., 1:]
    else:
        s = torch.exp(compositor.blend_activation(logits))
        opaque = torch.sigmoid(logits)
    color = torch.einsum("...k,kc->...c", s, colors)
    return RayRender(
        color=color, layer_weights=s, opaque=opaque,
        acc=torch.ones(logits.shape[:-1], dtype=logits.dtype),
    )


@dataclass
class ImageRender:
    rgb: np.ndarray            # (H, W, 3)
    layer_weights: np.ndarray  # (H, W, K+1)
    opaque: np.ndarray         # (H, W, K)


def render_image(
    camera: Camera,
    field: GridField3D,
    palette,
    M: int = 128,
    stratified: bool = False,
    seed: int = 0,
    ablation: str = "full",
    chunk: int = 8192,
) -> ImageRender:
    """Render a full view; deterministic given the seed.

    Stratified jitter is drawn once for the whole frame from (seed), so the
    result does not depend on chunking.
    """
    h, w = camera.height, camera.width
    K = field.K
    colors, _ = compositor._palette_tensor(palette)

    rays = camera_rays(camera)
    clipped, hit = clip_to_aabb(rays, field.aabb, camera.near, camera.far)

    rgb = np.empty((h * w, 3))
    weights = np.zeros((h * w, K + 1))
    opaque = np.zeros((h * w, K))
    bg = colors.detach().numpy()[0]
    rgb[:] = bg
    weights[:, 0] = 1.0

    hit_idx = np.flatnonzero(hit)
    if stratified:
        jitter_all = np.random.default_rng(seed).random((h * w, M))
    with torch.no_grad():
        for start in range(0, len(hit_idx), chunk):
            idx = hit_idx[start : start + chunk]
            jit = jitter_all[idx] if stratified else None
            samples = march(clipped.take(idx), field, M, jitter=jit)
            out = composite_rays(samples, colors, ablation)
            rgb[idx] = out.color.numpy()
            weights[idx] = out.layer_weights.numpy()
            opaque[idx] = out.opaque.numpy()
    return ImageRender(
        rgb.reshape(h, w, 3),
        weights.reshape(h, w, K + 1),
        opaque.reshape(h, w, K),
    )


def decimate_render(out: ImageRender, width: int) -> ImageRender:
    """Nearest-neighbor downscale of an image-mode render to a target width.

    Each output pixel is an exactly rendered pixel, so per-pixel identities
    (weight sums, recolor linearity) survive the decimation.
    """
    h, w = out.rgb.shape[:2]
    cols = np.linspace(0, w - 1, width).round().astype(int)
    rows = np.linspace(0, h - 1, max(1, round(h * width / w))).round().astype(int)
    grid = np.ix_(rows, cols)
    return ImageRender(out.rgb[grid], out.layer_weights[grid], out.opaque[grid])


def render_image2d(field: GridField2D, palette, ablation: str = "full") -> ImageRender:
    colors, _ = compositor._palette_tensor(palette)
    if colors.shape[0] != field.K + 1:
        raise ShapeMismatch(
            f"palette has {colors.shape[0]} colors, field expects {field.K + 1}"
        )
    with torch.no_grad():
        out = composite_pixels(field.opacity_logits, colors, ablation)
    return ImageRender(
        out.color.numpy(), out.layer_weights.numpy(), out.opaque.numpy()
    )
