"""Dense parameter grids for the layered scene representation.

Image mode stores one opacity logit per pixel per layer; scene mode adds a
density logit grid over a 3D axis-aligned box. Grid nodes span the box
exactly (node i sits at min + i * extent / (R - 1)) and queries interpolate
trilinearly between nodes. Tensors are float64 in memory; checkpoints store
float32, so fresh allocations draw their init noise in float32 precision to
make save/load a bitwise roundtrip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InvalidK, OutOfBounds

_BOUNDS_SLACK = 1e-9


@dataclass
class GridField2D:
    opacity_logits: torch.Tensor  # (H, W, K)

    @property
    def height(self) -> int:
        return self.opacity_logits.shape[0]

    @property
    def width(self) -> int:
        return self.opacity_logits.shape[1]

    @property
    def K(self) -> int:
        return self.opacity_logits.shape[2]

    def clone(self) -> "GridField2D":
        return GridField2D(self.opacity_logits.detach().clone())


@dataclass
class GridField3D:
    density_logits: torch.Tensor  # (Rx, Ry, Rz)
    opacity_logits: torch.Tensor  # (Rx, Ry, Rz, K)
    aabb: np.ndarray              # (2, 3) [min; max] world bounds

    def __post_init__(self):
        aabb = np.asarray(self.aabb, dtype=np.float64).reshape(2, 3)
        if not (aabb[0] < aabb[1]).all():
            raise ValueError("aabb min must be strictly below max per axis")
        self.aabb = aabb

    @property
    def resolution(self) -> tuple[int, int, int]:
        return tuple(self.density_logits.shape)

    @property
    def K(self) -> int:
        return self.opacity_logits.shape[3]

    def clone(self) -> "GridField3D":
        return GridField3D(
            self.density_logits.detach().clone(),
            self.opacity_logits.detach().clone(),
            self.aabb.copy(),
        )


def _noise(shape, seed, offset=0.0, lo=-1e-2, hi=1e-2) -> torch.Tensor:
    # drawn and offset in float32 so checkpoints (float32 storage) roundtrip
    # fresh allocations bitwise
    rng = np.random.default_rng(seed)
    draw = (offset + rng.uniform(lo, hi, size=shape)).astype(np.float32)
    return torch.as_tensor(draw.astype(np.float64))


def allocate2d(height: int, width: int, K: int, init_logit: float = -2.0,
               seed: int = 0) -> GridField2D:
    if height < 1 or width < 1:
        raise ValueError("resolution must be positive")
    if K < 1:
        raise InvalidK(f"K must be >= 1, got {K}")
    return GridField2D(_noise((height, width, K), seed, offset=init_logit))


def allocate3d(resolution, K: int, init_density: float = -1.0,
               init_logit: float = -2.0, aabb=((-1, -1, -1), (1, 1, 1)),
               seed: int = 0) -> GridField3D:
    rx, ry, rz = (int(r) for r in resolution)
    if min(rx, ry, rz) < 2:
        raise ValueError("each axis needs at least 2 grid nodes")
    if K < 1:
        raise InvalidK(f"K must be >= 1, got {K}")
    density = _noise((rx, ry, rz), seed, offset=init_density)
    logits = _noise((rx, ry, rz, K), seed + 1, offset=init_logit)
    return GridField3D(density, logits, np.asarray(aabb, dtype=np.float64))


def sample2d(field: GridField2D, px) -> torch.Tensor:
    """Exact per-pixel logit lookup; px is (..., 2) integer (row, col)."""
    idx = torch.as_tensor(np.asarray(px, dtype=np.int64))
    rows, cols = idx[..., 0], idx[..., 1]
    h, w = field.height, field.width
    if (rows < 0).any() or (rows >= h).any() or (cols < 0).any() or (cols >= w).any():
        raise OutOfBounds(f"pixel index outside {h}x{w}")
    return field.opacity_logits[rows, cols]


def _grid_coords(field: GridField3D, x: torch.Tensor):
    """World positions -> fractional node coordinates, bounds-checked."""
    lo = torch.as_tensor(field.aabb[0])
    hi = torch.as_tensor(field.aabb[1])
    extent = hi - lo
    u = (x - lo) / extent
    if (u < -_BOUNDS_SLACK).any() or (u > 1.0 + _BOUNDS_SLACK).any():
        raise OutOfBounds("sample position outside the field aabb")
    res = torch.as_tensor(
        np.asarray(field.resolution, dtype=np.float64), dtype=x.dtype
    )
    return u.clamp(0.0, 1.0) * (res - 1.0)


def sample(field: GridField3D, x) -> tuple[torch.Tensor, torch.Tensor]:
    """Trilinear density and opacity logits at world positions (..., 3).

    Returns (density, logits) with density = softplus(density logit) >= 0.
    Differentiates through the grid tensors (the interpolation weights are
    exactly the gradients of each output w.r.t. its 8 corner parameters).
    """
    pos, _ = _as_positions(x)
    g = _grid_coords(field, pos)
    rx, ry, rz = field.resolution

    i0 = g.floor().long()
    max_idx = torch.as_tensor([rx - 2, ry - 2, rz - 2])
    i0 = torch.minimum(i0.clamp_min(0), max_idx)
    f = g - i0.to(g.dtype)                      # (..., 3) in [0, 1]

    ix, iy, iz = i0[..., 0], i0[..., 1], i0[..., 2]
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]

    flat_density = field.density_logits.reshape(-1)
    flat_logits = field.opacity_logits.reshape(-1, field.K)

    density = 0.0
    logits = 0.0
    for dx in (0, 1):
        wx = fx if dx else 1.0 - fx
        for dy in (0, 1):
            wy = fy if dy else 1.0 - fy
            for dz in (0, 1):
                wz = fz if dz else 1.0 - fz
                w = wx * wy * wz
                flat = ((ix + dx) * ry + (iy + dy)) * rz + (iz + dz)
                density = density + w * flat_density[flat]
                logits = logits + w[..., None] * flat_logits[flat]
    return F.softplus(density), logits


def _as_positions(x) -> tuple[torch.Tensor, bool]:
    if torch.is_tensor(x):
        return x, True
    return torch.as_tensor(np.asarray(x, dtype=np.float64)), False


def upsample(field: GridField3D, new_resolution) -> GridField3D:
    """Trilinearly resample both grids onto a finer node lattice.

    Node positions follow the shared lattice convention, so sampling the
    result at old node positions reproduces old values exactly whenever the
    old lattice embeds in the new one (new R - 1 a multiple of old R - 1,
    e.g. R -> 2R - 1); other target resolutions interpolate.
    """
    new_res = tuple(int(r) for r in new_resolution)
    if any(n < o for n, o in zip(new_res, field.resolution)):
        raise ValueError(
            f"new resolution {new_res} must be >= {field.resolution} per axis"
        )
    if new_res == field.resolution:
        return field.clone()

    density = F.interpolate(
        field.density_logits[None, None],
        size=new_res, mode="trilinear", align_corners=True,
    )[0, 0]
    logits = F.interpolate(
        field.opacity_logits.permute(3, 0, 1, 2)[None],
        size=new_res, mode="trilinear", align_corners=True,
    )[0].permute(1, 2, 3, 0).contiguous()
    return GridField3D(density, logits, field.aabb.copy())


def node_positions(field: GridField3D) -> np.ndarray:
    """World coordinates of every grid node, shape (Rx, Ry, Rz, 3)."""
    lo, hi = field.aabb
    axes = [np.linspace(lo[a], hi[a], field.resolution[a]) for a in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return grid
