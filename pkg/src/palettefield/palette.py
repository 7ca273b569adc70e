"""Ordered learnable palette: initialization, layer ordering, and edits.

Index 0 is the always-opaque background; index K is the topmost layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans

from . import colorhull
from .colorhull import ConvexHull3
from .errors import IndexOutOfRange, InvalidK

# Channel bounds while optimizing; export clamps to [0, 1].
OPTIM_CLAMP = (-0.25, 1.25)

INIT_MODES = ("random_in_hull", "kmeans", "hull_simplify", "user")


@dataclass(frozen=True)
class Palette:
    """K+1 ordered colors, row 0 = background, row K = topmost layer."""

    colors: np.ndarray                 # (K+1, 3) float64
    learnable: np.ndarray = field(default=None)  # (K+1,) bool

    def __post_init__(self):
        colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(colors) < 2:
            raise InvalidK("palette needs a background plus at least one layer")
        if not np.all(np.isfinite(colors)):
            raise ValueError("palette colors must be finite")
        learnable = self.learnable
        if learnable is None:
            learnable = np.ones(len(colors), dtype=bool)
        learnable = np.asarray(learnable, dtype=bool).reshape(-1)
        if len(learnable) != len(colors):
            raise ValueError("learnable flags must match palette length")
        colors.setflags(write=False)
        learnable.setflags(write=False)
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "learnable", learnable)

    @property
    def K(self) -> int:
        return len(self.colors) - 1

    def edit_color(self, index: int, new_color) -> "Palette":
        """Replace one entry, keeping everything else (including order)."""
        if not 0 <= index <= self.K:
            raise IndexOutOfRange(f"index {index} outside 0..{self.K}")
        colors = self.colors.copy()
        colors[index] = np.asarray(new_color, dtype=np.float64).reshape(3)
        return Palette(colors, self.learnable.copy())

    def with_colors(self, colors) -> "Palette":
        return Palette(np.asarray(colors, dtype=np.float64), self.learnable.copy())

    def export_colors(self) -> np.ndarray:
        return np.clip(self.colors, 0.0, 1.0)

    def hex_list(self) -> list[str]:
        out = []
        for c in np.round(self.export_colors() * 255).astype(int):
            out.append("#{:02X}{:02X}{:02X}".format(*c))
        return out

    def to_json_dict(self) -> dict:
        return {
            "colors": self.export_colors().tolist(),
            "background_index": 0,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "Palette":
        colors = np.asarray(data["colors"], dtype=np.float64)
        if data.get("background_index", 0) != 0:
            raise ValueError("background_index must be 0")
        return cls(colors)


def parse_hex_color(text: str) -> np.ndarray:
    """'#RRGGBB' -> float triple in [0, 1]."""
    s = text.strip().lstrip("#")
    if len(s) != 6:
        raise ValueError(f"not a #RRGGBB color: {text!r}")
    return np.array([int(s[i : i + 2], 16) / 255.0 for i in (0, 2, 4)])


def _darkest_mean(pixels: np.ndarray, fraction: float = 0.05) -> np.ndarray:
    """Mean of the darkest (lowest channel-sum) fraction of pixels."""
    sums = pixels.sum(axis=1)
    n = max(1, int(round(len(pixels) * fraction)))
    idx = np.argsort(sums, kind="stable")[:n]
    return pixels[idx].mean(axis=0)


def _snap_to_support(pixels, centers, labels, top: float = 0.02) -> np.ndarray:
    """Push each cluster center to its cluster's extreme in its own
    direction (robust support point: mean of the top `top` fraction by
    projection away from the global pixel mean).

    Region-boundary pixels are blends and drag plain k-means centroids
    inward, off the pure colors; but every blend lies between its pure
    endpoints, so the pure color is the extreme of its cluster along the
    centroid's outward direction. Averaging the projection tail instead of
    taking the single farthest pixel keeps the snap noise-robust.
    """
    mean = pixels.mean(axis=0)
    snapped = centers.copy()
    for i, center in enumerate(centers):
        members = pixels[labels == i]
        if len(members) < 8:
            continue
        direction = center - mean
        norm = np.linalg.norm(direction)
        if norm < 1e-9:
            continue
        proj = members @ (direction / norm)
        tail = members[proj >= np.quantile(proj, 1.0 - top)]
        if len(tail):
            snapped[i] = tail.mean(axis=0)
    return snapped


def init_palette(
    mode: str,
    hull: ConvexHull3 | None,
    pixels,
    K: int,
    seed: int = 0,
    colors=None,
    learnable=None,
) -> Palette:
    """Produce the K+1 starting colors for the joint optimization.

    random_in_hull: layers are uniform convex combinations of 4 random hull
    vertices; the background is the mean of the darkest 5% of pixels.
    kmeans: K+1-means over (subsampled) pixels with k-means++ seeding and 50
    iterations; the centroid claiming the most pixels becomes the background
    (the background is whatever explains most of the scene), the rest are
    ordered by descending cluster size.
    hull_simplify: the hull reduced to K+1 vertices; the vertex nearest to
    the most pixels becomes the background.
    user: colors passed through unchanged.
    """
    if K < 1:
        raise InvalidK(f"K must be >= 1, got {K}")
    if mode not in INIT_MODES:
        raise ValueError(f"unknown init mode {mode!r}; expected one of {INIT_MODES}")

    if mode == "user":
        if colors is None:
            raise ValueError("mode='user' requires explicit colors")
        colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        if len(colors) != K + 1:
            raise InvalidK(f"expected {K + 1} colors, got {len(colors)}")
        return Palette(colors, learnable)

    pix = np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
    if len(pix) == 0:
        raise ValueError("need at least one pixel")
    rng = np.random.default_rng(seed)

    if mode == "kmeans":
        sample = pix
        if len(sample) > 100_000:
            sample = sample[rng.choice(len(sample), 100_000, replace=False)]
        km = KMeans(
            n_clusters=K + 1,
            init="k-means++",
            n_init=1,
            max_iter=50,
            random_state=seed % (2**32),
        ).fit(sample)
        centers = _snap_to_support(sample, km.cluster_centers_, km.labels_)
        counts = np.bincount(km.labels_, minlength=K + 1)
        bg = int(np.argmax(counts))
        rest = [i for i in range(K + 1) if i != bg]
        rest.sort(key=lambda i: (-counts[i], i))
        order = [bg] + rest
        return Palette(centers[order], learnable)

    if hull is None:
        raise ValueError(f"mode={mode!r} requires a hull")

    if mode == "random_in_hull":
        background = _darkest_mean(pix)
        layers = []
        nverts = len(hull.vertices)
        for _ in range(K):
            idx = rng.choice(nverts, size=min(4, nverts), replace=False)
            weights = rng.dirichlet(np.ones(len(idx)))
            layers.append(weights @ hull.vertices[idx])
        return Palette(np.vstack([background, layers]), learnable)

    # hull_simplify
    simplified = colorhull.simplify_to_palette(hull, K + 1)
    votes = np.bincount(
        assign_pixels(pix, Palette(simplified)), minlength=K + 1
    )
    bg = int(np.argmax(votes))
    order = [bg] + [i for i in range(K + 1) if i != bg]
    return Palette(simplified[order], learnable)


def assign_pixels(pixels, palette: Palette) -> np.ndarray:
    """Index of the nearest palette color (squared L2) for each pixel.

    Ties resolve to the lowest palette index.
    """
    pix = np.asarray(pixels, dtype=np.float64).reshape(-1, 3)
    d2 = ((pix[:, None, :] - palette.colors[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def determine_order(pixels, palette: Palette) -> np.ndarray:
    """Bottom-to-top ordering of layer indices 1..K by assigned pixel count.

    Each pixel votes for its nearest palette color; the layer with the most
    pixels goes to the bottom and the one with the fewest ends up topmost.
    The background is not reordered. Ties keep the original relative order.
    """
    K = palette.K
    labels = assign_pixels(pixels, palette)
    counts = np.bincount(labels, minlength=K + 1)[1:]
    order = sorted(range(1, K + 1), key=lambda i: (-counts[i - 1], i))
    return np.asarray(order, dtype=np.int64)


def apply_order(palette: Palette, order) -> Palette:
    """Reorder layers 1..K to the given bottom-to-top permutation."""
    order = np.asarray(order, dtype=np.int64)
    K = palette.K
    if sorted(order.tolist()) != list(range(1, K + 1)):
        raise ValueError(f"order must be a permutation of 1..{K}")
    idx = np.concatenate([[0], order])
    return Palette(palette.colors[idx], palette.learnable[idx])
