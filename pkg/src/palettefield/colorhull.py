"""Convex hull of observed pixel colors in RGB space.

The hull is the feasible region for palette colors: colors outside it are
pulled back onto the nearest facet, colors inside are pulled toward the
nearest hull vertex. Colors are plain (r, g, b) triples in [0, 1]; any
array-like of shape (n, 3) is accepted where a point list is expected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull as _QHull
from scipy.spatial import QhullError

from .errors import DegenerateInput, InteriorPoint, InvalidK

# Tolerance for "on the hull" in signed-distance tests.
EPS_HULL = 1e-9

# Below this distance a palette color counts as sitting exactly on its
# nearest hull element and gets a zero subgradient.
_ZERO_DIST = 1e-12


@dataclass(frozen=True)
class ConvexHull3:
    """Triangulated convex hull in RGB space.

    vertices: (V, 3) hull vertex colors, each one of the input points.
    facets:   (F, 3) vertex-index triples.
    normals:  (F, 3) outward unit normals.
    offsets:  (F,) plane offsets d with n . x = d on the plane and
              n . x <= d + EPS_HULL for points inside.
    source_count: number of input points the hull was built from.
    """

    vertices: np.ndarray
    facets: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray
    source_count: int

    @property
    def volume(self) -> float:
        return _hull_volume(self.vertices)


def _hull_volume(vertices: np.ndarray) -> float:
    return float(_QHull(vertices).volume)


def dedup_colors(points) -> np.ndarray:
    """Remove exact duplicate rows, preserving nothing about order."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return np.unique(pts, axis=0)


def quantize_colors(points, levels: int = 255) -> np.ndarray:
    """Snap colors to an 8-bit grid and deduplicate."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return dedup_colors(np.round(pts * levels) / levels)


def prepare_hull_points(points, max_points: int = 100_000, seed: int = 0) -> np.ndarray:
    """Deduplicate at 8-bit quantization and subsample to at most max_points.

    Interior points never affect the hull, so uniform subsampling of a large
    pixel set is safe in practice.
    """
    pts = quantize_colors(points)
    if len(pts) > max_points:
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(pts), size=max_points, replace=False)
        pts = pts[np.sort(idx)]
    return pts


def build_hull(points) -> ConvexHull3:
    """Build the convex hull of a set of RGB points.

    Raises DegenerateInput when fewer than 4 distinct points remain or the
    points do not span 3 dimensions. No jitter is applied here; callers that
    want to rescue flat inputs must jitter and retry themselves.
    """
    raw = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(raw)):
        raise DegenerateInput("input colors contain non-finite values")
    pts = dedup_colors(raw)
    if len(pts) < 4:
        raise DegenerateInput(f"need >= 4 distinct points, got {len(pts)}")
    if np.linalg.matrix_rank(pts - pts.mean(axis=0), tol=1e-10) < 3:
        raise DegenerateInput("points are coplanar or collinear")
    try:
        qh = _QHull(pts)
    except QhullError as exc:
        raise DegenerateInput(f"qhull rejected the input: {exc}") from exc

    vert_idx = np.sort(qh.vertices)
    remap = np.full(len(pts), -1, dtype=np.int64)
    remap[vert_idx] = np.arange(len(vert_idx))
    facets = remap[qh.simplices]
    normals = qh.equations[:, :3].copy()
    # qhull: n . x + b <= 0 inside, so the plane is n . x = -b.
    offsets = -qh.equations[:, 3].copy()
    return ConvexHull3(
        vertices=pts[vert_idx],
        facets=facets,
        normals=normals,
        offsets=offsets,
        source_count=len(raw),
    )


def signed_distances(hull: ConvexHull3, points) -> np.ndarray:
    """Signed distance of each point to each facet plane, (n, F)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return pts @ hull.normals.T - hull.offsets


def contains(hull: ConvexHull3, point) -> bool:
    """True iff the point is inside or on the hull (within EPS_HULL)."""
    return bool(signed_distances(hull, point).max() <= EPS_HULL)


def contains_many(hull: ConvexHull3, points) -> np.ndarray:
    return signed_distances(hull, points).max(axis=1) <= EPS_HULL


def _closest_on_triangles(a, b, c, p):
    """Closest point to p on each triangle (a[i], b[i], c[i]).

    Vectorized region walk over all triangles at once; the per-triangle
    branch structure follows the classic closest-point-on-triangle test.
    """
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = (ab * ap).sum(axis=1)
    d2 = (ac * ap).sum(axis=1)

    bp = p - b
    d3 = (ab * bp).sum(axis=1)
    d4 = (ac * bp).sum(axis=1)

    cp = p - c
    d5 = (ab * cp).sum(axis=1)
    d6 = (ac * cp).sum(axis=1)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        w_ac = d2 / (d2 - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom

    v_ab = np.nan_to_num(v_ab)[:, None]
    w_ac = np.nan_to_num(w_ac)[:, None]
    w_bc = np.nan_to_num(w_bc)[:, None]
    v_in = np.nan_to_num(v_in)[:, None]
    w_in = np.nan_to_num(w_in)[:, None]

    result = a + ab * v_in + ac * w_in  # interior fallback
    decided = np.zeros(len(a), dtype=bool)

    def claim(mask, value):
        take = mask & ~decided
        result[take] = value[take]
        decided[take] = True

    claim((d1 <= 0) & (d2 <= 0), a)
    claim((d3 >= 0) & (d4 <= d3), b)
    claim((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v_ab * ab)
    claim((d6 >= 0) & (d5 <= d6), c)
    claim((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w_ac * ac)
    claim((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + w_bc * (c - b))
    return result


def distance_to_hull(hull: ConvexHull3, point) -> tuple[float, np.ndarray]:
    """Distance from an exterior point to the hull surface and the nearest
    surface point (on a facet interior, edge, or vertex)."""
    p = np.asarray(point, dtype=np.float64).reshape(3)
    if contains(hull, p):
        raise InteriorPoint(
            "point is inside the hull; use nearest_vertex_distance instead"
        )
    tris = hull.vertices[hull.facets]  # (F, 3, 3)
    candidates = _closest_on_triangles(tris[:, 0], tris[:, 1], tris[:, 2], p)
    dists = np.linalg.norm(candidates - p, axis=1)
    best = int(np.argmin(dists))
    return float(dists[best]), candidates[best]


def nearest_vertex_distance(hull: ConvexHull3, point) -> tuple[float, int]:
    """Distance to the nearest hull vertex; ties resolve to the lowest index."""
    p = np.asarray(point, dtype=np.float64).reshape(3)
    dists = np.linalg.norm(hull.vertices - p, axis=1)
    idx = int(np.argmin(dists))
    return float(dists[idx]), idx


def hull_loss(
    hull: ConvexHull3,
    palette,
    delta_in: float = 0.1,
    delta_out: float = 1e2,
) -> tuple[float, np.ndarray]:
    """Feasibility penalty for palette colors and its subgradient.

    Each color contributes delta * distance-to-nearest-element, where the
    nearest element is the closest hull vertex for interior colors and the
    closest facet point for exterior colors. The subgradient treats the
    nearest element as fixed: delta * (c - p) / |c - p|, and is zero for
    colors exactly at distance zero. The arg-min element is recomputed on
    every call, so min-switching is handled by the caller simply calling
    again.
    """
    colors = np.asarray(getattr(palette, "colors", palette), dtype=np.float64)
    colors = colors.reshape(-1, 3)
    total = 0.0
    grad = np.zeros_like(colors)
    for i, color in enumerate(colors):
        if contains(hull, color):
            dist, vidx = nearest_vertex_distance(hull, color)
            delta = delta_in
            nearest = hull.vertices[vidx]
        else:
            dist, nearest = distance_to_hull(hull, color)
            delta = delta_out
        total += delta * dist
        if dist > _ZERO_DIST:
            grad[i] = delta * (color - nearest) / dist
    return total, grad


def simplify_to_palette(hull: ConvexHull3, k: int) -> np.ndarray:
    """Reduce the hull to k representative colors by greedy vertex removal.

    Repeatedly drops the vertex whose removal changes the enclosed volume the
    least, re-hulling after each removal, until k vertices remain. Produces a
    palette initialization, not a tight enclosure of the inputs.
    """
    n = len(hull.vertices)
    if k < 4 or k > n:
        raise InvalidK(f"k must be in [4, {n}], got {k}")
    vertices = hull.vertices.copy()
    volume = _hull_volume(vertices)
    while len(vertices) > k:
        best_loss = np.inf
        best = None
        for i in range(len(vertices)):
            candidate = np.delete(vertices, i, axis=0)
            try:
                cand_hull = _QHull(candidate)
            except QhullError:
                continue  # removal would flatten the hull
            loss = volume - cand_hull.volume
            if loss < best_loss:
                best_loss = loss
                best = candidate[np.sort(cand_hull.vertices)]
                best_volume = cand_hull.volume
        if best is None:
            raise DegenerateInput("cannot simplify further without flattening")
        vertices = best
        volume = best_volume
    return np.clip(vertices, 0.0, 1.0)


def to_obj(hull: ConvexHull3) -> str:
    """Serialize as an OBJ-compatible text: `v r g b` and 1-based `f i j k`."""
    lines = [f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}" for v in hull.vertices]
    lines += [f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}" for f in hull.facets]
    return "\n".join(lines) + "\n"


def edge_count(hull: ConvexHull3) -> int:
    edges = set()
    for i, j, k in hull.facets:
        edges.update({frozenset((int(i), int(j))), frozenset((int(j), int(k))),
                      frozenset((int(i), int(k)))})
    return len(edges)
