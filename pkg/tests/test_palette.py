"""Palette initialization, ordering, and edit semantics."""

import numpy as np
import pytest

from palettefield import colorhull
from palettefield.errors import IndexOutOfRange, InvalidK
from palettefield.palette import (
    Palette,
    apply_order,
    assign_pixels,
    determine_order,
    init_palette,
    parse_hex_color,
)

CUBE = np.array(
    [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1],
     [1, 1, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1]],
    dtype=np.float64,
)


@pytest.fixture(scope="module")
def cube_hull():
    return colorhull.build_hull(CUBE)


class TestPaletteType:
    def test_k_and_background(self):
        p = Palette(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float))
        assert p.K == 2
        np.testing.assert_array_equal(p.colors[0], [0, 0, 0])

    def test_requires_two_colors(self):
        with pytest.raises(InvalidK):
            Palette(np.array([[0.0, 0.0, 0.0]]))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Palette(np.array([[0, 0, 0], [np.nan, 0, 0]], float))

    def test_colors_read_only(self):
        p = Palette(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            p.colors[0, 0] = 1.0

    def test_export_clamps(self):
        p = Palette(np.array([[-0.2, 0.5, 1.2], [0.1, 0.1, 0.1]]))
        out = p.export_colors()
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_json_roundtrip(self):
        p = Palette(np.array([[0.1, 0.2, 0.3], [0.9, 0.8, 0.7]]))
        d = p.to_json_dict()
        assert d["background_index"] == 0
        q = Palette.from_json_dict(d)
        np.testing.assert_allclose(q.colors, p.colors)

    def test_hex_list(self):
        p = Palette(np.array([[0, 0, 0], [1, 0, 0]], float))
        assert p.hex_list() == ["#000000", "#FF0000"]

    def test_parse_hex(self):
        np.testing.assert_allclose(parse_hex_color("#FF0000"), [1, 0, 0])
        np.testing.assert_allclose(parse_hex_color("00ff00"), [0, 1, 0])
        with pytest.raises(ValueError):
            parse_hex_color("#f00")


class TestEditColor:
    def test_edit_background(self):
        p = Palette(np.array([[0, 0, 0], [1, 0, 0]], float))
        q = p.edit_color(0, (1, 1, 1))
        np.testing.assert_array_equal(q.colors[0], [1, 1, 1])
        np.testing.assert_array_equal(q.colors[1], [1, 0, 0])
        np.testing.assert_array_equal(p.colors[0], [0, 0, 0])  # original intact

    def test_identity_edit(self):
        p = Palette(np.array([[0, 0, 0], [1, 0, 0]], float))
        q = p.edit_color(1, (1, 0, 0))
        np.testing.assert_array_equal(q.colors, p.colors)

    def test_out_of_range(self):
        p = Palette(np.array([[0, 0, 0], [1, 0, 0]], float))
        with pytest.raises(IndexOutOfRange):
            p.edit_color(2, (1, 1, 1))
        with pytest.raises(IndexOutOfRange):
            p.edit_color(-1, (1, 1, 1))


class TestInitPalette:
    def test_user_passthrough(self):
        p = init_palette("user", None, None, K=1, colors=[(0, 0, 0), (1, 0, 0)])
        assert p.K == 1
        np.testing.assert_array_equal(p.colors[0], [0, 0, 0])

    def test_user_wrong_length(self):
        with pytest.raises(InvalidK):
            init_palette("user", None, None, K=2, colors=[(0, 0, 0), (1, 0, 0)])

    def test_kmeans_recovers_three_distinct_colors(self):
        rng = np.random.default_rng(0)
        gt = np.array([[0.1, 0.1, 0.1], [0.9, 0.1, 0.1], [0.1, 0.8, 0.2]])
        pixels = gt[rng.integers(0, 3, size=3000)]
        p = init_palette("kmeans", None, pixels, K=2, seed=1)
        got = sorted(map(tuple, np.round(p.colors, 9)))
        want = sorted(map(tuple, gt))
        np.testing.assert_allclose(got, want, atol=1e-9)

    def test_kmeans_largest_cluster_is_background(self):
        rng = np.random.default_rng(0)
        gt = np.array([[0.9, 0.9, 0.85], [0.05, 0.05, 0.05], [0.5, 0.2, 0.9]])
        # bright color dominates; it must land in the background slot
        pixels = gt[rng.choice(3, size=2000, p=[0.8, 0.1, 0.1])]
        p = init_palette("kmeans", None, pixels, K=2, seed=3)
        np.testing.assert_allclose(p.colors[0], [0.9, 0.9, 0.85], atol=1e-9)

    def test_random_in_hull_contained(self, cube_hull):
        pixels = CUBE
        for seed in range(50):
            p = init_palette("random_in_hull", cube_hull, pixels, K=4, seed=seed)
            for c in p.colors:
                assert colorhull.contains(cube_hull, c)

    def test_random_background_darkest(self, cube_hull):
        p = init_palette("random_in_hull", cube_hull, CUBE, K=2, seed=0)
        np.testing.assert_array_equal(p.colors[0], [0, 0, 0])

    def test_hull_simplify_mode(self, cube_hull):
        # most pixels sit at one corner; that corner becomes the background
        pixels = np.vstack([CUBE, np.tile([1.0, 1.0, 1.0], (40, 1))])
        p = init_palette("hull_simplify", cube_hull, pixels, K=7, seed=0)
        assert sorted(map(tuple, p.colors)) == sorted(map(tuple, CUBE))
        np.testing.assert_array_equal(p.colors[0], [1, 1, 1])

    def test_deterministic(self, cube_hull):
        rng = np.random.default_rng(9)
        pixels = rng.random((500, 3))
        for mode in ("random_in_hull", "kmeans", "hull_simplify"):
            hull = colorhull.build_hull(pixels)
            a = init_palette(mode, hull, pixels, K=3, seed=42)
            b = init_palette(mode, hull, pixels, K=3, seed=42)
            np.testing.assert_array_equal(a.colors, b.colors)

    def test_invalid_k(self, cube_hull):
        with pytest.raises(InvalidK):
            init_palette("kmeans", cube_hull, CUBE, K=0)

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            init_palette("mystery", None, CUBE, K=2)


class TestDetermineOrder:
    def make_image(self, counts):
        """Pixel list with `counts[i]` pixels exactly at layer color i+1."""
        palette = Palette(
            np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
        )
        pixels = np.concatenate(
            [np.tile(palette.colors[i + 1], (n, 1)) for i, n in enumerate(counts)]
        )
        return pixels, palette

    def test_counts_order_bottom_to_top(self):
        pixels, palette = self.make_image([100, 50, 10])
        order = determine_order(pixels, palette)
        np.testing.assert_array_equal(order, [1, 2, 3])

        pixels, palette = self.make_image([10, 100, 50])
        order = determine_order(pixels, palette)
        np.testing.assert_array_equal(order, [2, 3, 1])

    def test_tie_breaks_to_lower_index(self):
        # all pixels equidistant to layers 1 and 2, farther from background
        palette = Palette(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float))
        pixels = np.tile([0.6, 0.6, 0.0], (40, 1))
        labels = assign_pixels(pixels, palette)
        assert (labels == 1).all()
        order = determine_order(pixels, palette)
        np.testing.assert_array_equal(order, [1, 2])

    def test_single_layer_identity(self):
        palette = Palette(np.array([[0, 0, 0], [1, 0, 0]], float))
        order = determine_order(np.tile([1.0, 0, 0], (5, 1)), palette)
        np.testing.assert_array_equal(order, [1])

    def test_duplication_invariance(self):
        rng = np.random.default_rng(4)
        pixels = rng.random((300, 3))
        palette = Palette(rng.random((5, 3)))
        once = determine_order(pixels, palette)
        doubled = determine_order(np.vstack([pixels, pixels]), palette)
        np.testing.assert_array_equal(once, doubled)

    def test_apply_order(self):
        palette = Palette(
            np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
        )
        reordered = apply_order(palette, [3, 1, 2])
        np.testing.assert_array_equal(reordered.colors[0], [0, 0, 0])
        np.testing.assert_array_equal(reordered.colors[1], [0, 0, 1])
        np.testing.assert_array_equal(reordered.colors[3], [0, 1, 0])
        with pytest.raises(ValueError):
            apply_order(palette, [1, 1, 2])
