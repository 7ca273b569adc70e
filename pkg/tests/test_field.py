"""Grid allocation, interpolation, and resampling."""

import numpy as np
import pytest
import torch

from palettefield import field as gridfield
from palettefield.errors import InvalidK, OutOfBounds


def make_field(resolution=(4, 4, 4), K=2, seed=1, aabb=((-1, -1, -1), (1, 1, 1))):
    return gridfield.allocate3d(resolution, K=K, seed=seed, aabb=aabb)


class TestAllocate:
    def test_deterministic(self):
        a = make_field(seed=1)
        b = make_field(seed=1)
        assert torch.equal(a.density_logits, b.density_logits)
        assert torch.equal(a.opacity_logits, b.opacity_logits)
        c = make_field(seed=2)
        assert not torch.equal(a.density_logits, c.density_logits)

    def test_noise_centered_on_init(self):
        f = gridfield.allocate3d((8, 8, 8), K=3, init_density=0.5, init_logit=-2.0)
        assert abs(f.density_logits.mean().item() - 0.5) < 1e-2
        assert abs(f.opacity_logits.mean().item() + 2.0) < 1e-2

    def test_k_zero_rejected(self):
        with pytest.raises(InvalidK):
            gridfield.allocate3d((4, 4, 4), K=0)
        with pytest.raises(InvalidK):
            gridfield.allocate2d(4, 4, K=0)

    def test_bad_resolution(self):
        with pytest.raises(ValueError):
            gridfield.allocate3d((1, 4, 4), K=1)
        with pytest.raises(ValueError):
            gridfield.allocate2d(0, 4, K=1)

    def test_bad_aabb(self):
        with pytest.raises(ValueError):
            gridfield.allocate3d((4, 4, 4), K=1, aabb=((1, 0, 0), (1, 1, 1)))


class TestSample2D:
    def test_store_load(self):
        f = gridfield.allocate2d(4, 5, K=3, seed=0)
        got = gridfield.sample2d(f, [(2, 3)])
        assert torch.equal(got[0], f.opacity_logits[2, 3])

    def test_bounds(self):
        f = gridfield.allocate2d(4, 5, K=1)
        with pytest.raises(OutOfBounds):
            gridfield.sample2d(f, [(4, 0)])
        with pytest.raises(OutOfBounds):
            gridfield.sample2d(f, [(0, -1)])

    def test_zero_fill(self):
        f = gridfield.GridField2D(torch.zeros(3, 3, 2, dtype=torch.float64))
        assert gridfield.sample2d(f, [(1, 1)]).abs().max() == 0


class TestSample3D:
    def test_node_identity(self):
        f = make_field((4, 5, 6), K=2)
        nodes = gridfield.node_positions(f)
        density, logits = gridfield.sample(f, nodes[2, 3, 4])
        expected = torch.nn.functional.softplus(f.density_logits[2, 3, 4])
        assert torch.allclose(density, expected, atol=1e-12)
        assert torch.allclose(logits, f.opacity_logits[2, 3, 4], atol=1e-12)

    def test_midpoint_is_mean(self):
        f = make_field((4, 4, 4), K=2)
        nodes = gridfield.node_positions(f)
        mid = (nodes[1, 2, 2] + nodes[2, 2, 2]) / 2
        _, logits = gridfield.sample(f, mid)
        expected = (f.opacity_logits[1, 2, 2] + f.opacity_logits[2, 2, 2]) / 2
        assert torch.allclose(logits, expected, atol=1e-12)
        # density activates after interpolation
        density, _ = gridfield.sample(f, mid)
        dl = (f.density_logits[1, 2, 2] + f.density_logits[2, 2, 2]) / 2
        assert torch.allclose(density, torch.nn.functional.softplus(dl), atol=1e-12)

    def test_constant_field(self):
        f = make_field((4, 4, 4), K=1)
        f.density_logits[:] = 0.25
        f.opacity_logits[:] = -1.5
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1, 1, size=(50, 3))
        density, logits = gridfield.sample(f, pts)
        assert torch.allclose(
            density, torch.nn.functional.softplus(torch.tensor(0.25, dtype=torch.float64)), atol=1e-12
        )
        assert torch.allclose(logits, torch.full_like(logits, -1.5), atol=1e-12)

    def test_continuity_across_faces(self):
        f = make_field((5, 5, 5), K=2, seed=3)
        nodes = gridfield.node_positions(f)
        x_face = nodes[2, 0, 0][0]
        rng = np.random.default_rng(1)
        for _ in range(10):
            y, z = rng.uniform(-1, 1, size=2)
            left = gridfield.sample(f, np.array([x_face - 1e-10, y, z]))
            right = gridfield.sample(f, np.array([x_face + 1e-10, y, z]))
            assert torch.allclose(left[0], right[0], atol=1e-8)
            assert torch.allclose(left[1], right[1], atol=1e-8)

    def test_density_positive_monotone(self):
        logits = torch.linspace(-20, 20, 41, dtype=torch.float64)
        density = torch.nn.functional.softplus(logits)
        assert (density > 0).all()
        assert (density.diff() > 0).all()

    def test_gradients_are_trilinear_weights(self):
        f = make_field((3, 3, 3), K=1)
        f.opacity_logits.requires_grad_(True)
        f.density_logits.requires_grad_(True)
        p = np.array([0.37, -0.21, 0.55])
        density, logits = gridfield.sample(f, p)

        (grad_logits,) = torch.autograd.grad(
            logits.sum(), f.opacity_logits, retain_graph=True
        )
        weights = grad_logits.flatten()
        nonzero = weights[weights.abs() > 0]
        assert len(nonzero) == 8
        assert abs(weights.sum().item() - 1.0) < 1e-12
        assert (nonzero >= 0).all() and (nonzero <= 1).all()

        # the density gradient is the same weights scaled by the softplus slope
        (grad_density,) = torch.autograd.grad(density, f.density_logits)
        with torch.no_grad():
            raw = (grad_logits.squeeze(-1) * f.density_logits).sum()
        slope = torch.sigmoid(raw)
        assert torch.allclose(
            grad_density, grad_logits.squeeze(-1) * slope, atol=1e-12
        )

    def test_out_of_bounds(self):
        f = make_field()
        with pytest.raises(OutOfBounds):
            gridfield.sample(f, np.array([1.5, 0.0, 0.0]))


class TestUpsample:
    def test_identity_resolution(self):
        f = make_field((4, 4, 4), K=2)
        up = gridfield.upsample(f, (4, 4, 4))
        assert torch.equal(up.density_logits, f.density_logits)
        assert torch.equal(up.opacity_logits, f.opacity_logits)

    def test_constant_preserved(self):
        f = make_field((4, 4, 4), K=1)
        f.density_logits[:] = 0.75
        f.opacity_logits[:] = -3.0
        up = gridfield.upsample(f, (9, 9, 9))
        assert torch.allclose(up.density_logits, torch.tensor(0.75, dtype=torch.float64), atol=1e-12)
        assert torch.allclose(up.opacity_logits, torch.tensor(-3.0, dtype=torch.float64), atol=1e-12)

    def test_linear_ramp_analytic(self):
        f = make_field((4, 4, 4), K=1)
        nodes = gridfield.node_positions(f)
        ramp = 0.3 * nodes[..., 0] + 0.2 * nodes[..., 1] - 0.5 * nodes[..., 2]
        f.density_logits = torch.as_tensor(ramp)
        f.opacity_logits = torch.as_tensor(ramp[..., None].copy())
        up = gridfield.upsample(f, (8, 8, 8))
        up_nodes = gridfield.node_positions(up)
        want = (
            0.3 * up_nodes[..., 0] + 0.2 * up_nodes[..., 1] - 0.5 * up_nodes[..., 2]
        )
        np.testing.assert_allclose(up.density_logits.numpy(), want, atol=1e-9)

    def test_old_nodes_reproduced_on_embedding_lattice(self):
        f = make_field((4, 5, 6), K=2, seed=7)
        up = gridfield.upsample(f, (7, 9, 11))  # 2R - 1 per axis
        nodes = gridfield.node_positions(f)
        density, logits = gridfield.sample(up, nodes.reshape(-1, 3))
        want_density = torch.nn.functional.softplus(f.density_logits).reshape(-1)
        assert torch.allclose(density, want_density, atol=1e-6)
        assert torch.allclose(
            logits, f.opacity_logits.reshape(-1, 2), atol=1e-6
        )

    def test_shrink_rejected(self):
        f = make_field((4, 4, 4))
        with pytest.raises(ValueError):
            gridfield.upsample(f, (3, 4, 4))
