import math

import numpy as np
import pytest
import torch

from patchrefine.losses import (
    LossConfig,
    boundary_loss,
    branch_loss,
    bce_loss,
    focal_loss,
    pseudo_label_loss,
    squashed_laplace,
    total_loss,
)
from oracles import bce_by_loop, boundary_by_loop, central_difference, fd_well_conditioned, focal_by_loop, laplace_by_loop


def t64(a):
    return torch.as_tensor(np.asarray(a, dtype=np.float64))


def random_instance(rng, n=8):
    pred = rng.uniform(0.05, 0.95, (n, n))
    gt = rng.integers(0, 2, (n, n)).astype(float)
    pseudo = rng.integers(0, 2, (n, n)).astype(float)
    return pred, gt, pseudo


def max_relative_error(a, b, floor=1e-8):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def analytic_grad(fn, pred):
    x = t64(pred).requires_grad_(True)
    fn(x).backward()
    return x.grad.numpy()


def numeric_grad(fn, pred):
    return central_difference(lambda p: fn(t64(p)).item(), np.asarray(pred, dtype=np.float64))


class TestBCE:
    def test_perfect_prediction(self, rng):
        y = t64(rng.integers(0, 2, (4, 4)))
        assert 0 <= bce_loss(y, y).item() <= 2e-7

    def test_half(self, rng):
        assert bce_loss(t64(np.full((4, 4), 0.5)), t64(rng.integers(0, 2, (4, 4)))).item() == \
            pytest.approx(math.log(2), abs=1e-12)

    def test_matches_loop(self, rng):
        p, t = rng.random((4, 4)), rng.random((4, 4))
        assert bce_loss(t64(p), t64(t)).item() == pytest.approx(bce_by_loop(p, t), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            bce_loss(torch.zeros(2, 2), torch.zeros(3, 3))


class TestFocal:
    def test_gamma_zero_is_bce_exactly(self, rng):
        p, _, y = random_instance(rng)
        assert focal_loss(t64(p), t64(y), 0.0).item() == bce_loss(t64(p), t64(y)).item()
        assert focal_loss(t64(y), t64(y), 0.0).item() == bce_loss(t64(y), t64(y)).item()

    def test_half_all_ones(self):
        value = focal_loss(t64(np.full((4, 4), 0.5)), t64(np.ones((4, 4))), 2.0).item()
        assert value == pytest.approx(0.25 * math.log(2), abs=1e-12)

    def test_matches_loop(self, rng):
        p, y = rng.random((4, 4)), rng.integers(0, 2, (4, 4))
        assert focal_loss(t64(p), t64(y), 2.0).item() == pytest.approx(focal_by_loop(p, y, 2.0), abs=1e-12)


class TestSquashedLaplace:
    def test_impulse(self):
        impulse = np.zeros((3, 3))
        impulse[1, 1] = 1
        out = squashed_laplace(t64(impulse)).numpy()
        assert out[1, 1] == pytest.approx(abs(math.tanh(-4)), abs=1e-6)
        assert out[1, 1] == pytest.approx(0.999329, abs=1e-6)
        for r, c in [(0, 1), (1, 0), (1, 2), (2, 1)]:
            assert out[r, c] == pytest.approx(0.761594, abs=1e-6)
        for r, c in [(0, 0), (0, 2), (2, 0), (2, 2)]:
            assert out[r, c] == 0.0

    def test_constant_interior_is_zero(self):
        out = squashed_laplace(t64(np.full((6, 6), 0.7))).numpy()
        np.testing.assert_allclose(out[1:-1, 1:-1], 0.0, atol=1e-15)
        # zero padding: edges see -c, corners -2c
        assert out[0, 3] == pytest.approx(math.tanh(0.7))
        assert out[0, 0] == pytest.approx(math.tanh(1.4))

    def test_matches_loop(self, rng):
        m = rng.random((5, 5))
        np.testing.assert_allclose(
            squashed_laplace(t64(m)).numpy(), np.abs(np.tanh(laplace_by_loop(m))), atol=1e-6
        )

    def test_range_and_batching(self, rng):
        m = rng.random((3, 2, 7, 7))
        out = squashed_laplace(t64(m))
        assert out.shape == m.shape
        assert out.min() >= 0 and out.max() < math.tanh(4) + 1e-15
        np.testing.assert_allclose(out[1, 0].numpy(), squashed_laplace(t64(m[1, 0])).numpy())


class TestBoundary:
    def test_zero_maps(self):
        z = t64(np.zeros((6, 6)))
        assert 0 <= boundary_loss(z, z).item() <= 2e-7

    def test_self_entropy(self, rng):
        y = rng.integers(0, 2, (6, 6)).astype(float)
        target = np.abs(np.tanh(laplace_by_loop(y)))
        entropy = bce_by_loop(target, target)
        assert boundary_loss(t64(y), t64(y)).item() == pytest.approx(entropy, abs=1e-10)
        ones = np.ones((6, 6))
        t_ones = np.abs(np.tanh(laplace_by_loop(ones)))
        assert boundary_loss(t64(ones), t64(ones)).item() == pytest.approx(bce_by_loop(t_ones, t_ones), abs=1e-10)

    def test_matches_composed_oracle(self, rng):
        p, y = rng.random((4, 4)), rng.integers(0, 2, (4, 4))
        expected = bce_by_loop(np.abs(np.tanh(laplace_by_loop(p))), np.abs(np.tanh(laplace_by_loop(y))))
        assert boundary_loss(t64(p), t64(y)).item() == pytest.approx(expected, abs=1e-10)

    def test_floor(self, rng):
        p, y = rng.random((6, 6)), rng.integers(0, 2, (6, 6))
        assert boundary_loss(t64(p), t64(y), 0.1).item() == pytest.approx(boundary_by_loop(p, y, 0.1), abs=1e-12)
        assert boundary_loss(t64(p), t64(y), 1e-7).item() == bce_loss(squashed_laplace(t64(p)), squashed_laplace(t64(y))).item()
        # zero targets never see the floor, so the constant and self-entropy cases are unchanged
        z = t64(np.zeros((6, 6)))
        assert boundary_loss(z, z, 0.1).item() == boundary_loss(z, z).item()
        y = t64(y.astype(float))
        assert boundary_loss(y, y, 0.1).item() == pytest.approx(boundary_loss(y, y).item(), abs=1e-15)
        with pytest.raises(ValueError):
            LossConfig(boundary_floor=0.0)


class TestCombination:
    def test_alpha_extremes(self, rng):
        p, g, y = (t64(a) for a in random_instance(rng))
        assert branch_loss(p, g, y, LossConfig(alpha=0.0)).item() == pytest.approx(bce_loss(p, g).item(), abs=1e-15)
        expected = focal_loss(p, y, 2.0) + boundary_loss(p, y, LossConfig().boundary_floor)
        assert branch_loss(p, g, y, LossConfig(alpha=1.0)).item() == pytest.approx(expected.item(), abs=1e-15)

    def test_default_alpha(self, rng):
        p, g, y = (t64(a) for a in random_instance(rng))
        cfg = LossConfig()
        assert cfg.alpha == 0.7
        ps = focal_by_loop(p.numpy(), y.numpy(), 2.0) + boundary_by_loop(p.numpy(), y.numpy(), cfg.boundary_floor)
        expected = 0.7 * ps + 0.3 * bce_by_loop(p.numpy(), g.numpy())
        assert branch_loss(p, g, y, cfg).item() == pytest.approx(expected, abs=1e-12)

    def test_ablation_flags(self, rng):
        p, g, y = (t64(a) for a in random_instance(rng))
        gt_only = branch_loss(p, g, y, LossConfig(use_ps_term=False))
        assert gt_only.item() == bce_loss(p, g).item()
        ps_only = branch_loss(p, g, y, LossConfig(use_gt_term=False))
        assert ps_only.item() == pseudo_label_loss(p, y, LossConfig()).item()
        focal_only = branch_loss(p, g, y, LossConfig(use_gt_term=False, use_boundary=False))
        assert focal_only.item() == focal_loss(p, y, 2.0).item()

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LossConfig(alpha=1.5)
        with pytest.raises(ValueError):
            LossConfig(gamma=-1)
        with pytest.raises(ValueError):
            LossConfig(use_gt_term=False, use_ps_term=False)
        with pytest.raises(ValueError):
            LossConfig(use_gt_term=False, use_focal=False, use_boundary=False)

    def test_total(self, rng):
        p, g, y = (t64(a) for a in random_instance(rng))
        q = t64(rng.uniform(0.05, 0.95, (8, 8)))
        cfg = LossConfig()
        assert total_loss(p, p, g, y, cfg).item() == pytest.approx(2 * branch_loss(p, g, y, cfg).item(), abs=1e-15)
        expected = branch_loss(p, g, y, cfg).item() + branch_loss(q, g, y, cfg).item()
        assert total_loss(p, q, g, y, cfg).item() == pytest.approx(expected, abs=1e-12)
        perfect = branch_loss(g, g, g, cfg).item()
        assert total_loss(g, q, g, g, cfg).item() == pytest.approx(perfect + branch_loss(q, g, g, cfg).item(), abs=1e-12)
        assert total_loss(None, q, g, y, cfg).item() == branch_loss(q, g, y, cfg).item()
        with pytest.raises(ValueError):
            total_loss(None, None, g, y, cfg)
        with pytest.raises(ValueError):
            total_loss(p, q[:4], g, y, cfg)


LOSSES = {
    "bce": lambda p, g, y: bce_loss(p, g),
    "focal0": lambda p, g, y: focal_loss(p, y, 0.0),
    "focal2": lambda p, g, y: focal_loss(p, y, 2.0),
    "boundary": lambda p, g, y: boundary_loss(p, y),
    "boundary_floored": lambda p, g, y: boundary_loss(p, y, 0.1),
    "branch": lambda p, g, y: branch_loss(p, g, y, LossConfig()),
}


@pytest.mark.parametrize("name", sorted(LOSSES))
def test_gradients_match_finite_differences(rng, name):
    fn = LOSSES[name]
    checked = 0
    while checked < 3:
        p, g, y = random_instance(rng)
        if not all(fd_well_conditioned(p, floor) for floor in (0.1, LossConfig().boundary_floor)):
            continue
        checked += 1
        f = lambda x: fn(x, t64(g), t64(y))
        assert max_relative_error(analytic_grad(f, p), numeric_grad(f, p)) <= 1e-4


@pytest.mark.parametrize("name", sorted(LOSSES))
def test_losses_flip_invariant_and_nonnegative(rng, name):
    fn = LOSSES[name]
    p, g, y = (t64(a) for a in random_instance(rng))
    base = fn(p, g, y).item()
    assert base >= 0
    for dims in ([0], [1], [0, 1]):
        flipped = fn(*(torch.flip(a, dims) for a in (p, g, y))).item()
        assert flipped == pytest.approx(base, rel=1e-12)
