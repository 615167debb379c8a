"""Loss oracles: every numeric example is hand-computed before being asserted."""

import pytest
import torch

from gradcheck import autograd_input_gradient, fd_gradient, relative_error
from visnir.exceptions import ConfigError, NumericError, PairingError, ShapeError
from visnir.losses import (
    LossRecord,
    LossWeights,
    cycle_loss,
    lsgan_loss_discriminator,
    lsgan_loss_generator,
    pixel_consistency_loss,
    total_objective,
)


def t(*values):
    return torch.tensor(values, dtype=torch.float64)


class TestLsganDiscriminator:
    def test_exact_optimum(self):
        real = torch.ones(2, 1, 3, 3)
        fake = torch.zeros(2, 1, 3, 3)
        assert float(lsgan_loss_discriminator(real, fake)) == pytest.approx(0.0, abs=1e-6)

    def test_constant_half(self):
        # mean((0.5-1)^2) + mean(0.5^2) = 0.25 + 0.25
        real = torch.full((4, 1, 2, 2), 0.5)
        fake = torch.full((4, 1, 2, 2), 0.5)
        assert float(lsgan_loss_discriminator(real, fake)) == pytest.approx(0.5, abs=1e-6)

    def test_hand_computed(self):
        # ((0.9-1)^2 + (1.1-1)^2)/2 + (0.3^2 + (-0.1)^2)/2 = 0.01 + 0.05
        assert float(lsgan_loss_discriminator(t(0.9, 1.1), t(0.3, -0.1))) == pytest.approx(
            0.06, abs=1e-6
        )

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            lsgan_loss_discriminator(torch.zeros(2, 2), torch.zeros(3, 2))

    def test_non_finite(self):
        with pytest.raises(NumericError):
            lsgan_loss_discriminator(t(float("nan")), t(0.0))


class TestLsganGenerator:
    def test_optimum(self):
        assert float(lsgan_loss_generator(torch.ones(3, 3))) == pytest.approx(0.0)

    def test_constant_zero(self):
        assert float(lsgan_loss_generator(torch.zeros(3, 3))) == pytest.approx(1.0)

    def test_hand_computed(self):
        # ((0.2-1)^2 + (0.6-1)^2)/2 = (0.64 + 0.16)/2
        assert float(lsgan_loss_generator(t(0.2, 0.6))) == pytest.approx(0.4, abs=1e-6)

    def test_non_finite(self):
        with pytest.raises(NumericError):
            lsgan_loss_generator(t(float("inf")))


class TestCycleLoss:
    def test_perfect_reconstruction(self):
        x, y = torch.rand(2, 3, 4, 4), torch.rand(2, 3, 4, 4)
        assert float(cycle_loss(x, x.clone(), y, y.clone())) == pytest.approx(0.0)

    def test_constant_offset(self):
        x, y = torch.rand(2, 3, 4, 4), torch.rand(2, 3, 4, 4)
        assert float(cycle_loss(x, x + 0.5, y, y.clone())) == pytest.approx(0.5, abs=1e-6)

    def test_hand_computed(self):
        # per-pixel diffs {0.1, 0.3, 0.0, 0.2} -> mean 0.15; other direction zero
        x = torch.zeros(1, 1, 2, 2, dtype=torch.float64)
        x_rec = torch.tensor([[[[0.1, 0.3], [0.0, 0.2]]]], dtype=torch.float64)
        y = torch.rand(1, 1, 2, 2, dtype=torch.float64)
        assert float(cycle_loss(x, x_rec, y, y.clone())) == pytest.approx(0.15, abs=1e-6)

    def test_direction_symmetry(self):
        x, xr = torch.rand(2, 3, 4, 4), torch.rand(2, 3, 4, 4)
        y, yr = torch.rand(2, 3, 4, 4), torch.rand(2, 3, 4, 4)
        assert float(cycle_loss(x, xr, y, yr)) == pytest.approx(
            float(cycle_loss(y, yr, x, xr)), abs=1e-7
        )

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            cycle_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 2),
                       torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 4))


class TestPixelConsistency:
    def test_identity(self):
        fn, fv = torch.rand(2, 3, 4, 4), torch.rand(2, 3, 4, 4)
        assert float(pixel_consistency_loss(fn, fn.clone(), fv, fv.clone())) == 0.0

    def test_constant_offsets(self):
        fn, fv = torch.rand(2, 3, 4, 4), torch.rand(2, 3, 4, 4)
        got = pixel_consistency_loss(fn, fn - 0.2, fv, fv + 0.2)
        assert float(got) == pytest.approx(0.4, abs=1e-6)

    def test_hand_computed(self):
        # one direction diffs {0.4, 0.0} -> 0.2; other {0.1, 0.1} -> 0.1
        fake_nir = t(0.4, 0.0)
        paired_nir = t(0.0, 0.0)
        fake_vis = t(0.1, -0.1)
        paired_vis = t(0.0, 0.0)
        got = pixel_consistency_loss(fake_nir, paired_nir, fake_vis, paired_vis)
        assert float(got) == pytest.approx(0.3, abs=1e-6)

    def test_unpaired_batch(self):
        fn = torch.rand(2, 3, 4, 4)
        with pytest.raises(PairingError):
            pixel_consistency_loss(fn, None, fn, None)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            pixel_consistency_loss(torch.zeros(2, 3, 4, 4), torch.zeros(2, 3, 2, 4),
                                   torch.zeros(2, 3, 4, 4), torch.zeros(2, 3, 4, 4))

    def test_direction_symmetry(self):
        a, ap = torch.rand(2, 3, 4, 4), torch.rand(2, 3, 4, 4)
        b, bp = torch.rand(2, 3, 4, 4), torch.rand(2, 3, 4, 4)
        assert float(pixel_consistency_loss(a, ap, b, bp)) == pytest.approx(
            float(pixel_consistency_loss(b, bp, a, ap)), abs=1e-7
        )


class TestTotalObjective:
    def test_paper_weights(self):
        # 0.5 + 0.5 + 1*2.0 + 10*0.3 = 6.0
        w = LossWeights(lambda_cyc=1.0, gamma_pc=10.0)
        assert total_objective(0.5, 0.5, 2.0, 0.3, w) == pytest.approx(6.0, abs=1e-9)

    def test_zero_components(self):
        assert total_objective(0.0, 0.0, 0.0, 0.0, LossWeights()) == 0.0

    def test_gamma_zero_matches_cycle_objective(self):
        w0 = LossWeights(lambda_cyc=1.0, gamma_pc=0.0)
        w1 = LossWeights(lambda_cyc=1.0, gamma_pc=10.0)
        base = total_objective(0.4, 0.3, 1.5, 0.0, w1)
        assert total_objective(0.4, 0.3, 1.5, 0.7, w0) == pytest.approx(
            base, abs=1e-9
        )

    def test_pc_homogeneity(self):
        w = LossWeights(lambda_cyc=1.0, gamma_pc=10.0)
        base = total_objective(0.2, 0.1, 0.5, 0.0, w)
        for c in (0.0, 1.0, 2.0):
            got = total_objective(0.2, 0.1, 0.5, c * 0.3, w)
            assert got - base == pytest.approx(w.gamma_pc * c * 0.3, abs=1e-9)

    def test_negative_weights_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(lambda_cyc=-1.0)
        with pytest.raises(ConfigError):
            LossWeights(gamma_pc=-0.5)

    def test_non_finite_component(self):
        with pytest.raises(NumericError):
            total_objective(float("nan"), 0.0, 0.0, 0.0, LossWeights())


class TestNonnegativityAndGradients:
    def test_all_losses_nonnegative(self):
        gen = torch.Generator().manual_seed(0)
        for _ in range(50):
            a = torch.randn(2, 1, 4, 4, generator=gen)
            b = torch.randn(2, 1, 4, 4, generator=gen)
            c = torch.randn(2, 1, 4, 4, generator=gen)
            d = torch.randn(2, 1, 4, 4, generator=gen)
            assert float(lsgan_loss_discriminator(a, b)) >= 0
            assert float(lsgan_loss_generator(a)) >= 0
            assert float(cycle_loss(a, b, c, d)) >= 0
            assert float(pixel_consistency_loss(a, b, c, d)) >= 0

    @pytest.mark.parametrize("seed", [0, 1])
    def test_fd_gradients_match(self, seed):
        gen = torch.Generator().manual_seed(seed)

        def rand():
            return torch.randn(1, 1, 4, 4, generator=gen, dtype=torch.float64)

        a, b, c, d = rand(), rand(), rand(), rand()
        cases = [
            (lambda x: lsgan_loss_discriminator(x, b), a),
            (lambda x: lsgan_loss_discriminator(a, x), b),
            (lambda x: lsgan_loss_generator(x), a),
            (lambda x: cycle_loss(a, x, c, d), b),
            (lambda x: cycle_loss(x, b, c, d), a),
            (lambda x: pixel_consistency_loss(x, b, c, d), a),
            (lambda x: pixel_consistency_loss(a, b, x, d), c),
        ]
        for fn, wrt in cases:
            analytic = autograd_input_gradient(fn, wrt)
            numeric = fd_gradient(fn, wrt)
            assert relative_error(analytic, numeric) < 1e-3


def test_loss_record_roundtrip():
    rec = LossRecord(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 6.8, step=3, wall_time=12.5)
    back = LossRecord.from_json_line(rec.to_json_line())
    assert back == rec
    assert back.total == pytest.approx(
        back.adv_g + back.adv_f + 1.0 * back.cyc + 10.0 * back.pc, abs=1e-9
    )
