"""Losses, subgradients, population objectives, and lower bounds."""

import numpy as np
import pytest
from scipy.integrate import quad

from reluflow.data import Dataset, make_fr_teacher, sample_dataset
from reluflow.loss import (
    EXPONENTIAL,
    LOGISTIC,
    LossKind,
    SubgradientPolicy,
    empirical_loss,
    fixed_sign_piece_bound,
    fixed_sign_piece_integral,
    loss_gradient,
    margins,
    population_loss,
    rescaled_direction,
    sliding_sigma,
    thm4_bound,
    width_lower_bound,
)
from reluflow.net import Params, evaluate


def random_params(rng, k):
    return Params(rng.normal(size=k), rng.normal(size=k), rng.normal(size=k))


def random_dataset(rng, n):
    xs = np.sort(rng.normal(size=n))
    ys = rng.choice([-1, 1], size=n)
    return Dataset(xs, ys)


class TestLossKind:
    def test_values_oracle(self):
        q = np.array([-2.0, 0.0, 3.0])
        assert np.allclose(EXPONENTIAL.value(q), np.exp(-q))
        assert np.allclose(LOGISTIC.value(q), np.log1p(np.exp(-q)))

    def test_derivative_oracle(self):
        for kind in (EXPONENTIAL, LOGISTIC):
            for q in (-3.0, 0.0, 0.7, 5.0):
                h = 1e-6
                fd = (kind.value(q + h) - kind.value(q - h)) / (2 * h)
                assert float(kind.dvalue(q)) == pytest.approx(fd, rel=1e-6)
                assert float(kind.dvalue(q)) < 0  # strictly decreasing

    def test_stability_extreme_margins(self):
        # no overflow warnings, finite values
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            assert EXPONENTIAL.value(-1e6) < np.inf
            assert LOGISTIC.value(-1e6) == pytest.approx(1e6)
            assert LOGISTIC.value(1e6) == 0.0
            assert LOGISTIC.dvalue(1e6) == 0.0

    def test_at_zero(self):
        assert EXPONENTIAL.at_zero() == 1.0
        assert LOGISTIC.at_zero() == pytest.approx(np.log(2.0))

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            LossKind("hinge")


class TestPolicy:
    def test_range_enforced(self):
        with pytest.raises(ValueError):
            SubgradientPolicy(1.5)
        SubgradientPolicy(0.0)
        SubgradientPolicy(1.0)


class TestEmpiricalLoss:
    def test_average_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = random_params(rng, int(rng.integers(1, 6)))
            d = random_dataset(rng, int(rng.integers(2, 10)))
            direct = np.mean(np.exp(-d.ys * evaluate(p, d.xs)))
            assert empirical_loss(p, d, EXPONENTIAL) == pytest.approx(direct, rel=1e-12)

    def test_two_point_init_below_half(self, two_point_dataset, two_point_init):
        # N == 1 on both points: loss = l(1) < 1/2 for both losses
        for kind in (EXPONENTIAL, LOGISTIC):
            L = empirical_loss(two_point_init, two_point_dataset, kind)
            assert L == pytest.approx(float(kind.value(1.0)))
            assert L < 0.5


class TestLossGradient:
    def test_finite_difference_off_kink(self):
        rng = np.random.default_rng(1)
        checked = 0
        while checked < 60:
            p = random_params(rng, int(rng.integers(1, 6)))
            d = random_dataset(rng, int(rng.integers(2, 8)))
            pre = np.multiply.outer(d.xs, p.w) + p.b
            if np.min(np.abs(pre)) < 1e-3:
                continue  # keep away from kinks so L is differentiable
            kind = EXPONENTIAL if checked % 2 else LOGISTIC
            g = loss_gradient(p, d, kind).vector()
            th = p.vector()
            h = 1e-6
            for idx in rng.choice(len(th), size=3, replace=False):
                e = np.zeros_like(th)
                e[idx] = h
                fd = (
                    empirical_loss(Params.from_vector(th + e), d, kind)
                    - empirical_loss(Params.from_vector(th - e), d, kind)
                ) / (2 * h)
                assert g[idx] == pytest.approx(fd, rel=1e-4, abs=1e-8)
            checked += 1

    def test_frozen_second_neuron_at_init(self, two_point_dataset, two_point_init):
        g = loss_gradient(two_point_init, two_point_dataset)
        # (w2, b2, v2) gradient identically zero (neuron inactive, sigma'(0)=0)
        assert g.w[1] == 0.0 and g.b[1] == 0.0 and g.v[1] == 0.0
        # dL/dw1 = 0 by the +-4 symmetry of the data
        assert g.w[0] == pytest.approx(0.0, abs=1e-15)
        # b1 and v1 see equal negative pull
        assert g.b[0] == pytest.approx(g.v[0])
        assert g.b[0] < 0

    def test_kink_policy_changes_selection(self):
        # preactivation exactly zero at the data point: sigma'(0) matters
        p = Params(np.array([1.0]), np.array([0.0]), np.array([1.0]))
        d = Dataset(np.array([0.0]), np.array([1]))
        g0 = loss_gradient(p, d, EXPONENTIAL, SubgradientPolicy(0.0))
        g1 = loss_gradient(p, d, EXPONENTIAL, SubgradientPolicy(1.0))
        assert g0.b[0] == 0.0
        assert g1.b[0] != 0.0


class TestRescaledDirection:
    def test_matches_gradient_over_loss(self):
        rng = np.random.default_rng(2)
        for kind in (EXPONENTIAL, LOGISTIC):
            for _ in range(10):
                p = random_params(rng, 4)
                d = random_dataset(rng, 6)
                direction, L, gn = rescaled_direction(p, d, kind)
                g = loss_gradient(p, d, kind).vector()
                Ld = empirical_loss(p, d, kind)
                assert L == pytest.approx(Ld, rel=1e-12)
                assert np.allclose(direction, -g / L, rtol=1e-9, atol=1e-12)
                assert gn == pytest.approx(np.linalg.norm(g), rel=1e-9)

    def test_finite_past_underflow(self):
        # margins ~ 1e4: every per-example exp loss underflows to 0, but the
        # softmax-form direction stays finite and nonzero
        p = Params(np.array([1.0, -1.0]), np.array([0.0, 0.0]), np.array([100.0, 100.0]))
        d = Dataset(np.array([-100.0, 100.0]), np.array([1, 1]))
        assert empirical_loss(p, d) == 0.0
        direction, L, gn = rescaled_direction(p, d)
        assert np.all(np.isfinite(direction))
        assert np.linalg.norm(direction) > 0


class TestSlidingSigma:
    def test_off_band_is_indicator(self):
        rng = np.random.default_rng(3)
        p = random_params(rng, 4)
        xs = rng.normal(size=6)
        pre = np.multiply.outer(xs, p.w) + p.b
        coef = rng.normal(size=6)
        sig = sliding_sigma(pre, p.w, p.b, xs, coef)
        assert np.array_equal(sig, (pre > 0).astype(float))

    def test_band_zeroes_normal_velocity(self):
        # place data point x0 exactly on neuron 0's boundary; the selected
        # sigma' must cancel the boundary-normal velocity x0*dw + db when a
        # cancellation inside [0,1] exists
        w = np.array([1.0, 2.0])
        b = np.array([-0.5, 1.0])
        v = np.array([1.0, -1.0])
        xs = np.array([-1.0, 0.5, 1.5])  # x=0.5 sits on -b0/w0
        pre = np.multiply.outer(xs, w) + b
        coef = np.array([0.3, -0.8, 0.4])
        sig = sliding_sigma(pre, w, b, xs, coef)
        # velocity components of neuron 0: dw = v0 * sum coef_i sig_i0 x_i
        dw = np.sum(coef * sig[:, 0] * xs)
        db = np.sum(coef * sig[:, 0])
        assert 0.5 * dw + db == pytest.approx(0.0, abs=1e-12)
        assert 0.0 <= sig[1, 0] <= 1.0


class TestPopulationLoss:
    def test_quadrature_oracle_uniform(self):
        rng = np.random.default_rng(4)
        spec = make_fr_teacher(2)
        for kind in (EXPONENTIAL, LOGISTIC):
            p = random_params(rng, 3)
            def integrand(x):
                s = 1 if evaluate(spec.teacher, x) > 0 else -1
                return float(kind.value(float(evaluate(p, x)) * s)) / 2.0

            # split at the teacher's sign discontinuities for the oracle
            edges = [-1.0, *spec.sign_change_points(), 1.0]
            direct = sum(
                quad(integrand, a, b, limit=400)[0] for a, b in zip(edges[:-1], edges[1:])
            )
            assert population_loss(p, spec, kind) == pytest.approx(direct, rel=1e-6)

    def test_zero_network_value(self):
        spec = make_fr_teacher(1)
        p = Params(np.array([0.0]), np.array([0.0]), np.array([0.0]))
        for kind in (EXPONENTIAL, LOGISTIC):
            assert population_loss(p, spec, kind) == pytest.approx(kind.at_zero(), rel=1e-9)


class TestFixedSignPieces:
    def test_bound_formula(self):
        assert fixed_sign_piece_bound(-1.0, 1.0, 1) == pytest.approx(0.5 * (2 - 1.0))
        assert fixed_sign_piece_bound(-1.0, 1.0, 3, LOGISTIC) == pytest.approx(
            0.5 * np.log(2.0) * (2 - 0.5)
        )

    def test_integral_respects_bound_randomized(self):
        # networks of one fixed sign over the whole support: the unweighted
        # integral of l(|N| s f_r) over [-1, 1] dominates the closed-form floor
        rng = np.random.default_rng(5)
        spec = make_fr_teacher(2)
        bound = fixed_sign_piece_bound(-1.0, 1.0, 2)
        for _ in range(25):
            p = random_params(rng, 3)
            for s_net in (-1, 1):
                val = fixed_sign_piece_integral(p, s_net, -1.0, 1.0, spec)
                assert val >= bound - 1e-9


class TestWidthBounds:
    def test_width_lower_bound(self):
        assert width_lower_bound(0, 4) == 0.25
        assert width_lower_bound(2, 4) == 0.125
        assert width_lower_bound(4, 4) == 0.0

    def test_thm4_bound(self):
        assert thm4_bound(1.0) == pytest.approx(1.0 / 16.0)
        assert thm4_bound(0.0) == 0.25
