"""Gradient-flow integration: invariances on the two-point fixture,
monotonicity, event handling, and diagnostics."""

import numpy as np
import pytest

from reluflow.data import Dataset, make_fr_teacher, sample_dataset
from reluflow.flow import (
    FlowConfig,
    direction_of,
    integrate,
    pl_diagnostic,
    trajectory_length,
)
from reluflow.init import InitConfig, sample_init
from reluflow.loss import EXPONENTIAL, LOGISTIC, empirical_loss
from reluflow.net import Params


@pytest.fixture(scope="module")
def two_point_run():
    d = Dataset(np.array([-4.0, 4.0]), np.array([1, 1]))
    p0 = Params(np.array([0.0, 0.0]), np.array([1.0, 0.0]), np.array([1.0, 0.0]))
    tr = integrate(p0, d, cfg=FlowConfig(rel_tol=1e-9, abs_tol=1e-12, max_steps=4000))
    return d, tr


class TestTwoPointFixture:
    def test_second_neuron_frozen(self, two_point_run):
        _, tr = two_point_run
        for _, p in tr.snapshots:
            assert abs(p.w[1]) <= 1e-12
            assert abs(p.b[1]) <= 1e-12
            assert abs(p.v[1]) <= 1e-12

    def test_w1_stays_zero_b1_equals_v1_increasing(self, two_point_run):
        _, tr = two_point_run
        alphas = []
        for _, p in tr.snapshots:
            assert abs(p.w[0]) <= 1e-10
            assert p.b[0] == pytest.approx(p.v[0], rel=1e-9, abs=1e-12)
            alphas.append(p.b[0])
        assert alphas[0] == pytest.approx(1.0)
        assert all(a2 >= a1 - 1e-12 for a1, a2 in zip(alphas, alphas[1:]))
        assert alphas[-1] > 1.0

    def test_direction_limit(self, two_point_run):
        _, tr = two_point_run
        v, _ = direction_of(tr)
        target = np.zeros(6)
        target[2] = target[4] = 1.0 / np.sqrt(2.0)  # (w1,w2,b1,b2,v1,v2)
        angle = np.arccos(np.clip(v @ target, -1, 1))
        assert angle <= 1e-3

    def test_loss_monotone(self, two_point_run):
        _, tr = two_point_run
        assert np.all(np.diff(tr.loss) <= 1e-12)

    def test_margin_normalization_trend(self, two_point_run):
        # normalized margin q/||theta||^2 approaches the max-margin value
        # of this KKT direction: at theta = (0,0,a,0,a,0), q = a^2, norm^2 =
        # 2 a^2, so the limit is 1/2
        _, tr = two_point_run
        assert tr.normalized_margin[-1] == pytest.approx(0.5, abs=1e-6)


class TestIntegratorAgreement:
    def test_fixed_step_converges_to_adaptive(self):
        # near kink crossings the trajectory is only piecewise smooth, so
        # fixed-step error is first order in h; it must shrink with h toward
        # the tightly-controlled adaptive answer
        d = Dataset(np.array([-1.0, 0.2, 1.5]), np.array([1, -1, 1]))
        p0 = sample_init(InitConfig(0.7, 0.7, 5, seed=2))
        horizon = 3.0
        base = dict(rescale_time=False, max_time=horizon, loss_floor=-1.0, max_steps=200_000)
        tr_a = integrate(p0, d, cfg=FlowConfig(rel_tol=1e-10, abs_tol=1e-13, **base))
        pa = tr_a.final_params.vector()
        errs = []
        for h in (4e-3, 5e-4):
            tr_f = integrate(p0, d, cfg=FlowConfig(integrator="fixed-RK4", fixed_step=h, **base))
            errs.append(np.linalg.norm(tr_f.final_params.vector() - pa))
        assert errs[0] <= 0.05 * (1 + np.linalg.norm(pa))
        assert errs[1] <= 0.3 * errs[0]

    def test_rescaled_time_same_trajectory(self):
        # d theta/ds = -grad L / L follows the same path; compare the loss
        # at equal true time t using dense fixed-step output on both
        d = Dataset(np.array([-1.0, 0.2, 1.5]), np.array([1, -1, 1]))
        p0 = sample_init(InitConfig(0.7, 0.7, 5, seed=2))
        horizon = 2.0
        base = dict(integrator="fixed-RK4", fixed_step=5e-4, max_time=horizon,
                    loss_floor=-1.0, max_steps=200_000)
        tr_t = integrate(p0, d, cfg=FlowConfig(rescale_time=False, **base))
        tr_s = integrate(p0, d, cfg=FlowConfig(rescale_time=True, **base))
        t_probe = 1.5
        Lt = float(np.interp(t_probe, tr_t.times, tr_t.loss))
        Ls = float(np.interp(t_probe, tr_s.times, tr_s.loss))
        assert Ls == pytest.approx(Lt, rel=1e-4)


class TestRobustness:
    @pytest.mark.parametrize("kind", [EXPONENTIAL, LOGISTIC])
    def test_loss_monotone_random_runs(self, kind):
        spec = make_fr_teacher(1)
        for seed in range(3):
            d = sample_dataset(spec, "uniform", 12, seed=seed)
            p0 = sample_init(InitConfig(0.5, 0.5, 6, seed=seed))
            tr = integrate(p0, d, kind=kind, cfg=FlowConfig(max_steps=1500))
            assert np.all(np.diff(tr.loss) <= 1e-9 * np.maximum(tr.loss[:-1], 1e-30))

    def test_loss_floor_stop(self):
        # both points separable by the single active neuron: loss -> 0
        d = Dataset(np.array([0.5, 1.0]), np.array([1, 1]))
        p0 = Params(np.array([1.0]), np.array([0.0]), np.array([1.0]))
        tr = integrate(p0, d, cfg=FlowConfig(loss_floor=1e-3, max_steps=50_000))
        assert tr.stop_reason == "loss_floor"
        assert tr.loss[-1] <= 1e-3

    def test_events_recorded_on_kink_crossing(self):
        # the active point at x=1 pulls (w, b) up, so the breakpoint 0.5/w
        # sweeps left across the initially inactive point at x=0.4
        d = Dataset(np.array([0.4, 1.0]), np.array([1, 1]))
        p0 = Params(np.array([1.0]), np.array([-0.5]), np.array([1.0]))
        tr = integrate(p0, d, cfg=FlowConfig(max_steps=3000, sliding_mode=False, loss_floor=1e-4))
        kinds = {k for k, _ in tr.events}
        assert "kink-crossing" in kinds

    def test_rejects_nonfinite_params(self):
        with pytest.raises(ValueError):
            Params(np.array([np.nan]), np.array([0.0]), np.array([1.0]))

    def test_unknown_integrator(self):
        d = Dataset(np.array([-1.0, 1.0]), np.array([-1, 1]))
        p0 = Params(np.array([1.0]), np.array([0.0]), np.array([1.0]))
        with pytest.raises(ValueError):
            integrate(p0, d, cfg=FlowConfig(integrator="euler"))


class TestChannelsAndDiagnostics:
    def test_summary_and_serialization(self, two_point_run):
        _, tr = two_point_run
        s = tr.summary()
        assert s["steps"] == len(tr.times)
        assert s["loss_final"] == pytest.approx(tr.loss[-1])
        lines = tr.to_jsonl().strip().splitlines()
        assert len(lines) == len(tr.times)
        csv = tr.to_csv().splitlines()
        assert csv[0] == "t,loss,min_margin,theta_norm"
        assert len(csv) == len(tr.times) + 1

    def test_pl_diagnostic_positive_above_floor(self, two_point_run):
        d, tr = two_point_run
        ratios, lam = pl_diagnostic(tr, d)
        assert lam > 0
        assert len(ratios) == len(tr.times)

    def test_trajectory_length_consistency(self, two_point_run):
        _, tr = two_point_run
        total, max_disp = trajectory_length(tr)
        p0, p1 = tr.initial_params, tr.final_params
        chord = np.linalg.norm(p1.vector() - p0.vector())
        assert total >= chord - 1e-9
        assert max_disp >= 0

    def test_loss_threshold_events(self):
        d = Dataset(np.array([-1.0, 1.0]), np.array([-1, 1]))
        # start with small output weights so the initial loss exceeds 1/n
        p0 = Params(np.array([1.0, -1.0]), np.array([0.1, 0.1]), np.array([0.1, -0.1]))
        tr = integrate(p0, d, cfg=FlowConfig(max_steps=20_000, loss_floor=1e-4))
        kinds = [k for k, _ in tr.events]
        assert "loss<1/n" in kinds and "loss<1/(2n)" in kinds
