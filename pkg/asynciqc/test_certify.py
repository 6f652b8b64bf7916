import numpy as np
import pytest

from asynciqc.certify import (
    TOL_H,
    SearchSpec,
    certify_performance,
    certify_stability,
    eps_feas,
    fdi_margin_performance,
    fdi_margin_stability,
    lmi_eval,
    max_h,
    parse_range,
    sweep_performance,
    sweep_stability,
)
from asynciqc.errors import DegenerateMultiplierError, NoCertificateError, PreconditionError
from asynciqc.events import bounds_from_h_delta
from asynciqc.iqc import Multiplier, beta_eta
from asynciqc.lti import StateSpace, assemble_G, freq_response_grid, from_transfer_function
from asynciqc.systemfile import example_1, example_2


@pytest.fixture(scope="module")
def ex1():
    return example_1()


@pytest.fixture(scope="module")
def ex1_plant(ex1):
    return assemble_G(ex1.P, ex1.F, ex1.W)


def gain_multiplier(h, delta=0.0, X=1.0, Y=0.0):
    beta, eta = beta_eta(bounds_from_h_delta(h, delta))
    return Multiplier(beta, eta, X, Y)


class TestSearchSpec:

    def test_defaults(self):
        """Test default multiplier grids and their ranges"""
        spec = SearchSpec.default()
        assert spec.x_stability == (0.0, 1.0)
        assert len(spec.y_grid) == 14 and spec.y_grid[0] == 0.0
        assert spec.x_performance[0] == pytest.approx(1e-2)
        assert spec.x_performance[-1] == pytest.approx(1e2)

    def test_overrides(self):
        """Test that None overrides keep the default value"""
        spec = SearchSpec.default().with_overrides(grid_points=100, refine=None)
        assert spec.grid_points == 100
        assert spec.refine == 5

    def test_unknown_override(self):
        """Test unknown override fields are rejected"""
        with pytest.raises(PreconditionError):
            SearchSpec.default().with_overrides(solver="sdp")

    def test_negative_grid(self):
        """Test negative grid entries are rejected"""
        with pytest.raises(PreconditionError):
            SearchSpec(y_grid=(-1.0, 0.0))


class TestFdiMarginStability:

    def test_feasible_below_threshold(self, ex1_plant):
        """Test Example 1 margin just below the h = pi/2 threshold"""
        margin = fdi_margin_stability(ex1_plant.Gvw, gain_multiplier(1.5))
        assert margin == pytest.approx((3 / np.pi) ** 2 - 1, abs=1e-6)
        assert margin < 0

    def test_infeasible_above_threshold(self, ex1_plant):
        """Test Example 1 margin turns positive above the threshold"""
        margin = fdi_margin_stability(ex1_plant.Gvw, gain_multiplier(1.6))
        assert margin == pytest.approx((3.2 / np.pi) ** 2 - 1, abs=1e-6)

    def test_degenerate_multiplier(self, ex1_plant):
        """Test X = Y = 0 is rejected"""
        with pytest.raises(DegenerateMultiplierError):
            fdi_margin_stability(ex1_plant.Gvw, gain_multiplier(1.0, X=0.0, Y=0.0))

    def test_unstable_channel(self):
        """Test an unstable channel is rejected"""
        with pytest.raises(PreconditionError):
            fdi_margin_stability(from_transfer_function([1.0], [1.0, -1.0]), gain_multiplier(1.0))

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_dense_grid(self, seed):
        """Test refined margin against a dense sweep on second-order systems"""
        rng = np.random.default_rng(seed)
        wn, zeta = rng.uniform(0.5, 5.0), rng.uniform(0.2, 1.0)
        sys = from_transfer_function(rng.normal(size=2), [1.0, 2 * zeta * wn, wn**2])
        m = Multiplier(rng.uniform(0.1, 2.0), rng.uniform(0.0, 1.0), rng.uniform(0.1, 1.0), rng.uniform(0.0, 1.0))
        omegas = np.concatenate(([0.0], np.logspace(-4, 4, 200000) * wn, [np.inf]))
        g = freq_response_grid(sys, omegas)[:, 0, 0]
        dense = np.max(m.top_left * np.abs(g) ** 2 + 2 * m.Y * g.real - m.X)
        assert fdi_margin_stability(sys, m) == pytest.approx(dense, abs=1e-4)

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_dense_grid_on_random_orders(self, seed, random_stable):
        """Refined margin agrees with a dense sweep for random realizations of order 1 to 5"""
        rng = np.random.default_rng(1000 + seed)
        sys = random_stable(rng, 1 + seed % 5, feedthrough=False)
        m = Multiplier(rng.uniform(0.1, 2.0), rng.uniform(0.0, 1.0), rng.uniform(0.1, 1.0), rng.uniform(0.0, 1.0))
        omegas = np.concatenate(([0.0], np.logspace(-4, 4, 200000), [np.inf]))
        g = freq_response_grid(sys, omegas)[:, 0, 0]
        dense = np.max(m.top_left * np.abs(g) ** 2 + 2 * m.Y * g.real - m.X)
        assert fdi_margin_stability(sys, m) == pytest.approx(dense, rel=1e-5, abs=1e-4)


class TestFdiMarginPerformance:

    def test_feasible_near_nominal_gain(self, ex1_plant):
        """Test a budget just above the nominal norm is certified at small h"""
        assert fdi_margin_performance(ex1_plant, gain_multiplier(0.01, X=100.0), 1.05) < 0

    def test_below_nominal_gain(self, ex1_plant):
        """Test no multiplier certifies a budget below the nominal norm"""
        for X, Y in ((1.0, 0.0), (100.0, 0.0), (10.0, 1.0)):
            assert fdi_margin_performance(ex1_plant, gain_multiplier(0.01, X=X, Y=Y), 0.95) > 0

    def test_large_budget(self, ex1_plant):
        """Test a generous budget is certified"""
        assert fdi_margin_performance(ex1_plant, gain_multiplier(0.01, X=100.0), 1e3) < 0

    def test_needs_positive_x(self, ex1_plant):
        """Test the performance form requires X > 0"""
        with pytest.raises(PreconditionError):
            fdi_margin_performance(ex1_plant, gain_multiplier(0.01, X=0.0, Y=1.0), 2.0)


class TestCertifyStability:

    def test_threshold(self, ex1):
        """Test the verdict flips between h = 1.55 and h = 1.60"""
        assert certify_stability(ex1.P, ex1.F, 1.55, 0.0).feasible
        assert not certify_stability(ex1.P, ex1.F, 1.60, 0.0).feasible

    def test_report_fields(self, ex1):
        """Test the report carries the multiplier and the point"""
        report = certify_stability(ex1.P, ex1.F, 1.0, 0.0)
        assert report.X == 1.0 and report.Y == 0.0
        assert report.margin < -eps_feas(report.X, report.Y)
        assert report.h == 1.0 and report.delta == 0.0
        assert report.evaluations >= 1

    @pytest.mark.parametrize("h,delta", [(0.5, 0.5), (1.0, 0.25), (0.3, 1.0), (0.9, 1.0), (0.2, 2.0)])
    def test_y_grid_agrees_with_y_zero(self, ex1, h, delta):
        """Test Y free and Y = 0 agree when Re Gvw is nonnegative"""
        free = certify_stability(ex1.P, ex1.F, h, delta)
        zero = certify_stability(ex1.P, ex1.F, h, delta, SearchSpec.default().with_y_zero())
        assert free.feasible == zero.feasible

    def test_scale_invariance(self, ex1_plant):
        """Test positive scaling of the multiplier keeps the verdict"""
        m = gain_multiplier(1.2, 0.5, X=1.0, Y=0.3)
        for c in (0.01, 7.0, 300.0):
            assert (fdi_margin_stability(ex1_plant.Gvw, m.scaled(c)) < 0) == (fdi_margin_stability(ex1_plant.Gvw, m) < 0)


class TestMaxH:

    def test_example_1(self, ex1):
        """Test h_max of Example 1 is pi/2 at delta = 0"""
        assert max_h(ex1.P, ex1.F, 0.0) == pytest.approx(np.pi / 2, rel=0.01)

    def test_nonincreasing_in_delta(self, ex1):
        """Test h_max does not grow with delta"""
        values = [max_h(ex1.P, ex1.F, d) for d in (0.0, 0.5, 1.0, 2.0)]
        assert all(b <= a * (1 + 1e-3) for a, b in zip(values, values[1:]))

    def test_free_y_is_less_conservative(self):
        """Test the passivity term lifts h_max for the nonminimum-phase plant"""
        ex2 = example_2()
        free = max_h(ex2.P, ex2.F, 0.0)
        zero = max_h(ex2.P, ex2.F, 0.0, SearchSpec.default().with_y_zero())
        assert free >= zero
        assert free > 1.05 * zero

    def test_free_y_dominates_on_the_delta_grid(self):
        """Y free never certifies less than Y = 0, and gains most for the zero closest to the origin"""
        deltas = parse_range("0:0.25:2")
        zero_spec = SearchSpec.default().with_y_zero()
        improvement = {}
        for tz in (0.05, 0.2):
            system = example_2(tz)
            free = [max_h(system.P, system.F, d) for d in deltas]
            zero = [max_h(system.P, system.F, d, zero_spec) for d in deltas]
            assert all(f >= z * (1 - TOL_H) for f, z in zip(free, zero))
            improvement[tz] = max(f / z - 1 for f, z in zip(free, zero))
        assert improvement[0.05] > 0.05
        assert improvement[0.05] > improvement[0.2]

    def test_no_certificate(self, mocker, ex1):
        """Test the search fails when even the seed h is infeasible"""
        mocker.patch("asynciqc.certify._scan_stability", return_value=mocker.Mock(feasible=False))
        with pytest.raises(NoCertificateError):
            max_h(ex1.P, ex1.F, 0.0)

    def test_non_monotone_feasibility_is_downgraded(self, mocker, caplog, ex1):
        """Test an infeasible gap below the boundary lowers the result"""
        # feasible below 1.0 except on [0.82, 0.85]
        def scan(sup, beta, eta, spec):
            h = np.pi * np.sqrt(beta) / 2
            return mocker.Mock(feasible=h < 1.0 and not 0.82 <= h <= 0.85)

        mocker.patch("asynciqc.certify._scan_stability", side_effect=scan)
        result = max_h(ex1.P, ex1.F, 0.0)
        assert result == pytest.approx(0.8, rel=1e-3)
        assert "not monotone" in caplog.text


class TestCertifyPerformance:

    def test_small_h_recovers_nominal_gain(self, ex1):
        """Test gamma approaches the nominal norm as h shrinks"""
        report = certify_performance(ex1.P, ex1.F, ex1.W, 0.01, 0.0)
        assert report.feasible
        assert report.gamma == pytest.approx(1.0, rel=0.03)
        assert report.gamma >= 1.0

    def test_gamma_grows_with_h(self, ex1):
        """Test gamma does not decrease with h"""
        gammas = [certify_performance(ex1.P, ex1.F, ex1.W, h, 0.0).gamma for h in (0.05, 0.4, 1.0)]
        assert all(b >= a * (1 - 2e-3) for a, b in zip(gammas, gammas[1:]))

    def test_sharp_growth_near_the_boundary(self, ex1):
        """Certified gain is nondecreasing up to 0.95 h_max and at least triples from 0.25 to 0.9 h_max"""
        h_top = max_h(ex1.P, ex1.F, 0.0)

        def gamma(h):
            return certify_performance(ex1.P, ex1.F, ex1.W, h, 0.0).gamma

        gammas = [gamma(h) for h in np.linspace(0.05, 0.95, 10) * h_top]
        assert all(b >= a * (1 - 2e-3) for a, b in zip(gammas, gammas[1:]))
        assert gamma(0.9 * h_top) >= 3 * gamma(0.25 * h_top)

    def test_unstable_point_reports_reason(self, ex1):
        """Test a point without a stability certificate has no gamma"""
        report = certify_performance(ex1.P, ex1.F, ex1.W, 1.7, 0.0)
        assert not report.feasible
        assert report.gamma is None
        assert report.extra["reason"] == "stability"


class TestLmiEval:

    def test_toy_system(self):
        """Test the scalar example with a known largest eigenvalue"""
        sys = StateSpace([[-1.0]], [[1.0]], [[0.0]], 0.0)
        value = lmi_eval(sys, Multiplier(1.0, 0.0, 1.0, 0.0), [[1.0]])
        assert value == pytest.approx((-3 + np.sqrt(5)) / 2)

    def test_zero_certificate(self):
        """Test a zero certificate and multiplier give a zero matrix"""
        sys = StateSpace([[-1.0]], [[1.0]], [[0.0]], 1.0)
        assert lmi_eval(sys, Multiplier(0.0, 0.0, 1.0, 0.0), [[0.0]]) == pytest.approx(0.0, abs=1e-12)

    def test_linear_in_certificate(self, ex1_plant):
        """Test joint scaling of Q and the multiplier scales the result"""
        m = gain_multiplier(0.8, 0.5, X=1.0, Y=0.2)
        Q = np.diag([1.0, 2.0, 0.5])
        for c in (0.5, 3.0):
            assert lmi_eval(ex1_plant.Gvw, m.scaled(c), c * Q) == pytest.approx(c * lmi_eval(ex1_plant.Gvw, m, Q))

    def test_asymmetric_q(self, ex1_plant):
        """Test a nonsymmetric certificate is rejected"""
        Q = np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(PreconditionError):
            lmi_eval(ex1_plant.Gvw, gain_multiplier(1.0), Q)

    def test_feasible_lmi_implies_fdi(self):
        """Test a feasible certificate implies a negative margin"""
        sys = from_transfer_function([1.0], [1.0, 1.0])
        m = Multiplier(0.5, 0.0, 1.0, 0.0)
        assert lmi_eval(sys, m, [[0.5]]) < -eps_feas(1.0, 0.0)
        assert fdi_margin_stability(sys, m) == pytest.approx(-0.5, abs=1e-6)

    def test_performance_form_needs_gamma(self, ex1_plant):
        """Test the analysis plant form requires gamma"""
        with pytest.raises(PreconditionError):
            lmi_eval(ex1_plant, gain_multiplier(0.1), np.eye(3))
        value = lmi_eval(ex1_plant, gain_multiplier(0.1), np.zeros((3, 3)), gamma=2.0)
        assert np.isfinite(value)


class TestParseRange:

    def test_inclusive_range(self):
        """Test both ends of the range are included"""
        values = parse_range("0:0.25:2")
        assert len(values) == 9
        assert values[-1] == 2.0

    def test_single_value(self):
        """Test a single number parses to one value"""
        assert parse_range("0.3") == [0.3]

    def test_rounding_at_the_end(self):
        """Test the stop value survives float accumulation"""
        assert parse_range("0:0.1:0.3")[-1] == 0.3

    @pytest.mark.parametrize("text", ["a:b", "1:0:2", "2:0.5:1", "0:1"])
    def test_malformed(self, text):
        """Test malformed ranges are rejected"""
        with pytest.raises(PreconditionError):
            parse_range(text)


class TestSweeps:

    def test_stability_rows(self, mocker, ex1):
        """Test one row per delta in order"""
        mocker.patch("asynciqc.certify.max_h", side_effect=[1.5, 1.2])
        rows = sweep_stability(ex1.P, ex1.F, [0.0, 0.5])
        assert [r["delta"] for r in rows] == [0.0, 0.5]
        assert [r["h_max"] for r in rows] == [1.5, 1.2]
        assert set(rows[0]) == {"delta", "h_max", "X", "Y", "margin"}

    def test_stability_row_without_certificate(self, mocker, ex1):
        """Test a missing certificate yields NaN"""
        mocker.patch("asynciqc.certify.max_h", side_effect=NoCertificateError("none"))
        rows = sweep_stability(ex1.P, ex1.F, [3.0])
        assert np.isnan(rows[0]["h_max"])

    def test_performance_is_delta_major(self, mocker, ex1):
        """Test the performance grid runs over h for each delta"""
        calls = []

        def fake(P, F, W, h, delta, spec):
            calls.append((h, delta))
            return mocker.Mock(feasible=True, gamma=1.0 + h, X=1.0, Y=0.0)

        mocker.patch("asynciqc.certify.certify_performance", side_effect=fake)
        rows = sweep_performance(ex1.P, ex1.F, ex1.W, [0.1, 0.2], [0.0, 1.0])
        assert calls == [(0.1, 0.0), (0.2, 0.0), (0.1, 1.0), (0.2, 1.0)]
        assert rows[1]["gamma"] == pytest.approx(1.2)
