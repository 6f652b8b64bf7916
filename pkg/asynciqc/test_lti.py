import numpy as np
import pytest
import control as ctl

from asynciqc.errors import (
    AlgebraicLoopError,
    NominalInstabilityError,
    PoleOnAxisError,
    PreconditionError,
)
from asynciqc.lti import (
    TOL_TF,
    StateSpace,
    assemble_G,
    characteristic_frequency,
    derivative_compose,
    freq_response,
    freq_response_grid,
    from_transfer_function,
    hinf_norm,
    hurwitz_margin,
    is_stable,
    static_gain,
)

LAG = ([1.0], [0.1, 1.0])
INTEGRATOR = ([1.0], [1.0, 0.0])
BANDPASS = ([1.0, 0.0], [0.1, 1.0, 1.0])


def tf(num, den):
    return from_transfer_function(num, den)


def scalar(G):
    return complex(np.asarray(G).ravel()[0])


class TestHurwitzMargin:
    """Largest real part of the eigenvalues of A."""

    def test_first_order(self):
        """Test a single pole"""
        assert hurwitz_margin(StateSpace([[-1.0]], [[1.0]], [[1.0]], 0.0)) == pytest.approx(-1.0)

    def test_double_root(self):
        """Test a repeated pole"""
        sys = StateSpace([[0.0, 1.0], [-1.0, -2.0]], [[0.0], [1.0]], [[1.0, 0.0]], 0.0)
        assert hurwitz_margin(sys) == pytest.approx(-1.0, abs=1e-6)

    def test_integrator_boundary(self):
        """Test an integrator is not stable"""
        sys = StateSpace([[0.0]], [[1.0]], [[1.0]], 0.0)
        assert hurwitz_margin(sys) == pytest.approx(0.0)
        assert not is_stable(sys)

    def test_static_gain_has_no_states(self):
        """Test a static gain has no margin but counts as stable"""
        with pytest.raises(PreconditionError):
            hurwitz_margin(static_gain(2.0))
        assert is_stable(static_gain(2.0))


class TestDerivativeCompose:

    def test_lag(self):
        """Test s F for a fast lag"""
        out = derivative_compose(StateSpace([[-10.0]], [[1.0]], [[10.0]], 0.0))
        assert out.A[0, 0] == pytest.approx(-10.0)
        assert out.B[0, 0] == pytest.approx(1.0)
        assert out.C[0, 0] == pytest.approx(-100.0)
        assert out.D[0, 0] == pytest.approx(10.0)

    def test_unit_lag(self):
        """Test s F for a unit lag"""
        out = derivative_compose(StateSpace([[-1.0]], [[1.0]], [[1.0]], 0.0))
        assert (out.A[0, 0], out.B[0, 0], out.C[0, 0], out.D[0, 0]) == pytest.approx((-1.0, 1.0, -1.0, 1.0))

    def test_matches_s_times_f(self):
        """Test the response equals j omega times that of F"""
        F = tf(*LAG)
        sF = derivative_compose(F)
        for w in (0.1, 1.0, 7.0, 40.0):
            assert scalar(freq_response(sF, w)) == pytest.approx(1j * w * scalar(freq_response(F, w)), abs=TOL_TF)

    def test_feedthrough_rejected(self):
        """Test F with feedthrough is rejected"""
        with pytest.raises(PreconditionError, match="non-strictly-proper"):
            derivative_compose(StateSpace([[-1.0]], [[1.0]], [[1.0]], 0.5))


class TestFreqResponse:

    def test_dc_gain(self):
        """Test the response at omega = 0"""
        assert scalar(freq_response(tf(*LAG), 0.0)) == pytest.approx(1.0)

    def test_bandpass_peak(self):
        """Test the bandpass peak value"""
        assert abs(scalar(freq_response(tf(*BANDPASS), np.sqrt(10.0)))) == pytest.approx(1.0, abs=1e-12)

    def test_infinity_returns_feedthrough(self):
        """Test omega = inf returns D"""
        sys = StateSpace([[-2.0]], [[1.0]], [[3.0]], 0.25)
        assert scalar(freq_response(sys, np.inf)) == pytest.approx(0.25)

    def test_pole_on_axis(self):
        """Test a pole on the axis raises"""
        with pytest.raises(PoleOnAxisError):
            freq_response(tf(*INTEGRATOR), 0.0)

    def test_grid_matches_pointwise(self):
        """Test the vectorized grid against single evaluations"""
        sys = tf([0.9 * 0.05, -0.9], [1.0, 2.0, 1.0])
        omegas = np.array([0.0, 0.3, 2.0, 11.0, np.inf])
        grid = freq_response_grid(sys, omegas)
        for w, G in zip(omegas, grid):
            assert G[0, 0] == pytest.approx(scalar(freq_response(sys, w)), abs=TOL_TF)

    def test_agrees_with_python_control(self):
        """Test responses against python-control"""
        num, den = [2.0, 1.0], [1.0, 3.0, 5.0]
        ours = tf(num, den)
        oracle = ctl.tf(num, den)
        for w in np.logspace(-2, 2, 9):
            assert scalar(freq_response(ours, w)) == pytest.approx(scalar(oracle(1j * w)), abs=TOL_TF)


class TestHinfNorm:

    def test_lag_peaks_at_dc(self):
        """Test a lag peaks at zero frequency"""
        value, w_peak = hinf_norm(tf(*LAG))
        assert value == pytest.approx(1.0, rel=1e-5)
        assert w_peak == pytest.approx(0.0, abs=1e-2)

    def test_bandpass(self):
        """Test the bandpass norm and peak frequency"""
        value, w_peak = hinf_norm(tf(*BANDPASS))
        assert value == pytest.approx(1.0, rel=1e-5)
        assert w_peak == pytest.approx(np.sqrt(10.0), rel=1e-2)

    def test_resonant_peak(self):
        """Test a lightly damped resonance"""
        # 1/(s^2 + 0.2 s + 1): peak 1/(2 zeta sqrt(1 - zeta^2)) with zeta = 0.1
        value, _ = hinf_norm(tf([1.0], [1.0, 0.2, 1.0]))
        assert value == pytest.approx(1.0 / (0.2 * np.sqrt(0.99)), rel=1e-5)

    def test_unstable_rejected(self):
        """Test unstable systems are rejected"""
        with pytest.raises(PreconditionError):
            hinf_norm(tf(*INTEGRATOR))

    def test_static(self):
        """Test a static gain"""
        assert hinf_norm(static_gain(-3.0))[0] == pytest.approx(3.0)

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_dense_grid_on_random_systems(self, seed, random_stable):
        """Bisection norm agrees with a dense frequency sweep to 0.1% for orders 1 to 6"""
        rng = np.random.default_rng(seed)
        sys = random_stable(rng, 1 + seed % 6)
        omegas = np.concatenate(([0.0], np.logspace(-4, 4, 100000), [np.inf]))
        dense = np.max(np.abs(freq_response_grid(sys, omegas)[:, 0, 0]))
        value, w_peak = hinf_norm(sys)
        assert value == pytest.approx(dense, rel=1e-3)
        assert abs(scalar(freq_response(sys, w_peak))) == pytest.approx(value, rel=1e-6)


class TestAssembleG:

    @pytest.fixture
    def blocks(self):
        return tf(*INTEGRATOR), tf(*LAG), tf(*LAG)

    def test_transfer_identities(self, blocks):
        """Test every channel against the closed-loop transfer functions"""
        P, F, W = blocks
        G = assemble_G(P, F, W)
        P_, F_, W_ = ctl.tf(*INTEGRATOR), ctl.tf(*LAG), ctl.tf(*LAG)
        for w in (0.05, 0.5, 3.0, 30.0):
            s = 1j * w
            loop = 1.0 + scalar(F_(s)) * scalar(P_(s))
            zd = scalar(W_(s)) / loop
            vd = s * scalar(F_(s)) * scalar(P_(s)) / loop
            assert scalar(freq_response(G.channel("z", "d"), w)) == pytest.approx(zd, abs=TOL_TF)
            assert scalar(freq_response(G.channel("z", "w"), w)) == pytest.approx(zd, abs=TOL_TF)
            assert scalar(freq_response(G.channel("v", "d"), w)) == pytest.approx(vd, abs=TOL_TF)
            assert scalar(freq_response(G.Gvw, w)) == pytest.approx(vd, abs=TOL_TF)

    def test_gvw_is_bandpass(self, blocks):
        """Test Gvw of Example 1 is the unit bandpass"""
        G = assemble_G(*blocks)
        expected = tf(*BANDPASS)
        for w in (0.1, 1.0, np.sqrt(10.0), 25.0):
            assert scalar(freq_response(G.Gvw, w)) == pytest.approx(scalar(freq_response(expected, w)), abs=TOL_TF)
        assert hinf_norm(G.Gvw)[0] == pytest.approx(1.0, rel=1e-5)

    def test_w_defaults_to_f(self, blocks):
        """Test W defaults to F"""
        P, F, _ = blocks
        G = assemble_G(P, F)
        assert G.G.n_states == 3
        assert hinf_norm(G.Gzd)[0] == pytest.approx(1.0, rel=1e-5)

    def test_nonminimum_phase_plant(self):
        """Test the nonminimum-phase loop is stable"""
        G = assemble_G(tf([0.045, -0.9], [1.0, 2.0, 1.0]), tf(*LAG))
        assert is_stable(G.G)

    def test_unstable_loop(self):
        """Test an unstable nominal loop raises"""
        with pytest.raises(NominalInstabilityError):
            assemble_G(tf(*INTEGRATOR), StateSpace([[-10.0]], [[1.0]], [[-10.0]], 0.0))

    def test_algebraic_loop(self):
        """Test a static F raises"""
        with pytest.raises(AlgebraicLoopError):
            assemble_G(tf(*INTEGRATOR), static_gain(1.0))


def test_characteristic_frequency():
    """Test the geometric mean of pole magnitudes"""
    assert characteristic_frequency(tf([1.0], [1.0, 11.0, 10.0])) == pytest.approx(np.sqrt(10.0))
    assert characteristic_frequency(static_gain(1.0)) == 1.0


def test_improper_transfer_function():
    """Test improper transfer functions are rejected"""
    with pytest.raises(PreconditionError):
        tf([1.0, 0.0, 0.0], [1.0, 1.0])
