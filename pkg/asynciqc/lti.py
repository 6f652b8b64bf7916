"""State-space algebra for the LTI blocks of the sampled-data loop.

Covers construction (explicit matrices or rational transfer functions),
stability checks, frequency response, the H-infinity norm, and the assembly
of the two-input two-output analysis plant G mapping (d, w) to (z, v).
"""

from dataclasses import dataclass, field
import logging

import numpy as np
import scipy.linalg
import scipy.signal

from asynciqc.errors import (
    AlgebraicLoopError,
    NominalInstabilityError,
    NumericFailureError,
    PoleOnAxisError,
    PreconditionError,
)

logger = logging.getLogger(__name__)

ALPHA_STAB = 1e-9
TOL_HINF = 1e-6
TOL_TF = 1e-9
EIG_RESIDUAL = 1e-8
IMAG_AXIS_TOL = 1e-7
COND_LIMIT = 1e14


def _as_matrix(value, shape) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.size != shape[0] * shape[1]:
        raise PreconditionError(f"expected {shape[0]}x{shape[1]} matrix, got shape {arr.shape}")
    arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Real realization (A, B, C, D); n = 0 encodes the static gain D."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        D = np.atleast_2d(np.array(self.D, dtype=float))
        if D.ndim != 2:
            raise PreconditionError("D must be a matrix")
        p, m = D.shape
        n = int(round(np.sqrt(np.size(self.A))))
        A = _as_matrix(self.A, (n, n))
        B = _as_matrix(self.B, (n, m))
        C = _as_matrix(self.C, (p, n))
        D.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.D.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.D.shape[0]

    @property
    def strictly_proper(self) -> bool:
        return not np.any(self.D)


def static_gain(D) -> StateSpace:
    D = np.atleast_2d(np.asarray(D, dtype=float))
    return StateSpace(np.zeros((0, 0)), np.zeros((0, D.shape[1])), np.zeros((D.shape[0], 0)), D)


def from_transfer_function(num, den) -> StateSpace:
    """Controllable canonical realization of num(s)/den(s), descending powers."""
    num = np.trim_zeros(np.atleast_1d(np.asarray(num, dtype=float)), "f")
    den = np.trim_zeros(np.atleast_1d(np.asarray(den, dtype=float)), "f")
    if den.size == 0:
        raise PreconditionError("denominator is identically zero")
    if num.size == 0:
        num = np.zeros(1)
    if num.size > den.size:
        raise PreconditionError("transfer function is not proper")
    if den.size == 1:
        return static_gain([[num[-1] / den[0]]])
    A, B, C, D = scipy.signal.tf2ss(num, den)
    return StateSpace(A, B, C, D)


def checked_eigenvalues(A: np.ndarray) -> np.ndarray:
    """Eigenvalues of A with the residual check ||Av - lambda v|| <= 1e-8 ||A||."""
    try:
        w, v = scipy.linalg.eig(A)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericFailureError(f"eigenvalue iteration failed: {exc}") from exc
    if w.size == 0:
        return w
    residual = np.linalg.norm(A @ v - v * w, axis=0).max()
    if not np.isfinite(residual) or residual > EIG_RESIDUAL * np.linalg.norm(A, 2):
        raise NumericFailureError("eigenvalue residual check failed", residual)
    return w


def hurwitz_margin(sys: StateSpace) -> float:
    """Largest real part over the eigenvalues of A."""
    if sys.n_states < 1:
        raise PreconditionError("hurwitz_margin needs at least one state")
    return float(np.max(checked_eigenvalues(sys.A).real))


def is_stable(sys: StateSpace) -> bool:
    return sys.n_states == 0 or hurwitz_margin(sys) < -ALPHA_STAB


def require_stable(sys: StateSpace, what: str = "system"):
    if not is_stable(sys):
        raise PreconditionError(f"{what} is not Hurwitz (margin {hurwitz_margin(sys):.3e})")


def derivative_compose(F: StateSpace) -> StateSpace:
    """Realization of s*F(s) for strictly proper, stable F."""
    if not F.strictly_proper:
        raise PreconditionError("derivative of non-strictly-proper block")
    require_stable(F, "F")
    return StateSpace(F.A, F.B, F.C @ F.A, F.C @ F.B)


def freq_response(sys: StateSpace, omega: float) -> np.ndarray:
    """C (j omega I - A)^-1 B + D; omega = inf returns D."""
    if np.isinf(omega) or sys.n_states == 0:
        return sys.D.astype(complex)
    M = 1j * omega * np.eye(sys.n_states) - sys.A
    if np.linalg.cond(M) > COND_LIMIT:
        raise PoleOnAxisError(f"pole on the imaginary axis at omega={omega}")
    return sys.C @ np.linalg.solve(M, sys.B) + sys.D


def freq_response_grid(sys: StateSpace, omegas) -> np.ndarray:
    """Vectorized freq_response over a frequency array, shape (N, p, m)."""
    omegas = np.asarray(omegas, dtype=float)
    out = np.empty((omegas.size, sys.n_outputs, sys.n_inputs), dtype=complex)
    out[:] = sys.D
    finite = np.isfinite(omegas)
    if sys.n_states == 0 or not finite.any():
        return out
    n = sys.n_states
    M = 1j * omegas[finite, None, None] * np.eye(n) - sys.A
    if np.max(np.linalg.cond(M)) > COND_LIMIT:
        raise PoleOnAxisError("pole on the imaginary axis inside the frequency grid")
    X = np.linalg.solve(M, np.broadcast_to(sys.B, (M.shape[0], n, sys.n_inputs)))
    out[finite] = sys.C @ X + sys.D
    return out


def characteristic_frequency(sys: StateSpace) -> float:
    """Geometric mean of the nonzero eigenvalue magnitudes of A (1 if none)."""
    if sys.n_states == 0:
        return 1.0
    mags = np.abs(checked_eigenvalues(sys.A))
    mags = mags[mags > 1e-12]
    if mags.size == 0:
        return 1.0
    return float(np.exp(np.mean(np.log(mags))))


def frequency_grid(sys: StateSpace, points: int = 400, span=(1e-3, 1e3)) -> np.ndarray:
    """Log-spaced grid over span * omega_c with omega = 0 prepended."""
    wc = characteristic_frequency(sys)
    grid = np.logspace(np.log10(span[0] * wc), np.log10(span[1] * wc), points)
    return np.concatenate(([0.0], grid))


def _sigma_max(sys: StateSpace, omegas) -> np.ndarray:
    H = freq_response_grid(sys, omegas)
    return np.linalg.svd(H, compute_uv=False)[:, 0]


def _hamiltonian_crossings(sys: StateSpace, gamma: float) -> np.ndarray:
    # frequencies at which gamma is a singular value of G(j omega)
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    p, m = D.shape
    R = D.T @ D - gamma**2 * np.eye(m)
    S = D @ D.T - gamma**2 * np.eye(p)
    Ri = np.linalg.inv(R)
    Si = np.linalg.inv(S)
    H = np.block([
        [A - B @ Ri @ D.T @ C, -gamma * B @ Ri @ B.T],
        [gamma * C.T @ Si @ C, -A.T + C.T @ D @ Ri @ B.T],
    ])
    eigs = scipy.linalg.eigvals(H)
    on_axis = np.abs(eigs.real) <= IMAG_AXIS_TOL * np.maximum(1.0, np.abs(eigs))
    freqs = np.abs(eigs[on_axis].imag)
    return np.unique(np.round(freqs, 14))


def hinf_norm(sys: StateSpace, tol: float = TOL_HINF):
    """H-infinity norm and peak frequency of a stable system.

    Bisection on gamma: gamma is an upper bound iff the associated Hamiltonian
    has no imaginary-axis eigenvalue. Crossing frequencies found on the way are
    evaluated to lift the lower bound, so the returned value is attained at the
    returned frequency.
    """
    require_stable(sys)
    d_gain = float(np.linalg.norm(sys.D, 2)) if sys.D.size else 0.0
    if sys.n_states == 0:
        return d_gain, 0.0
    grid = frequency_grid(sys, points=200)
    sv = _sigma_max(sys, grid)
    i = int(np.argmax(sv))
    best, w_peak = float(sv[i]), float(grid[i])
    if d_gain > best:
        best, w_peak = d_gain, np.inf
    if best == 0.0:
        return 0.0, 0.0
    lo = best
    hi = 2.0 * lo
    for _ in range(60):
        if _hamiltonian_crossings(sys, hi).size == 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise NumericFailureError("no upper bound found for the H-infinity norm")
    while hi - lo > tol * lo:
        gamma = 0.5 * (lo + hi)
        freqs = _hamiltonian_crossings(sys, gamma)
        if freqs.size == 0:
            hi = gamma
            continue
        lo = gamma
        points = np.concatenate((freqs, 0.5 * (freqs[1:] + freqs[:-1])))
        vals = _sigma_max(sys, points)
        j = int(np.argmax(vals))
        if vals[j] > best:
            best, w_peak = float(vals[j]), float(points[j])
        lo = max(lo, best)
        logger.debug("hinf bisection: [%g, %g]", lo, hi)
    return best, w_peak


@dataclass(frozen=True)
class AnalysisPlant:
    """The analysis system G: (d, w) -> (z, v) of the loop transformation."""

    G: StateSpace
    inputs: tuple = field(default=("d", "w"))
    outputs: tuple = field(default=("z", "v"))

    def channel(self, out: str, inp: str) -> StateSpace:
        i = self.outputs.index(out)
        j = self.inputs.index(inp)
        G = self.G
        return StateSpace(G.A, G.B[:, [j]], G.C[[i], :], G.D[[i]][:, [j]])

    @property
    def Gvw(self) -> StateSpace:
        return self.channel("v", "w")

    @property
    def Gzd(self) -> StateSpace:
        return self.channel("z", "d")


def assemble_G(P: StateSpace, F: StateSpace, W: StateSpace = None) -> AnalysisPlant:
    """Assemble G by state augmentation of (x_P, x_F, x_W).

    u = d + w - F y, y = P u, z = W u, v = (s F) y. W defaults to F.
    """
    if W is None:
        W = F
    if not F.strictly_proper:
        raise AlgebraicLoopError("F must be strictly proper (algebraic loop)")
    require_stable(F, "F")
    for blk, name in ((P, "P"), (F, "F"), (W, "W")):
        if blk.n_inputs != 1 or blk.n_outputs != 1:
            raise PreconditionError(f"{name} must be single-input single-output")
    Ap, Bp, Cp, Dp = P.A, P.B, P.C, P.D
    Af, Bf, Cf = F.A, F.B, F.C
    Aw, Bw, Cw, Dw = W.A, W.B, W.C, W.D
    np_, nf, nw = P.n_states, F.n_states, W.n_states

    A = np.block([
        [Ap, -Bp @ Cf, np.zeros((np_, nw))],
        [Bf @ Cp, Af - Bf @ Dp @ Cf, np.zeros((nf, nw))],
        [np.zeros((nw, np_)), -Bw @ Cf, Aw],
    ])
    Be = np.vstack((Bp, Bf @ Dp, Bw))
    Cz = np.hstack((np.zeros((1, np_)), -Dw @ Cf, Cw))
    Cv = np.hstack((Cf @ Bf @ Cp, Cf @ Af - Cf @ Bf @ Dp @ Cf, np.zeros((1, nw))))
    Dv = Cf @ Bf @ Dp
    G = StateSpace(
        A,
        np.hstack((Be, Be)),
        np.vstack((Cz, Cv)),
        np.block([[Dw, Dw], [Dv, Dv]]),
    )
    margin = hurwitz_margin(G)
    if margin >= -ALPHA_STAB:
        raise NominalInstabilityError(
            f"nominal loop [[P, -F]] is not stable (margin {margin:.3e})"
        )
    return AnalysisPlant(G)
