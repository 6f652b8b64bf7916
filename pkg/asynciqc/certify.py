"""Robust stability and performance certificates for asynchronous sample-and-hold loops.

Feasibility of the state-space inequalities is decided through the
equivalent frequency-domain inequalities: the multiplier variables X and Y
are scalars for a single-loop plant, so a grid scan over (X, Y) combined
with a sup over frequency replaces a semidefinite solver. ``lmi_eval``
checks externally supplied (X, Y, Q) certificates directly.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import partial
import logging

import numpy as np
from scipy.optimize import minimize_scalar

from asynciqc.errors import DegenerateMultiplierError, NoCertificateError, PreconditionError
from asynciqc.events import bounds_from_h_delta
from asynciqc.iqc import Multiplier, beta_eta
from asynciqc.lti import (
    AnalysisPlant,
    StateSpace,
    assemble_G,
    characteristic_frequency,
    freq_response_grid,
    frequency_grid,
    hinf_norm,
    require_stable,
)

logger = logging.getLogger(__name__)

EPS_FEAS = 1e-7
TOL_H = 1e-4
TOL_GAMMA = 1e-3
GAMMA_CAP = 1e6
H_SEED = 1e-3
VERIFY_POINTS = 12
VERIFY_SPAN = 0.2
REFINE_CANDIDATES = 3
REFINE_EVALS = 8
MAX_DOUBLINGS = 60


@dataclass(frozen=True)
class SearchSpec:
    x_stability: tuple = (0.0, 1.0)
    y_grid: tuple = tuple([0.0] + np.logspace(-3, 3, 13).tolist())
    x_performance: tuple = tuple(np.logspace(-2, 2, 7).tolist())
    grid_points: int = 400
    span: tuple = (1e-3, 1e3)
    refine: int = 5

    def __post_init__(self):
        for name in ("x_stability", "y_grid", "x_performance"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise PreconditionError(f"search grid '{name}' is empty")
            if min(values) < 0:
                raise PreconditionError(f"search grid '{name}' has negative entries")
            object.__setattr__(self, name, values)
        if self.grid_points < 2 or not 0 < self.span[0] < self.span[1]:
            raise PreconditionError("frequency grid needs >= 2 points and a positive span")

    @classmethod
    def default(cls) -> "SearchSpec":
        return cls()

    def with_y_zero(self) -> "SearchSpec":
        return replace(self, y_grid=(0.0,))

    def with_overrides(self, **overrides) -> "SearchSpec":
        known = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(known) - set(asdict(self))
        if unknown:
            raise PreconditionError(f"unknown search-spec fields: {sorted(unknown)}")
        return replace(self, **known)


@dataclass
class CertificationReport:
    feasible: bool
    X: float = float("nan")
    Y: float = float("nan")
    margin: float = float("nan")
    omega: float = float("nan")
    gamma: float = None
    h: float = None
    delta: float = None
    evaluations: int = 0
    refinements: int = 0
    grid_points: int = 0
    extra: dict = field(default_factory=dict)


def eps_feas(X: float, Y: float, gamma: float = 0.0) -> float:
    return EPS_FEAS * (1 + abs(X) + abs(Y) + gamma**2)


class _FrequencySup:
    """Sup over omega in [0, inf] of a form evaluated on cached frequency responses."""

    def __init__(self, sys: StateSpace, spec: SearchSpec):
        self.sys = sys
        self.spec = spec
        self.omegas = np.append(frequency_grid(sys, spec.grid_points, spec.span), np.inf)
        self.responses = freq_response_grid(sys, self.omegas)
        self.refinements = 0

    def sup(self, form, eps: float = None):
        """Grid maximum, refined around the leading local maxima.

        With eps given, refinement is skipped when the grid already shows
        the form reaching -eps (refining can only raise the sup).
        """
        vals = form(self.responses)
        i = int(np.argmax(vals))
        best, w_best = float(vals[i]), float(self.omegas[i])
        if (eps is not None and best >= -eps) or self.spec.refine == 0:
            return best, w_best
        last = self.omegas.size - 2
        finite = vals[: last + 1]
        peaks = [k for k in range(1, last + 1)
                 if finite[k] >= finite[k - 1] and (k == last or finite[k] >= finite[k + 1])]
        peaks.sort(key=lambda k: -finite[k])
        for k in peaks[:REFINE_CANDIDATES]:
            lo = np.log10(self.omegas[max(k - 1, 1)])
            hi = np.log10(self.omegas[min(k + 1, last)])
            if hi <= lo:
                continue

            def neg(x):
                return -float(form(freq_response_grid(self.sys, [10.0**x]))[0])

            res = minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                                  options={"maxiter": REFINE_EVALS * self.spec.refine, "xatol": 1e-9})
            self.refinements += 1
            if -res.fun > best:
                best, w_best = float(-res.fun), float(10.0**res.x)
        return best, w_best


def _stability_form(m: Multiplier):
    def form(R):
        g = R[:, 0, 0]
        return m.top_left * np.abs(g) ** 2 + 2 * m.Y * g.real - m.X
    return form


def _performance_form(m: Multiplier, gamma: float):
    D1 = np.diag([1.0, m.top_left])
    M12 = np.array([[0.0, 0.0], [0.0, m.Y]])
    M22 = np.diag([-gamma**2, -m.X])

    def form(R):
        RH = np.conj(np.swapaxes(R, 1, 2))
        L = RH @ (D1 @ R) + RH @ M12 + M12 @ R + M22
        p, r = L[:, 0, 0].real, L[:, 1, 1].real
        return 0.5 * (p + r) + np.sqrt(0.25 * (p - r) ** 2 + np.abs(L[:, 0, 1]) ** 2)
    return form


def _check_multiplier(m: Multiplier):
    if m.X == 0 and m.Y == 0:
        raise DegenerateMultiplierError("X = Y = 0 gives the trivial multiplier")


def fdi_margin_stability(Gvw: StateSpace, m: Multiplier, spec: SearchSpec = None):
    """sup over omega in [0, inf] of (beta X + eta Y)|G|^2 + 2Y Re G - X."""
    spec = spec or SearchSpec.default()
    if Gvw.n_inputs != 1 or Gvw.n_outputs != 1:
        raise PreconditionError("stability inequality needs a scalar w -> v channel")
    require_stable(Gvw, "G_vw")
    _check_multiplier(m)
    return _FrequencySup(Gvw, spec).sup(_stability_form(m))[0]


def fdi_margin_performance(G: AnalysisPlant, m: Multiplier, gamma: float, spec: SearchSpec = None):
    """sup over omega in [0, inf] of the largest eigenvalue of the performance form."""
    spec = spec or SearchSpec.default()
    if m.X <= 0:
        raise PreconditionError("performance inequality needs X > 0")
    if gamma <= 0:
        raise PreconditionError("gamma must be positive")
    require_stable(G.G, "G")
    return _FrequencySup(G.G, spec).sup(_performance_form(m, gamma))[0]


def _scan_stability(sup: _FrequencySup, beta: float, eta: float, spec: SearchSpec) -> CertificationReport:
    report = CertificationReport(False, margin=np.inf, grid_points=spec.grid_points)
    for X in spec.x_stability:
        for Y in spec.y_grid:
            if X == 0 and Y == 0:
                continue
            m = Multiplier(beta, eta, X, Y)
            eps = eps_feas(X, Y)
            margin, omega = sup.sup(_stability_form(m), eps)
            report.evaluations += 1
            if margin < -eps:
                report.feasible, report.X, report.Y, report.margin, report.omega = True, X, Y, margin, omega
                report.refinements = sup.refinements
                return report
            if margin < report.margin:
                report.X, report.Y, report.margin, report.omega = X, Y, margin, omega
    report.refinements = sup.refinements
    return report


def certify_stability(P: StateSpace, F: StateSpace, h: float, delta: float,
                      spec: SearchSpec = None, plant: AnalysisPlant = None) -> CertificationReport:
    """Search the (X, Y) grid for a stability certificate at (h, delta).

    Stability verdicts are invariant under scaling (X, Y), so X ranges over {0, 1}.
    """
    spec = spec or SearchSpec.default()
    plant = plant or assemble_G(P, F)
    beta, eta = beta_eta(bounds_from_h_delta(h, delta))
    report = _scan_stability(_FrequencySup(plant.Gvw, spec), beta, eta, spec)
    report.h, report.delta = h, delta
    logger.debug("stability h=%g delta=%g feasible=%s margin=%g", h, delta, report.feasible, report.margin)
    return report


def _scan_performance(sup: _FrequencySup, beta: float, eta: float, gamma: float, spec: SearchSpec):
    evaluations = 0
    for X in spec.x_performance:
        if X == 0:
            continue
        for Y in spec.y_grid:
            m = Multiplier(beta, eta, X, Y)
            eps = eps_feas(X, Y, gamma)
            margin, omega = sup.sup(_performance_form(m, gamma), eps)
            evaluations += 1
            if margin < -eps:
                return (X, Y, margin, omega), evaluations
    return None, evaluations


def certify_performance(P: StateSpace, F: StateSpace, W: StateSpace, h: float, delta: float,
                        spec: SearchSpec = None) -> CertificationReport:
    """Smallest gamma (to relative tol 1e-3) certified over the (X, Y) grid."""
    spec = spec or SearchSpec.default()
    plant = assemble_G(P, F, W)
    stability = certify_stability(P, F, h, delta, spec, plant)
    if not stability.feasible:
        logger.info("no stability certificate at h=%g delta=%g; skipping the gamma search", h, delta)
        stability.extra["reason"] = "stability"
        return stability
    beta, eta = beta_eta(bounds_from_h_delta(h, delta))
    sup = _FrequencySup(plant.G, spec)
    gamma_lo, _ = hinf_norm(plant.Gzd)
    evaluations = 0

    hi = max(2.0 * gamma_lo, 1e-6)
    while True:
        witness, n = _scan_performance(sup, beta, eta, hi, spec)
        evaluations += n
        if witness is not None:
            break
        if hi >= GAMMA_CAP:
            return CertificationReport(False, h=h, delta=delta, evaluations=evaluations,
                                       refinements=sup.refinements, grid_points=spec.grid_points,
                                       extra={"reason": "gamma cap", "gamma_lo": gamma_lo})
        gamma_lo, hi = hi, min(2.0 * hi, GAMMA_CAP)

    lo = gamma_lo
    while hi - lo > TOL_GAMMA * hi:
        mid = 0.5 * (lo + hi)
        found, n = _scan_performance(sup, beta, eta, mid, spec)
        evaluations += n
        if found is None:
            lo = mid
        else:
            hi, witness = mid, found
        logger.debug("gamma bisection: [%g, %g]", lo, hi)
    X, Y, margin, omega = witness
    return CertificationReport(True, X, Y, margin, omega, gamma=hi, h=h, delta=delta,
                               evaluations=evaluations, refinements=sup.refinements,
                               grid_points=spec.grid_points, extra={"gamma_lo": gamma_lo})


def max_h(P: StateSpace, F: StateSpace, delta: float, spec: SearchSpec = None) -> float:
    """Largest h for which the stability certificate exists at the given delta.

    Bisection assumes feasibility is monotone in h; a sweep over
    [0.8, 1.2] * h_max checks that, and an infeasible point below h_max
    lowers the result to the best verified h.
    """
    spec = spec or SearchSpec.default()
    plant = assemble_G(P, F)
    sup = _FrequencySup(plant.Gvw, spec)
    verified = []

    def feasible(h):
        beta, eta = beta_eta(bounds_from_h_delta(h, delta))
        ok = _scan_stability(sup, beta, eta, spec).feasible
        if ok:
            verified.append(h)
        return ok

    seed = H_SEED / characteristic_frequency(plant.G)
    if not feasible(seed):
        raise NoCertificateError(f"no stability certificate even at h = {seed:.3g} (delta = {delta})")
    lo, hi = seed, 2.0 * seed
    for _ in range(MAX_DOUBLINGS):
        if not feasible(hi):
            break
        lo, hi = hi, 2.0 * hi
    else:
        logger.warning("stability certificate found for every h up to %g", lo)
        return lo
    while hi - lo > TOL_H * lo:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
        logger.debug("h bisection (delta=%g): [%g, %g]", delta, lo, hi)

    sweep = np.linspace(lo * (1 - VERIFY_SPAN), lo * (1 + VERIFY_SPAN), VERIFY_POINTS)
    verdicts = [(h, feasible(h)) for h in sweep]
    failures = [h for h, ok in verdicts if h <= lo and not ok]
    beyond = [h for h, ok in verdicts if h >= hi and ok]
    if beyond:
        logger.info("certificate also found above the boundary at h=%g (delta=%g)", beyond[-1], delta)
    if failures:
        best = max(h for h in verified if h < failures[0])
        logger.warning(
            "feasibility is not monotone in h near %g (delta=%g); using verified h=%g", lo, delta, best
        )
        return float(best)
    return float(lo)


def lmi_eval(G, m: Multiplier, Q, gamma: float = None) -> float:
    """Largest eigenvalue of the left-hand side of the KYP inequality for a given Q.

    G is the scalar w -> v channel (stability form, gamma omitted) or the
    full analysis plant (performance form, gamma given). A negative value
    certifies the inequality with this Q.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if isinstance(G, AnalysisPlant):
        if gamma is None:
            raise PreconditionError("the performance form needs gamma")
        sys = G.G
        middle = np.zeros((4, 4))
        middle[0, 0] = 1.0
        middle[1, 1] = m.top_left
        middle[1, 3] = middle[3, 1] = m.Y
        middle[2, 2] = -gamma**2
        middle[3, 3] = -m.X
    else:
        if gamma is not None:
            raise PreconditionError("gamma is only used with the full analysis plant")
        sys = G
        middle = m.M
    n, k = sys.n_states, sys.n_inputs
    if Q.shape != (n, n):
        raise PreconditionError(f"Q must be {n}x{n}")
    if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(Q).max())):
        raise PreconditionError("Q must be symmetric")
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    storage = np.block([[A.T @ Q + Q @ A, Q @ B], [B.T @ Q, np.zeros((k, k))]])
    outer = np.block([[C, D], [np.zeros((k, n)), np.eye(k)]])
    lhs = storage + outer.T @ middle @ outer
    return float(np.max(np.linalg.eigvalsh(0.5 * (lhs + lhs.T))))


def parse_range(text: str) -> list:
    """Parse 'start:step:stop' (both ends inclusive within 1e-12) or a single value."""
    parts = text.split(":")
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise PreconditionError(f"malformed range '{text}'") from None
    if len(values) == 1:
        return values
    if len(values) != 3:
        raise PreconditionError(f"range '{text}' must look like start:step:stop")
    start, step, stop = values
    if step <= 0 or stop < start:
        raise PreconditionError(f"range '{text}' needs step > 0 and stop >= start")
    tol = 1e-12 * max(1.0, abs(stop))
    count = int(np.floor((stop - start) / step))
    if start + (count + 1) * step <= stop + tol:
        count += 1
    out = [start + k * step for k in range(count + 1)]
    if abs(out[-1] - stop) <= tol:
        out[-1] = stop
    return out


def _stability_row(P, F, spec, delta):
    try:
        h = max_h(P, F, delta, spec)
    except NoCertificateError:
        logger.warning("no certificate for delta=%g", delta)
        return {"delta": delta, "h_max": float("nan"), "X": float("nan"), "Y": float("nan"),
                "margin": float("nan")}
    report = certify_stability(P, F, h, delta, spec)
    return {"delta": delta, "h_max": h, "X": report.X, "Y": report.Y, "margin": report.margin}


def _performance_row(P, F, W, spec, point):
    h, delta = point
    report = certify_performance(P, F, W, h, delta, spec)
    gamma = report.gamma if report.feasible else float("nan")
    return {"h": h, "delta": delta, "gamma": gamma, "X": report.X, "Y": report.Y}


def _map(task, points, workers: int):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(task, points))
    return [task(p) for p in points]


def sweep_stability(P, F, deltas, spec: SearchSpec = None, workers: int = 1) -> list:
    """h_max over a delta grid; rows keep the grid order."""
    spec = spec or SearchSpec.default()
    return _map(partial(_stability_row, P, F, spec), list(deltas), workers)


def sweep_performance(P, F, W, hs, deltas, spec: SearchSpec = None, workers: int = 1) -> list:
    """Certified gamma over the (h, delta) grid, delta-major row order."""
    spec = spec or SearchSpec.default()
    points = [(h, d) for d in deltas for h in hs]
    return _map(partial(_performance_row, P, F, W, spec), points, workers)
