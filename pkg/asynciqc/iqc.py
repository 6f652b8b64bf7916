"""The multiplier family Pi(X, Y) and empirical checks of the gain and passivity lemmas."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
import logging

import numpy as np
import pandas as pd

from asynciqc import signals
from asynciqc.errors import PreconditionError
from asynciqc.events import AsyncBounds, EventSequence, delay_profile, random_schedule, sawtooth_profile, validate
from asynciqc.tables import write_csv

logger = logging.getLogger(__name__)

TOL_LEMMA = 1e-9
TOL_LEMMA_SINUSOID = 1e-4
HORIZON_FACTOR = 20
SWEEP_INPUTS = 200
SWEEP_INTERVALS = 40


@dataclass(frozen=True)
class Multiplier:
    beta: float
    eta: float
    X: float
    Y: float

    def __post_init__(self):
        if min(self.beta, self.eta, self.X, self.Y) < 0:
            raise PreconditionError("multiplier parameters must be non-negative")

    @classmethod
    def from_bounds(cls, b: AsyncBounds, X: float = 1.0, Y: float = 0.0) -> "Multiplier":
        beta, eta = beta_eta(b)
        return cls(beta, eta, X, Y)

    @property
    def top_left(self) -> float:
        return self.beta * self.X + self.eta * self.Y

    @property
    def M(self) -> np.ndarray:
        return np.array([[self.top_left, self.Y], [self.Y, -self.X]])

    def scaled(self, c: float) -> "Multiplier":
        return Multiplier(self.beta, self.eta, c * self.X, c * self.Y)


def lemma_bound(b: AsyncBounds) -> float:
    """Induced L2 gain bound of Delta: 2(tau'+tau_circ)/pi + sqrt((tau'+tau_circ) tau_natural)."""
    span = b.tau_prime + b.tau_circ
    return 2 * span / np.pi + np.sqrt(span * b.tau_natural)


def beta_eta(b: AsyncBounds):
    return lemma_bound(b) ** 2, b.tau_natural


@dataclass(frozen=True)
class TrialResult:
    kind: str
    ratio: float = float("nan")
    slack: float = float("nan")
    norm_v: float = 0.0
    norm_w: float = 0.0
    tol: float = TOL_LEMMA
    passed: bool = True
    components: dict = field(default_factory=dict)


def _tolerance(v: signals.PiecewiseSignal) -> float:
    return TOL_LEMMA_SINUSOID if "interp_error" in v.meta else TOL_LEMMA


def _check_padding(p, b: AsyncBounds, v: signals.PiecewiseSignal):
    settle = p.horizon - (b.tau_prime + b.tau_circ)
    if v.support_end() > settle + 1e-12:
        logger.warning(
            "input support ends at %.6g, after %.6g; Delta v may not settle inside the horizon",
            v.support_end(), settle,
        )


def gain_trial(p, b: AsyncBounds, v: signals.PiecewiseSignal) -> TrialResult:
    """Ratio of ||Delta v|| to the lemma bound times ||v||.

    The components record the two parts of Delta v (within-interval integral
    and held reset carry-over) against their own bounds.
    """
    norm_v = signals.l2_norm(v)
    if norm_v == 0:
        raise PreconditionError("gain trial needs an input with non-zero norm")
    _check_padding(p, b, v)
    w = signals.delta_apply(p, v)
    norm_w = signals.l2_norm(w)
    bound = lemma_bound(b)
    ratio = norm_w / (bound * norm_v)

    within, carried = signals.delta_split(p, v)
    span = b.tau_prime + b.tau_circ
    components = {
        "within": signals.l2_norm(within) / (2 * span / np.pi * norm_v),
        "carried": _safe_ratio(signals.l2_norm(carried), np.sqrt(span * b.tau_natural) * norm_v),
    }
    tol = _tolerance(v)
    return TrialResult("gain", ratio=ratio, norm_v=norm_v, norm_w=norm_w, tol=tol,
                       passed=ratio <= 1 + tol, components=components)


def _safe_ratio(num: float, den: float) -> float:
    if den > 0:
        return num / den
    return 0.0 if num == 0 else float("inf")


def passivity_trial(p, b: AsyncBounds, v: signals.PiecewiseSignal) -> TrialResult:
    """Slack <Delta v, v> + (tau_natural/2)||v||^2, non-negative by the passivity lemma."""
    energy = signals.l2_inner(v, v)
    if energy == 0:
        return TrialResult("passivity", slack=0.0)
    _check_padding(p, b, v)
    w = signals.delta_apply(p, v)
    slack = signals.l2_inner(w, v) + 0.5 * b.tau_natural * energy
    tol = _tolerance(v)
    return TrialResult("passivity", slack=slack, norm_v=np.sqrt(energy), norm_w=signals.l2_norm(w),
                       tol=tol, passed=slack >= -tol * energy)


def iqc_residual(v: signals.PiecewiseSignal, w: signals.PiecewiseSignal, m: Multiplier) -> float:
    vv = signals.l2_inner(v, v)
    return m.top_left * vv - m.X * signals.l2_inner(w, w) + 2 * m.Y * signals.l2_inner(w, v)


def random_trial_input(b: AsyncBounds, seed: int, horizon_factor: int = HORIZON_FACTOR):
    """Draw (profile, v, mode) for one seeded trial."""
    horizon = horizon_factor * b.tau_prime
    Tp, Ts, mode = random_schedule(b, horizon, seed)
    rng = np.random.default_rng([seed, 1])
    report = validate(Tp, Ts, b)
    if not report.passed:
        raise PreconditionError(f"generated schedule violates the bounds: {report.violations[:3]}")
    support = horizon - (b.tau_prime + b.tau_circ)
    v = signals.random_piecewise_cubic(rng, support, horizon, segments=int(rng.integers(4, 16)))
    return delay_profile(Tp, Ts), v, mode


def _one_trial(b: AsyncBounds, horizon_factor: int, seed: int) -> dict:
    p, v, mode = random_trial_input(b, seed, horizon_factor)
    gain = gain_trial(p, b, v)
    passive = passivity_trial(p, b, v)
    tau_prime, tau_star, tau_circ, tau_natural = b.as_tuple()
    return {
        "seed": seed,
        "mode": mode,
        "tau_prime": tau_prime,
        "tau_star": tau_star,
        "tau_circ": tau_circ,
        "tau_natural": tau_natural,
        "ratio": gain.ratio,
        "ratio_within": gain.components["within"],
        "ratio_carried": gain.components["carried"],
        "slack": passive.slack,
        "slack_normalized": passive.slack / gain.norm_v ** 2,
        "gain_passed": gain.passed,
        "passivity_passed": passive.passed,
    }


def trial_seeds(seed: int, trials: int) -> list:
    return [int(s) for s in np.random.default_rng(seed).integers(0, 2**31 - 1, trials)]


def run_trials(b: AsyncBounds, trials: int, seed: int, workers: int = 1,
               horizon_factor: int = HORIZON_FACTOR) -> list:
    """Run seeded gain and passivity trials; rows come back in seed order."""
    seeds = trial_seeds(seed, trials)
    task = partial(_one_trial, b, horizon_factor)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(task, seeds))
    else:
        rows = [task(s) for s in seeds]
    logger.debug("ran %d trials for bounds %s", len(rows), b.as_tuple())
    return rows


def summarize(rows) -> dict:
    if not rows:
        return {"trials": 0}
    frame = pd.DataFrame(rows)
    summary = {
        "trials": len(frame),
        "max_ratio": float(frame["ratio"].max()),
        "min_slack_normalized": float(frame["slack_normalized"].min()),
        "gain_failures": int((~frame["gain_passed"]).sum()),
        "passivity_failures": int((~frame["passivity_passed"]).sum()),
    }
    if summary["gain_failures"] or summary["passivity_failures"]:
        logger.warning("lemma trials failed: %s", summary)
    return summary


def trials_to_csv(rows, path):
    frame = pd.DataFrame(rows)
    units = {"tau_prime": "s", "tau_star": "s", "tau_circ": "s", "tau_natural": "s", "slack": "s*v^2"}
    return write_csv(frame, path, units)


def sinusoid_sweep(h: float, freqs=None, count: int = SWEEP_INPUTS, intervals: int = SWEEP_INTERVALS) -> list:
    """Gain trials on the synchronous period-h profile for near-sinusoidal inputs.

    The default frequencies span [0.5, 1.5] * pi / (2h).
    """
    if freqs is None:
        freqs = np.linspace(0.5, 1.5, count) * np.pi / (2 * h)
    horizon = intervals * h
    b = AsyncBounds(h, h, 0.0, 0.0)
    p = sawtooth_profile(EventSequence.periodic(h, horizon))
    results = []
    for freq in freqs:
        v = signals.sinusoid(freq, horizon, support=horizon - h)
        results.append(gain_trial(p, b, v))
    return results
