"""Exact piecewise-polynomial signals and the sample/hold/delay operators.

A signal is a right-continuous piecewise polynomial on [0, horizon) with
segment degree at most 4, stored in local coordinates t - t_left with
ascending powers. Products of two signals have degree at most 8, so inner
products and norms are closed-form.
"""

from dataclasses import dataclass, field
import logging
from math import comb

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline

from asynciqc.errors import DegreeOverflowError, PreconditionError
from asynciqc.tables import write_csv

logger = logging.getLogger(__name__)

DEGREE_CAP = 4
WIDTH = DEGREE_CAP + 1
MERGE_TOL = 1e-12
POINTS_PER_PERIOD = 40
# cubic spline error bound per unit amplitude at 40 points per period
SINUSOID_ERROR = 5 * (2 * np.pi / POINTS_PER_PERIOD) ** 4 / 384


@dataclass(frozen=True, eq=False)
class PiecewiseSignal:
    breakpoints: np.ndarray
    coeffs: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        bp = np.array(self.breakpoints, dtype=float).ravel()
        c = np.atleast_2d(np.array(self.coeffs, dtype=float))
        if bp.size < 2 or bp[0] != 0.0 or np.any(np.diff(bp) <= 0):
            raise PreconditionError("breakpoints must increase strictly from 0")
        if c.shape[0] != bp.size - 1:
            raise PreconditionError("one coefficient row per segment is required")
        if c.shape[1] > WIDTH:
            if np.any(c[:, WIDTH:]):
                raise DegreeOverflowError(f"segment degree exceeds {DEGREE_CAP}")
            c = c[:, :WIDTH]
        if c.shape[1] < WIDTH:
            c = np.hstack((c, np.zeros((c.shape[0], WIDTH - c.shape[1]))))
        bp.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "coeffs", c)

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def degree(self) -> int:
        nz = np.flatnonzero(np.any(self.coeffs != 0, axis=0))
        return int(nz[-1]) if nz.size else 0

    def evaluate(self, t):
        t_arr = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.breakpoints, t_arr, side="right") - 1, 0, self.coeffs.shape[0] - 1)
        x = t_arr - self.breakpoints[idx]
        c = self.coeffs[idx]
        val = c[..., -1]
        for k in range(WIDTH - 2, -1, -1):
            val = val * x + c[..., k]
        return float(val) if np.ndim(t) == 0 else val

    __call__ = evaluate

    def refine(self, breakpoints) -> "PiecewiseSignal":
        """Re-express on a breakpoint superset sharing the same horizon."""
        bp = np.asarray(breakpoints, dtype=float)
        mid = 0.5 * (bp[:-1] + bp[1:])
        parent = np.clip(np.searchsorted(self.breakpoints, mid, side="right") - 1, 0, self.coeffs.shape[0] - 1)
        shift = bp[:-1] - self.breakpoints[parent]
        return PiecewiseSignal(bp, _taylor_shift(self.coeffs[parent], shift))

    def __add__(self, other):
        if np.isscalar(other):
            other = constant(other, self.horizon)
        bp = merge_breakpoints(self, other)
        return PiecewiseSignal(bp, self.refine(bp).coeffs + other.refine(bp).coeffs)

    __radd__ = __add__

    def __neg__(self):
        return PiecewiseSignal(self.breakpoints, -self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return PiecewiseSignal(self.breakpoints, scalar * self.coeffs)

    __rmul__ = __mul__

    def truncate(self, tau: float) -> "PiecewiseSignal":
        """P_tau f: equal to f on [0, tau], zero afterwards."""
        if tau >= self.horizon:
            return self
        if tau <= 0:
            return constant(0.0, self.horizon)
        bp = merge_breakpoints(self, np.array([0.0, tau, self.horizon]))
        out = self.refine(bp).coeffs.copy()
        out[bp[:-1] >= tau] = 0.0
        return PiecewiseSignal(bp, out)

    def derivative(self) -> "PiecewiseSignal":
        powers = np.arange(1, WIDTH)
        return PiecewiseSignal(self.breakpoints, self.coeffs[:, 1:] * powers)

    def support_end(self) -> float:
        nz = np.flatnonzero(np.any(self.coeffs != 0, axis=1))
        return float(self.breakpoints[nz[-1] + 1]) if nz.size else 0.0


def _taylor_shift(coeffs: np.ndarray, shift: np.ndarray) -> np.ndarray:
    # p(x + s) for each row, ascending powers
    out = np.zeros_like(coeffs)
    K = coeffs.shape[1]
    for m in range(K):
        for k in range(m, K):
            out[:, m] += comb(k, m) * shift ** (k - m) * coeffs[:, k]
    return out


def _check_horizons(h1: float, h2: float):
    if abs(h1 - h2) > MERGE_TOL * max(1.0, abs(h1)):
        raise PreconditionError(f"signals have different horizons ({h1} vs {h2})")


def merge_breakpoints(*items) -> np.ndarray:
    """Union of breakpoint sets; points within 1e-12 of each other collapse."""
    arrays = [it.breakpoints if isinstance(it, PiecewiseSignal) else np.asarray(it, dtype=float) for it in items]
    for a in arrays[1:]:
        _check_horizons(arrays[0][-1], a[-1])
    merged = np.unique(np.concatenate(arrays))
    tol = MERGE_TOL * max(1.0, merged[-1])
    keep = np.concatenate(([True], np.diff(merged) > tol))
    merged = merged[keep]
    merged[-1] = arrays[0][-1]
    return merged


def constant(c: float, horizon: float) -> PiecewiseSignal:
    return PiecewiseSignal([0.0, horizon], [[c]])


def ramp(horizon: float, slope: float = 1.0) -> PiecewiseSignal:
    return PiecewiseSignal([0.0, horizon], [[0.0, slope]])


def from_polynomials(breakpoints, coeffs) -> PiecewiseSignal:
    return PiecewiseSignal(breakpoints, coeffs)


def sinusoid(freq: float, horizon: float, amplitude: float = 1.0, phase: float = 0.0,
             support: float = None, points_per_period: int = POINTS_PER_PERIOD) -> PiecewiseSignal:
    """Piecewise-cubic spline interpolant of amplitude*sin(freq t + phase) on [0, support].

    The signal is zero after the support; the interpolation error bound is
    kept in ``meta['interp_error']``.
    """
    support = horizon if support is None else min(support, horizon)
    period = 2 * np.pi / freq
    count = max(int(np.ceil(support / period * points_per_period)), 4)
    grid = np.linspace(0.0, support, count + 1)
    spline = CubicSpline(grid, amplitude * np.sin(freq * grid + phase))
    coeffs = spline.c[::-1].T
    bp = grid
    if support < horizon:
        bp = np.append(grid, horizon)
        coeffs = np.vstack((coeffs, np.zeros((1, coeffs.shape[1]))))
    meta = {"interp_error": SINUSOID_ERROR * abs(amplitude), "freq": freq}
    return PiecewiseSignal(bp, coeffs, meta)


def random_piecewise_cubic(rng, support: float, horizon: float, segments: int = 8, scale: float = 1.0) -> PiecewiseSignal:
    """Random piecewise cubic on [0, support], zero on [support, horizon)."""
    inner = np.sort(rng.uniform(0.0, support, segments - 1))
    bp = np.unique(np.concatenate(([0.0], inner, [support])))
    coeffs = rng.normal(0.0, scale, (bp.size - 1, 4))
    coeffs[:, 1:] /= np.maximum(np.diff(bp), 1e-3)[:, None] ** np.arange(1, 4)
    if support < horizon:
        bp = np.append(bp, horizon)
        coeffs = np.vstack((coeffs, np.zeros((1, 4))))
    return PiecewiseSignal(bp, coeffs)


def sample(T, f: PiecewiseSignal) -> np.ndarray:
    """Values f(t_k) under right-continuous evaluation."""
    if T.times[-1] > f.horizon:
        raise PreconditionError("sample instant beyond the signal horizon")
    return f.evaluate(T.times)


def hold(T, vals, horizon: float) -> PiecewiseSignal:
    """Zero-order hold: vals[k] on [t_k, t_{k+1})."""
    vals = np.asarray(vals, dtype=float)
    if vals.size != len(T.times):
        raise PreconditionError("one value per event is required")
    if T.times[-1] >= horizon:
        raise PreconditionError("hold events must lie below the horizon")
    return PiecewiseSignal(np.append(T.times, horizon), vals[:, None])


def _hold_at(times: np.ndarray, vals: np.ndarray, horizon: float) -> PiecewiseSignal:
    return PiecewiseSignal(np.append(times, horizon), np.asarray(vals, dtype=float)[:, None])


def integrate(f: PiecewiseSignal) -> PiecewiseSignal:
    """Antiderivative vanishing at t = 0."""
    if f.degree > DEGREE_CAP - 1:
        raise DegreeOverflowError("integration needs segment degree <= 3")
    powers = np.arange(1, WIDTH)
    anti = np.zeros_like(f.coeffs)
    anti[:, 1:] = f.coeffs[:, :-1] / powers
    seg = (anti * f.lengths[:, None] ** np.arange(WIDTH)).sum(axis=1)
    anti[:, 0] = np.concatenate(([0.0], np.cumsum(seg)[:-1]))
    return PiecewiseSignal(f.breakpoints, anti)


def apply_profile(p, f: PiecewiseSignal) -> PiecewiseSignal:
    """R_sigma'' f: on each reset interval the value of f at its source sample."""
    _check_horizons(p.horizon, f.horizon)
    return _hold_at(p.psi, f.evaluate(p.lam), f.horizon)


def delta_apply(p, v: PiecewiseSignal) -> PiecewiseSignal:
    """w(t) = integral of v from the active source sample t'_{q(t)} to t."""
    _check_horizons(p.horizon, v.horizon)
    V = integrate(v)
    return V - apply_profile(p, V)


def delta_split(p, v: PiecewiseSignal):
    """Split Delta v into the within-interval part and the held reset part.

    The first is the integral of v from the latest reset psi_l to t, the
    second the integral of v from lambda_l to psi_l held on [psi_l, psi_{l+1}).
    """
    _check_horizons(p.horizon, v.horizon)
    V = integrate(v)
    at_psi = V.evaluate(p.psi)
    within = V - _hold_at(p.psi, at_psi, v.horizon)
    carried = _hold_at(p.psi, at_psi - V.evaluate(p.lam), v.horizon)
    return within, carried


def _product(f: PiecewiseSignal, g: PiecewiseSignal):
    bp = merge_breakpoints(f, g)
    a = f.refine(bp).coeffs
    b = g.refine(bp).coeffs
    out = np.zeros((a.shape[0], 2 * WIDTH - 1))
    for i in range(WIDTH):
        for j in range(WIDTH):
            out[:, i + j] += a[:, i] * b[:, j]
    return bp, out


def l2_inner(f: PiecewiseSignal, g: PiecewiseSignal) -> float:
    """Exact integral of f g over [0, horizon]."""
    if f.degree + g.degree > 2 * DEGREE_CAP:
        raise DegreeOverflowError("product degree exceeds 8")
    bp, c = _product(f, g)
    powers = np.arange(c.shape[1])
    L = np.diff(bp)[:, None]
    return float(np.sum(c * L ** (powers + 1) / (powers + 1)))


def l2_norm(f: PiecewiseSignal) -> float:
    return float(np.sqrt(max(l2_inner(f, f), 0.0)))


def to_csv(signals: dict, grid, path):
    """Tabulate signals on a caller-supplied time grid for plotting."""
    grid = np.asarray(grid, dtype=float)
    frame = pd.DataFrame({"time": grid})
    for name, sig in signals.items():
        frame[name] = sig.evaluate(grid)
    write_csv(frame, path, {"time": "s"})
    return frame
