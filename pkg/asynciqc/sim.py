"""Event-exact simulation of the sampled-data loop u = d - H_T* S_T* H_T' S_T' F y.

Continuous states of (P, F, W) advance by the zero-order-hold matrix
exponential between nodes; nodes are the sample and update instants, the
breakpoints of d, and fill points at most ``max_step`` apart. Between nodes
every output is the cubic Hermite interpolant of the exact node values and
slopes.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
import logging

import numpy as np
import scipy.linalg

from asynciqc import signals
from asynciqc.errors import AlgebraicLoopError, PreconditionError
from asynciqc.events import AsyncBounds, EventSequence, delay_profile, random_schedule
from asynciqc.lti import StateSpace, characteristic_frequency

logger = logging.getLogger(__name__)

STEP_FACTOR = 0.1
MC_HORIZON_FACTOR = 40


class _ZohStepper:
    """exp([[A, B], [0, 0]] dt) split into (Phi, Gamma), cached per step length."""

    def __init__(self, A: np.ndarray, B: np.ndarray):
        n, m = B.shape
        self.n = n
        self.aug = np.zeros((n + m, n + m))
        self.aug[:n, :n] = A
        self.aug[:n, n:] = B
        self.cache = {}

    def __call__(self, dt: float):
        hit = self.cache.get(dt)
        if hit is None:
            E = scipy.linalg.expm(self.aug * dt)
            hit = self.cache[dt] = (E[: self.n, : self.n], E[: self.n, self.n:])
        return hit


def _fill_nodes(base: np.ndarray, max_step: float) -> np.ndarray:
    base = np.unique(base)
    pieces = [base[:1]]
    for a, b in zip(base[:-1], base[1:]):
        count = max(int(np.ceil((b - a) / max_step)), 1)
        pieces.append(np.linspace(a, b, count + 1)[1:])
    return np.concatenate(pieces)


def _hermite(nodes, y0, y1, m0, m1) -> signals.PiecewiseSignal:
    L = np.diff(nodes)
    slope = (y1 - y0) / L
    c2 = (3 * slope - 2 * m0 - m1) / L
    c3 = (m0 + m1 - 2 * slope) / L**2
    return signals.PiecewiseSignal(nodes, np.column_stack((y0, m0, c2, c3)))


def _default_step(sys: StateSpace) -> float:
    return STEP_FACTOR / characteristic_frequency(sys)


def _require_piecewise_constant(d: signals.PiecewiseSignal):
    if d.degree > 0:
        raise PreconditionError("the disturbance must be piecewise constant")


@dataclass(frozen=True, eq=False)
class LoopTrace:
    d: signals.PiecewiseSignal
    u: signals.PiecewiseSignal
    y: signals.PiecewiseSignal
    z: signals.PiecewiseSignal
    Fy: signals.PiecewiseSignal
    v: signals.PiecewiseSignal
    w: signals.PiecewiseSignal
    held: signals.PiecewiseSignal
    sample_values: np.ndarray
    update_times: np.ndarray
    applied: np.ndarray
    nodes: np.ndarray
    states: np.ndarray
    energy: dict = field(default_factory=dict)

    def state_norm_at(self, t: float) -> float:
        i = int(np.clip(np.searchsorted(self.nodes, t, side="right") - 1, 0, len(self.nodes) - 1))
        return float(np.linalg.norm(self.states[i]))


def simulate_loop(P: StateSpace, F: StateSpace, W: StateSpace, Tp: EventSequence, Ts: EventSequence,
                  d: signals.PiecewiseSignal, max_step: float = None) -> LoopTrace:
    """Simulate the loop from zero initial state over the horizon of d.

    At a sample instant the filter output C_f x_F is stored; at an update
    instant the held actuator value becomes the latest stored sample, with a
    co-timed sample stored first.
    """
    if W is None:
        W = F
    if not F.strictly_proper:
        raise AlgebraicLoopError("F must be strictly proper (algebraic loop)")
    _require_piecewise_constant(d)
    horizon = d.horizon
    if Tp.times[-1] >= horizon or Ts.times[-1] >= horizon:
        raise PreconditionError("event outside the simulation horizon")

    np_, nf, nw = P.n_states, F.n_states, W.n_states
    n = np_ + nf + nw
    sp, sf, sw = slice(0, np_), slice(np_, np_ + nf), slice(np_ + nf, n)
    A = np.zeros((n, n))
    A[sp, sp] = P.A
    A[sf, sp] = F.B @ P.C
    A[sf, sf] = F.A
    A[sw, sw] = W.A
    B = np.vstack((P.B, F.B @ P.D, W.B))
    step = _ZohStepper(A, B)

    max_step = max_step or _default_step(StateSpace(A, B, np.zeros((1, n)), 0.0))
    nodes = _fill_nodes(np.concatenate((Tp.times, Ts.times, d.breakpoints)), max_step)
    profile = delay_profile(Tp, Ts, horizon)
    sample_at = dict(zip(np.searchsorted(nodes, Tp.times).tolist(), range(len(Tp))))
    update_at = dict(zip(np.searchsorted(nodes, Ts.times).tolist(), range(len(Ts))))
    d_vals = d.evaluate(nodes[:-1])

    K = nodes.size - 1
    X = np.zeros((K + 1, n))
    u = np.zeros(K)
    held = np.zeros(K)
    samples = np.zeros(len(Tp))
    applied = np.zeros(len(Ts))
    current = 0.0
    x = np.zeros(n)
    for i in range(K):
        if i in sample_at:
            samples[sample_at[i]] = (F.C @ x[sf]).item()
        if i in update_at:
            j = update_at[i]
            current = applied[j] = samples[profile.source_index[j]]
        held[i] = current
        u[i] = d_vals[i] - current
        Phi, Gam = step(nodes[i + 1] - nodes[i])
        x = Phi @ x + Gam[:, 0] * u[i]
        X[i + 1] = x

    dX0 = X[:-1] @ A.T + np.outer(u, B[:, 0])
    dX1 = X[1:] @ A.T + np.outer(u, B[:, 0])

    def output(C, D):
        return _hermite(nodes, X[:-1] @ C + D * u, X[1:] @ C + D * u, dX0 @ C, dX1 @ C)

    Cy = np.zeros(n)
    Cy[sp] = P.C.ravel()
    Cz = np.zeros(n)
    Cz[sw] = W.C.ravel()
    Cf = np.zeros(n)
    Cf[sf] = F.C.ravel()
    y = output(Cy, float(P.D[0, 0]))
    z = output(Cz, float(W.D[0, 0]))
    Fy = output(Cf, 0.0)
    held_sig = signals.PiecewiseSignal(nodes, held[:, None])
    u_sig = signals.PiecewiseSignal(nodes, u[:, None])
    v = Fy.derivative()
    w = Fy - held_sig

    norm_d, norm_z = signals.l2_norm(d), signals.l2_norm(z)
    energy = {"norm_d": norm_d, "norm_z": norm_z, "ratio": norm_z / norm_d if norm_d > 0 else float("nan")}
    logger.debug("simulated %d nodes, %d samples, %d updates", K, len(Tp), len(Ts))
    return LoopTrace(d, u_sig, y, z, Fy, v, w, held_sig, samples, Ts.times.copy(), applied,
                     nodes, X, energy)


def simulate_lti(sys: StateSpace, d: signals.PiecewiseSignal, max_step: float = None) -> signals.PiecewiseSignal:
    """Zero-initial-state response of a SISO system to piecewise-constant d."""
    if sys.n_inputs != 1 or sys.n_outputs != 1:
        raise PreconditionError("simulate_lti handles single-input single-output systems")
    _require_piecewise_constant(d)
    n = sys.n_states
    nodes = _fill_nodes(d.breakpoints, max_step or _default_step(sys))
    u = d.evaluate(nodes[:-1])
    D = float(sys.D[0, 0])
    if n == 0:
        return signals.PiecewiseSignal(nodes, (D * u)[:, None])
    step = _ZohStepper(sys.A, sys.B)
    X = np.zeros((nodes.size, n))
    for i in range(nodes.size - 1):
        Phi, Gam = step(nodes[i + 1] - nodes[i])
        X[i + 1] = Phi @ X[i] + Gam[:, 0] * u[i]
    C = sys.C.ravel()
    b = sys.B[:, 0]
    m0 = (X[:-1] @ sys.A.T + np.outer(u, b)) @ C
    m1 = (X[1:] @ sys.A.T + np.outer(u, b)) @ C
    return _hermite(nodes, X[:-1] @ C + D * u, X[1:] @ C + D * u, m0, m1)


def empirical_gain(trace: LoopTrace) -> float:
    norm_d = trace.energy["norm_d"]
    if norm_d == 0:
        raise PreconditionError("empirical gain needs an input with non-zero energy")
    return trace.energy["norm_z"] / norm_d


def pulse(height: float, width: float, horizon: float) -> signals.PiecewiseSignal:
    if width >= horizon:
        return signals.constant(height, horizon)
    return signals.PiecewiseSignal([0.0, width, horizon], [[height], [0.0]])


def random_pulse_train(rng, support: float, horizon: float, pulses: int = 4) -> signals.PiecewiseSignal:
    edges = np.unique(np.concatenate(([0.0], rng.uniform(0.0, support, pulses - 1), [support])))
    heights = rng.normal(0.0, 1.0, edges.size - 1)
    bp = np.append(edges, horizon) if support < horizon else edges
    vals = np.append(heights, 0.0) if support < horizon else heights
    return signals.PiecewiseSignal(bp, vals[:, None])


def _mc_trial(P, F, W, b: AsyncBounds, horizon: float, support: float, seed: int) -> dict:
    Tp, Ts, mode = random_schedule(b, horizon, seed)
    d = random_pulse_train(np.random.default_rng([seed, 2]), support, horizon)
    trace = simulate_loop(P, F, W, Tp, Ts, d)
    return {"seed": seed, "mode": mode, "norm_d": trace.energy["norm_d"],
            "norm_z": trace.energy["norm_z"], "ratio": empirical_gain(trace)}


def monte_carlo_gain(P, F, W, b: AsyncBounds, trials: int, seed: int, horizon: float = None,
                     support: float = None, workers: int = 1) -> list:
    """Empirical ||z||/||d|| over seeded random schedules and pulse-train disturbances."""
    horizon = horizon or MC_HORIZON_FACTOR * b.tau_prime
    support = support or 0.25 * horizon
    seeds = [int(s) for s in np.random.default_rng(seed).integers(0, 2**31 - 1, trials)]
    task = partial(_mc_trial, P, F, W, b, horizon, support)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(task, seeds))
    return [task(s) for s in seeds]


def trace_to_csv(trace: LoopTrace, path, grid=None):
    grid = trace.nodes[:-1] if grid is None else grid
    named = {name: getattr(trace, name) for name in ("d", "u", "y", "z", "Fy", "v", "w", "held")}
    return signals.to_csv(named, grid, path)
