"""Event sequences, asynchrony bounds, and the composed delay profile.

Sample instants T' feed a depth-one buffer that is read at update instants
T*. The composition of the two sample-and-hold stages is a piecewise-linear
time-varying delay sigma'' that resets at update instants to the gap between
the update and the sample it uses.
"""

from dataclasses import dataclass
import json
import logging
from pathlib import Path

import numpy as np

from asynciqc.errors import InfeasibleModeError, PreconditionError

logger = logging.getLogger(__name__)

G_MIN_RATIO = 1.0 / 20.0
SKIP_PROBABILITY = 0.5
CHECK_TOL = 1e-12
MODES = ("jittered-delay", "down-sampling", "synchronous")


@dataclass(frozen=True, eq=False)
class EventSequence:
    """Strictly increasing event times starting at 0, all below the horizon."""

    times: np.ndarray
    horizon: float

    def __post_init__(self):
        times = np.array(self.times, dtype=float).ravel()
        if times.size == 0:
            raise PreconditionError("event sequence is empty")
        if times[0] != 0.0:
            raise PreconditionError("event sequence must start at t = 0")
        if np.any(np.diff(times) <= 0):
            raise PreconditionError("event times must be strictly increasing")
        if times[-1] >= self.horizon:
            raise PreconditionError("event times must lie below the horizon")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "horizon", float(self.horizon))

    def __len__(self):
        return self.times.size

    @classmethod
    def periodic(cls, period: float, horizon: float) -> "EventSequence":
        count = int(np.ceil(horizon / period))
        times = period * np.arange(count)
        return cls(times[times < horizon], horizon)

    def index_at(self, t):
        """Index of the latest event at or before t (right-continuous)."""
        return np.searchsorted(self.times, t, side="right") - 1


@dataclass(frozen=True)
class AsyncBounds:
    """Bounds (tau', tau*, tau_circ, tau_natural) on the two event sequences."""

    tau_prime: float
    tau_star: float
    tau_circ: float
    tau_natural: float

    def __post_init__(self):
        if not (self.tau_prime > 0 and self.tau_star > 0):
            raise PreconditionError("tau' and tau* must be positive")
        if not 0 <= self.tau_circ <= self.tau_star:
            raise PreconditionError("need 0 <= tau_circ <= tau*")
        if not 0 <= self.tau_natural <= min(self.tau_circ, self.tau_prime):
            raise PreconditionError("need 0 <= tau_natural <= min(tau_circ, tau')")

    def as_tuple(self):
        return (self.tau_prime, self.tau_star, self.tau_circ, self.tau_natural)

    @property
    def reset_interval(self) -> float:
        return self.tau_prime + self.tau_circ


def bounds_from_h_delta(h: float, delta: float) -> AsyncBounds:
    """tau' = h, tau* = (1 + delta) h, tau_circ = delta h, tau_natural = h min(delta, 1)."""
    if not h > 0:
        raise PreconditionError("h must be positive")
    if not delta >= 0:
        raise PreconditionError("delta must be non-negative")
    return AsyncBounds(h, (1.0 + delta) * h, delta * h, h * min(delta, 1.0))


@dataclass(frozen=True)
class Violation:
    constraint: str
    index: int
    value: float
    bound: float


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple
    uncovered: tuple
    checked: int

    @property
    def passed(self) -> bool:
        return not self.violations

    def by_constraint(self) -> dict:
        out = {}
        for v in self.violations:
            out.setdefault(v.constraint, []).append(v.index)
        return out


def _exceeds(value: float, bound: float) -> bool:
    return value > bound + CHECK_TOL * max(1.0, abs(bound))


def _gap_violations(seq: EventSequence, bound: float, name: str):
    out = []
    gaps = np.diff(seq.times)
    for k, g in enumerate(gaps):
        if _exceeds(g, bound):
            out.append(Violation(name, k, float(g), bound))
    tail = seq.horizon - seq.times[-1]
    if _exceeds(tail, bound):
        # the next event would fall inside the horizon but is missing
        out.append(Violation(name, len(seq) - 1, float(tail), bound))
    return out


def validate(Tp: EventSequence, Ts: EventSequence, b: AsyncBounds) -> ValidationReport:
    """Check every constraint of the four-bound admissibility test.

    phi_k is the first update at or after sample k; a sample whose phi_k
    would be needed inside the horizon but does not exist is reported as
    uncovered (a warning, not a violation).
    """
    if len(Tp) == 0 or len(Ts) == 0:
        raise PreconditionError("empty event sequence")
    horizon = min(Tp.horizon, Ts.horizon)
    violations = _gap_violations(Tp, b.tau_prime, "sample_gap")
    violations += _gap_violations(Ts, b.tau_star, "update_gap")
    uncovered = []
    checked = 0
    phi_idx = np.searchsorted(Ts.times, Tp.times, side="left")
    for k, (tk, j) in enumerate(zip(Tp.times, phi_idx)):
        if j >= len(Ts):
            if tk + b.tau_circ < horizon:
                uncovered.append(k)
            continue
        checked += 1
        phi = Ts.times[j]
        if _exceeds(phi - tk, b.tau_circ):
            violations.append(Violation("sample_to_update", k, float(phi - tk), b.tau_circ))
        latest = Tp.times[Tp.index_at(phi)]
        if _exceeds(phi - latest, b.tau_natural):
            violations.append(Violation("update_to_sample", k, float(phi - latest), b.tau_natural))
    if uncovered:
        logger.warning("no update inside the horizon for %d sample(s): %s", len(uncovered), uncovered[:10])
    return ValidationReport(tuple(violations), tuple(uncovered), checked)


def _sample_times(b: AsyncBounds, horizon: float, rng) -> np.ndarray:
    # one sample past the horizon so the last in-horizon gap is known
    g_max = min(b.tau_prime, b.tau_star)
    g_min = min(G_MIN_RATIO * b.tau_prime, g_max)
    times = [0.0]
    while times[-1] < horizon:
        times.append(times[-1] + rng.uniform(g_min, g_max))
    return np.array(times)


def _draw_delay(rng, limit: float) -> float:
    return rng.uniform(0.0, limit) if limit > 0 else 0.0


def _jittered(b: AsyncBounds, t: np.ndarray, rng) -> np.ndarray:
    updates = np.zeros_like(t)
    for k in range(1, t.size - 1):
        limit = min(b.tau_natural, t[k + 1] - t[k], b.tau_star - (t[k] - updates[k - 1]))
        updates[k] = t[k] + _draw_delay(rng, limit)
    updates[-1] = t[-1]
    return updates


def _down_sampled(b: AsyncBounds, t: np.ndarray, rng, co_timed: bool) -> np.ndarray:
    def delay(k, last):
        if co_timed or k + 1 >= t.size:
            return 0.0
        return _draw_delay(rng, min(b.tau_natural, t[k + 1] - t[k], b.tau_star - (t[k] - last)))

    updates = [0.0]
    skipped = 0
    k = 1
    while k < t.size:
        last = updates[-1]
        if k + 1 < t.size and rng.random() < SKIP_PROBABILITY:
            if t[k + 1] - last <= b.tau_star:
                candidate = t[k + 1] + delay(k + 1, last)
                if candidate - t[k] <= b.tau_circ and candidate - last <= b.tau_star:
                    updates.append(candidate)
                    skipped += 1
                    k += 2
                    continue
        updates.append(t[k] + delay(k, last))
        k += 1
    if skipped == 0:
        raise InfeasibleModeError("down-sampling could not skip any sample within the bounds")
    return np.array(updates)


def gen_admissible(b: AsyncBounds, horizon: float, mode: str, seed: int, co_timed: bool = False):
    """Generate (T', T*) satisfying the bounds b on [0, horizon).

    jittered-delay: each sample is forwarded after a random delay below
    min(tau_natural, next gap). down-sampling: a strict subset of samples is
    forwarded, either exactly at the sample (co_timed) or after a delay.
    synchronous: identical periodic sequences.
    """
    if mode not in MODES:
        raise PreconditionError(f"unknown generator mode '{mode}'")
    if horizon < 10 * b.tau_prime:
        raise PreconditionError("horizon must be at least 10 tau'")
    if mode == "synchronous":
        T = EventSequence.periodic(min(b.tau_prime, b.tau_star), horizon)
        return T, T
    if mode == "down-sampling":
        if b.tau_circ == 0:
            raise InfeasibleModeError("down-sampling needs tau_circ > 0")
        if not co_timed and b.tau_natural == 0:
            raise InfeasibleModeError(
                "tau_natural = 0 forbids updates strictly after their source sample; use co-timed updates"
            )
    rng = np.random.default_rng(seed)
    t = _sample_times(b, horizon, rng)
    if mode == "jittered-delay":
        updates = _jittered(b, t, rng)
    else:
        updates = _down_sampled(b, t, rng, co_timed)
    Tp = EventSequence(t[t < horizon], horizon)
    Ts = EventSequence(updates[updates < horizon], horizon)
    return Tp, Ts


def random_schedule(b: AsyncBounds, horizon: float, seed: int):
    """Seeded (T', T*, mode) drawn from the generator modes the bounds allow.

    Down-sampling uses co-timed updates when tau_natural = 0 and falls back
    to jittered delays when no sample could be skipped.
    """
    rng = np.random.default_rng(seed)
    modes = ["jittered-delay"] + (["down-sampling"] if b.tau_circ > 0 else [])
    mode = modes[int(rng.integers(len(modes)))]
    try:
        Tp, Ts = gen_admissible(b, horizon, mode, seed, co_timed=b.tau_natural == 0)
    except InfeasibleModeError:
        logger.debug("seed %d: down-sampling skipped nothing, using jittered delays", seed)
        mode = "jittered-delay"
        Tp, Ts = gen_admissible(b, horizon, mode, seed)
    return Tp, Ts, mode


@dataclass(frozen=True, eq=False)
class DelayProfile:
    """Composed delay sigma''(t) = t - t'_{q(t)} for a sample/update pair.

    Every update instant is kept; updates that reuse the previous source
    sample are flagged no-op and induce no reset of sigma''.
    """

    sample_times: np.ndarray
    update_times: np.ndarray
    source_index: np.ndarray
    horizon: float

    @property
    def no_op(self) -> np.ndarray:
        flags = np.zeros(self.update_times.size, dtype=bool)
        flags[1:] = self.source_index[1:] == self.source_index[:-1]
        return flags

    @property
    def psi(self) -> np.ndarray:
        return self.update_times[~self.no_op]

    @property
    def lam(self) -> np.ndarray:
        return self.sample_times[self.source_index[~self.no_op]]

    def resets(self):
        return list(zip(self.psi.tolist(), self.lam.tolist()))

    def q(self, t):
        n = np.searchsorted(self.update_times, t, side="right") - 1
        return self.source_index[n]

    def sigma(self, t):
        return np.asarray(t) - self.sample_times[self.q(t)]

    def sigma_prime(self, t):
        p = np.searchsorted(self.sample_times, t, side="right") - 1
        return np.asarray(t) - self.sample_times[p]

    def sigma_star(self, t):
        n = np.searchsorted(self.update_times, t, side="right") - 1
        return np.asarray(t) - self.update_times[n]

    def max_reset_value(self) -> float:
        return float(np.max(self.psi - self.lam))

    def max_reset_interval(self) -> float:
        edges = np.append(self.psi, self.horizon)
        return float(np.max(np.diff(edges)))


def delay_profile(Tp: EventSequence, Ts: EventSequence, horizon: float = None) -> DelayProfile:
    """Delay profile of the composition of sample-and-hold on T' then on T*."""
    if horizon is None:
        horizon = min(Tp.horizon, Ts.horizon)
    samples = Tp.times[Tp.times < horizon]
    updates = Ts.times[Ts.times < horizon]
    # a sample co-timed with an update is taken before the update reads it
    source = np.searchsorted(samples, updates, side="right") - 1
    return DelayProfile(samples, updates, source, float(horizon))


def sawtooth_profile(T: EventSequence) -> DelayProfile:
    """Synchronous sample-and-hold: the delay resets to zero at every event."""
    return delay_profile(T, T, T.horizon)


def save_sequence_text(seq: EventSequence, path):
    Path(path).write_text("".join(f"{t!r}\n" for t in seq.times.tolist()))


def load_sequence_text(path, horizon: float) -> EventSequence:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
    return EventSequence([float(ln) for ln in lines if ln and not ln.startswith("#")], horizon)


def save_schedule(path, Tp: EventSequence, Ts: EventSequence, bounds: AsyncBounds = None):
    doc = {
        "horizon": min(Tp.horizon, Ts.horizon),
        "samples": Tp.times.tolist(),
        "updates": Ts.times.tolist(),
    }
    if bounds is not None:
        doc["bounds"] = dict(zip(("tau_prime", "tau_star", "tau_circ", "tau_natural"), bounds.as_tuple()))
    Path(path).write_text(json.dumps(doc, indent=2))


def load_schedule(path):
    doc = json.loads(Path(path).read_text())
    horizon = doc["horizon"]
    bounds = AsyncBounds(**doc["bounds"]) if "bounds" in doc else None
    return EventSequence(doc["samples"], horizon), EventSequence(doc["updates"], horizon), bounds
