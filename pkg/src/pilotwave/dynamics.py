"""Adaptive trajectory integration with event location.

The stepper is Dormand-Prince 5(4) with a PI step-size controller. It runs a
batch of independent rows at once: every row carries its own time, step size
and error history, and all arithmetic is elementwise, so a row's result does
not depend on which other rows share the batch. A single trajectory is simply
a batch of one that also records its accepted steps.

Fields are called as ``field(t, y)`` with ``y`` of shape (n, dim) and must
return velocities of the same shape. In batch mode a field signals an invalid
row (node, slit) by returning non-finite values for that row.
"""
from __future__ import annotations

import contextlib
import csv
import enum
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import FieldFailure, MaxStepsExceeded, StepUnderflow, ValidationError
from .model import Configuration, Kind, PlanePairParams, TwoSlitParams
from .wavefunction import _distances

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])

_SAFETY = 0.9
_BETA = 0.04  # PI controller, Hairer's DOPRI5 defaults
_ALPHA = 0.2 - 0.75 * _BETA
_FAC_MIN, _FAC_MAX = 0.2, 10.0
EVENT_TIME_TOL = 1e-10
# Steps are accepted against TOL_SHRINK * (abs_tol + rel_tol |y|). The plane flow
# stretches phase errors by up to (a+b)^2/(a-b)^2 between slow and fast regions,
# so the per-step target must sit well below the requested endpoint accuracy.
TOL_SHRINK = 0.002
CHUNK_ROWS = 2048


@dataclass(frozen=True)
class IntegratorSettings:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    max_step: float = 0.5
    min_step: float = 1e-12
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValidationError("tolerances must be positive")
        if not (0 < self.min_step < self.max_step):
            raise ValidationError("need 0 < min_step < max_step")
        if self.max_steps <= 0:
            raise ValidationError("max_steps must be positive")


class EventKind(str, enum.Enum):
    DELTA_ZERO = "DeltaZeroCrossing"
    MIRROR_RESIDUAL = "MirrorResidualThreshold"
    BOX_EXIT = "BoxExit"


@dataclass(frozen=True)
class EventSpec:
    kind: EventKind
    threshold: float = 0.0
    terminal: bool | None = None  # None: BoxExit terminates, the others only record

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(self.kind))
        if self.threshold < 0:
            raise ValidationError("event threshold must be >= 0")

    @property
    def stops(self) -> bool:
        return self.kind is EventKind.BOX_EXIT if self.terminal is None else self.terminal


class Status(enum.IntEnum):
    RUNNING = 0
    COMPLETED = 1
    EVENT = 2
    FIELD_FAILURE = 3
    STEP_UNDERFLOW = 4
    MAX_STEPS = 5


def event_function(spec: EventSpec, kind: Kind, params=None) -> Callable:
    """Scalar-per-row event function g(y); the event fires where g changes sign."""
    kind = Kind(kind)
    if spec.kind is EventKind.DELTA_ZERO:
        if kind is not Kind.PAIR1D:
            raise ValidationError("DeltaZeroCrossing applies to Pair1D")
        return lambda y: y[..., 0] - y[..., 1]
    if spec.kind is EventKind.MIRROR_RESIDUAL:
        if kind is not Kind.PAIR3D or not isinstance(params, TwoSlitParams):
            raise ValidationError("MirrorResidualThreshold needs Pair3D and TwoSlitParams")

        def mirror(y):
            r1A, r1B, r2A, r2B = _distances(y, params)
            return spec.threshold - np.maximum(np.abs(r1A - r2B), np.abs(r1B - r2A))

        return mirror
    if kind is Kind.PAIR1D:
        if not isinstance(params, PlanePairParams):
            raise ValidationError("BoxExit for Pair1D needs PlanePairParams")
        half = params.delta_half_width
        return lambda y: half - np.abs(y[..., 0] - y[..., 1])
    if not isinstance(params, TwoSlitParams):
        raise ValidationError("BoxExit for Pair3D needs TwoSlitParams")
    lo = np.array([b[0] for b in params.domain_box] * 2)
    hi = np.array([b[1] for b in params.domain_box] * 2)
    return lambda y: np.minimum(y - lo, hi - y).min(axis=-1)


# -- stepping kernel ---------------------------------------------------------------


def _dopri_step(rhs, tau, y, h, k1):
    """One DP5(4) step for every row; h has shape (n,)."""
    hc = h[:, None]
    ks = [k1]
    for i in range(1, 7):
        yi = y + hc * sum(a * ks[j] for j, a in enumerate(_A[i]) if a != 0.0)
        ks.append(rhs(tau + _C[i] * h, yi))
    y_new = y + hc * sum(b * ks[j] for j, b in enumerate(_B) if b != 0.0)
    err = hc * sum(e * ks[j] for j, e in enumerate(_E) if e != 0.0)
    return y_new, err, ks[6]


def _error_norm(err, y, y_new, settings: IntegratorSettings):
    scale = TOL_SHRINK * (settings.abs_tol + settings.rel_tol * np.maximum(np.abs(y), np.abs(y_new)))
    return np.sqrt(np.mean((err / scale) ** 2, axis=-1))


def _initial_step(rhs, tau, y, k1, span, settings: IntegratorSettings):
    scale = TOL_SHRINK * (settings.abs_tol + settings.rel_tol * np.abs(y))
    d0 = np.sqrt(np.mean((y / scale) ** 2, axis=-1))
    d1 = np.sqrt(np.mean((k1 / scale) ** 2, axis=-1))
    with np.errstate(over="ignore"):
        h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
    h0 = np.minimum(h0, span)
    k2 = rhs(tau + h0, y + h0[:, None] * k1)
    d2 = np.sqrt(np.mean(((k2 - k1) / scale) ** 2, axis=-1)) / h0
    dmax = np.maximum(d1, d2)
    h1 = np.where(dmax <= 1e-15, np.maximum(1e-6, h0 * 1e-3), (0.01 / np.maximum(dmax, 1e-300)) ** 0.2)
    h = np.minimum(np.minimum(100 * h0, h1), settings.max_step)
    h = np.where(np.isfinite(h), h, settings.max_step)
    return np.maximum(h, settings.min_step)


@dataclass
class BatchResult:
    """Final state of every row of a batch integration (physical times)."""

    t: np.ndarray
    y: np.ndarray
    status: np.ndarray
    accepted: np.ndarray
    rejected: np.ndarray
    max_error: np.ndarray
    events: list  # per row: list of (event index, t, y)
    records: list | None = None  # per row: list of (t, y, v) when recording


def _solve(field, t0, y0, span, settings, event_fns=(), event_stops=(), direction=None, record=False) -> BatchResult:
    y = np.array(y0, dtype=float, copy=True)
    n, _ = y.shape
    s = np.ones(n) if direction is None else np.asarray(direction, dtype=float)
    span = float(span)

    def rhs_rows(rows):
        sr = s[rows][:, None]
        return lambda tau, yy: sr * field(t0 + sr[:, 0] * tau, yy)

    tau = np.zeros(n)
    status = np.full(n, Status.RUNNING, dtype=int)
    accepted = np.zeros(n, dtype=int)
    rejected = np.zeros(n, dtype=int)
    max_err = np.zeros(n)
    err_prev = np.ones(n)
    last_rej = np.zeros(n, dtype=bool)
    hits = [[] for _ in range(n)]
    records = [[] for _ in range(n)] if record else None

    all_rows = np.arange(n)
    k1 = rhs_rows(all_rows)(tau, y)
    bad0 = ~np.all(np.isfinite(k1), axis=-1)
    status[bad0] = Status.FIELD_FAILURE
    if span == 0.0:
        status[~bad0] = Status.COMPLETED
    good = np.flatnonzero(status == Status.RUNNING)
    h = np.full(n, settings.max_step)
    if good.size:
        h[good] = _initial_step(rhs_rows(good), tau[good], y[good], k1[good], span, settings)
    g_old = [fn(y) for fn in event_fns]
    if record:
        for i in np.flatnonzero(~bad0):
            records[i].append((t0, y[i].copy(), s[i] * k1[i], None))

    while True:
        rows = np.flatnonzero(status == Status.RUNNING)
        if rows.size == 0:
            break
        remaining = span - tau[rows]
        hh = np.minimum(h[rows], remaining)
        final = hh >= remaining
        rhs = rhs_rows(rows)
        with np.errstate(all="ignore"):
            y_new, err, k7 = _dopri_step(rhs, tau[rows], y[rows], hh, k1[rows])
            finite = np.all(np.isfinite(y_new), axis=-1) & np.all(np.isfinite(k7), axis=-1) & np.all(np.isfinite(err), axis=-1)
            enorm = np.where(finite, _error_norm(err, y[rows], y_new, settings), np.inf)

        ok = finite & (enorm <= 1.0)
        # field failures: shrink toward min_step, then give up on the row
        fail = rows[~finite]
        if fail.size:
            rejected[fail] += 1
            h[fail] = 0.5 * hh[~finite]
            status[fail[h[fail] < settings.min_step]] = Status.FIELD_FAILURE
        rej_mask = finite & ~ok
        rej = rows[rej_mask]
        if rej.size:
            rejected[rej] += 1
            fac = np.maximum(_FAC_MIN, _SAFETY * enorm[rej_mask] ** -0.2)
            h[rej] = hh[rej_mask] * fac
            last_rej[rej] = True
            status[rej[h[rej] < settings.min_step]] = Status.STEP_UNDERFLOW

        acc = rows[ok]
        if acc.size:
            ha = hh[ok]
            ya_old = y[acc]
            k1_old = k1[acc]
            tau_old = tau[acc]
            yn = y_new[ok]
            k7a = k7[ok]
            stop_at = np.full(acc.size, np.inf)  # step offset where a terminal event fires
            stop_state = np.array(yn, copy=True)
            found = []
            for e, fn in enumerate(event_fns):
                g0 = g_old[e][acc]
                g1 = fn(yn)
                cross = (g0 * g1 < 0) | ((g1 == 0) & (g0 != 0))
                if np.any(cross):
                    ci = np.flatnonzero(cross)
                    theta, ystar = _locate(rhs_rows(acc[ci]), fn, tau_old[ci], ya_old[ci], k1_old[ci], ha[ci], g0[ci])
                    found.append((e, ci, theta, ystar))
                    if event_stops[e]:
                        better = theta < stop_at[ci]
                        stop_at[ci[better]] = theta[better]
                        stop_state[ci[better]] = ystar[better]
                g_old[e][acc] = g1
            step_hits = {}
            for e, ci, theta, ystar in found:
                for j, th, ys in zip(ci, theta, ystar):
                    if th <= stop_at[j]:
                        row = acc[j]
                        step_hits.setdefault(j, []).append((th, e, t0 + s[row] * (tau_old[j] + th), ys))

            stopped = np.isfinite(stop_at)
            fa = final[ok]
            new_tau = np.where(fa, span, tau_old + ha)
            tau[acc] = np.where(stopped, tau_old + np.where(stopped, stop_at, 0.0), new_tau)
            y[acc] = np.where(stopped[:, None], stop_state, yn)
            k1[acc] = k7a
            accepted[acc] += 1
            max_err[acc] = np.maximum(max_err[acc], enorm[ok])

            fac = _SAFETY * np.maximum(enorm[ok], 1e-10) ** -_ALPHA * err_prev[acc] ** _BETA
            fac = np.clip(fac, _FAC_MIN, _FAC_MAX)
            fac = np.where(last_rej[acc], np.minimum(fac, 1.0), fac)
            h[acc] = np.minimum(ha * fac, settings.max_step)
            err_prev[acc] = np.maximum(enorm[ok], 1e-4)
            last_rej[acc] = False
            status[acc[stopped]] = Status.EVENT
            status[acc[~stopped & fa]] = Status.COMPLETED

            for j, evs in step_hits.items():
                row = acc[j]
                for th, e, t_ev, ys in sorted(evs, key=lambda item: item[0]):
                    hits[row].append((e, t_ev, ys))
                    if record and not (stopped[j] and th == stop_at[j]):
                        records[row].append((t_ev, ys, field(np.array([t_ev]), ys[None, :])[0], e))
            if record:
                for j, row in enumerate(acc):
                    if stopped[j]:
                        e_stop = next(e for th, e, _, _ in step_hits[j] if th == stop_at[j])
                        t_end = t0 + s[row] * tau[row]
                        records[row].append((t_end, y[row].copy(), field(np.array([t_end]), y[row][None, :])[0], e_stop))
                    else:
                        records[row].append((t0 + s[row] * tau[row], y[row].copy(), s[row] * k7a[j], None))
        over = (accepted + rejected >= settings.max_steps) & (status == Status.RUNNING)
        status[over] = Status.MAX_STEPS

    t_phys = t0 + s * tau
    return BatchResult(t_phys, y, status, accepted, rejected, max_err, hits, records)


def _locate(rhs, fn, tau0, y0, k10, h, g0):
    """Bisect the step offset at which ``fn`` changes sign, using exact sub-steps from the step start."""
    lo = np.zeros_like(h)
    hi = np.array(h, copy=True)
    while np.any(hi - lo > EVENT_TIME_TOL):
        mid = 0.5 * (lo + hi)
        ym = _dopri_step(rhs, tau0, y0, mid, k10)[0]
        same = fn(ym) * g0 > 0
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return hi, _dopri_step(rhs, tau0, y0, hi, k10)[0]


# -- public API --------------------------------------------------------------------


@dataclass(frozen=True)
class EventRecord:
    kind: EventKind
    time: float
    config: Configuration


@dataclass
class Trajectory:
    """Accepted steps of one integration, in integration order.

    Times are strictly monotone in the direction of integration (decreasing for
    backward runs). Event states are included as samples and flagged in
    ``sample_events``.
    """

    kind: Kind
    times: np.ndarray
    coords: np.ndarray
    velocities: np.ndarray
    sample_events: list
    events: list
    accepted: int
    rejected: int
    max_error: float
    termination: str

    @property
    def samples(self) -> list[Configuration]:
        return [Configuration(self.kind, tuple(c), t) for t, c in zip(self.times, self.coords)]

    @property
    def initial(self) -> Configuration:
        return Configuration(self.kind, tuple(self.coords[0]), self.times[0])

    @property
    def final(self) -> Configuration:
        return Configuration(self.kind, tuple(self.coords[-1]), self.times[-1])

    @property
    def step_stats(self) -> dict:
        return {"accepted": self.accepted, "rejected": self.rejected, "max_error": self.max_error}

    def interpolate(self, t) -> np.ndarray:
        """Cubic Hermite dense output between recorded samples."""
        t = float(t)
        times = self.times if self.times[-1] >= self.times[0] else self.times[::-1]
        coords = self.coords if self.times[-1] >= self.times[0] else self.coords[::-1]
        vel = self.velocities if self.times[-1] >= self.times[0] else self.velocities[::-1]
        if not times[0] <= t <= times[-1]:
            raise ValidationError(f"t={t} outside the trajectory's time range")
        i = min(max(int(np.searchsorted(times, t)) - 1, 0), len(times) - 2)
        h = times[i + 1] - times[i]
        if h == 0:
            return coords[i].copy()
        u = (t - times[i]) / h
        h00 = 2 * u**3 - 3 * u**2 + 1
        h10 = u**3 - 2 * u**2 + u
        h01 = -2 * u**3 + 3 * u**2
        h11 = u**3 - u**2
        return h00 * coords[i] + h10 * h * vel[i] + h01 * coords[i + 1] + h11 * h * vel[i + 1]

    def to_csv(self, target) -> None:
        """Write samples to a path or an open text file."""
        names = ["x1", "x2"] if self.kind is Kind.PAIR1D else ["x1", "y1", "z1", "x2", "y2", "z2"]
        with text_sink(target) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *names, "event"])
            for t, c, ev in zip(self.times, self.coords, self.sample_events):
                w.writerow([fmt(t), *(fmt(v) for v in c), ev or ""])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "termination": self.termination,
            "step_stats": self.step_stats,
            "times": [float(t) for t in self.times],
            "coords": [[float(v) for v in c] for c in self.coords],
            "sample_events": self.sample_events,
            "events": [{"kind": e.kind.value, "time": e.time, "coords": list(e.config.coords)} for e in self.events],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


@contextlib.contextmanager
def text_sink(target):
    if hasattr(target, "write"):
        yield target
    else:
        with open(target, "w", newline="") as fh:
            yield fh


def fmt(x) -> str:
    """17 significant digits; round-trips doubles."""
    return format(float(x), ".17g")


def _event_setup(events: Sequence[EventSpec], kind: Kind, params):
    specs = [e if isinstance(e, EventSpec) else EventSpec(**e) for e in events]
    return specs, [event_function(e, kind, params) for e in specs], [e.stops for e in specs]


def integrate_trajectory(
    initial: Configuration,
    field: Callable,
    t_span: tuple[float, float],
    settings: IntegratorSettings | None = None,
    events: Sequence[EventSpec] = (),
    params=None,
) -> Trajectory:
    """Integrate one configuration under ``field`` from t_span[0] to t_span[1].

    Backward integration (t_span[1] < t_span[0]) runs the negated field. The run
    ends early on a terminal event or when the field keeps failing (node or
    slit) down to ``min_step``; the reason is stored in ``termination``.
    ``params`` supplies the box and slit geometry for events that need it.
    """
    settings = settings or IntegratorSettings()
    t0, t1 = (float(v) for v in t_span)
    specs, fns, stops = _event_setup(events, initial.kind, params)
    direction = 1.0 if t1 >= t0 else -1.0
    res = _solve(field, t0, initial.array[None, :], abs(t1 - t0), settings, fns, stops, np.array([direction]), record=True)
    status = Status(int(res.status[0]))
    if status is Status.FIELD_FAILURE and res.accepted[0] == 0 and len(res.records[0]) == 0:
        raise FieldFailure("field is undefined at the initial configuration")
    if status is Status.STEP_UNDERFLOW:
        raise StepUnderflow(f"step size fell below min_step={settings.min_step} at t={res.t[0]}")
    if status is Status.MAX_STEPS:
        raise MaxStepsExceeded(f"more than {settings.max_steps} steps")
    recs = res.records[0]
    if not recs:
        raise FieldFailure("field is undefined at the initial configuration")
    termination = {
        Status.COMPLETED: "completed",
        Status.FIELD_FAILURE: "field_failure",
    }.get(status)
    if status is Status.EVENT:
        termination = f"event:{specs[res.events[0][-1][0]].kind.value}"
    ev = [EventRecord(specs[e].kind, float(t), Configuration(initial.kind, tuple(ys), t)) for e, t, ys in res.events[0]]
    return Trajectory(
        kind=initial.kind,
        times=np.array([r[0] for r in recs], dtype=float),
        coords=np.array([r[1] for r in recs]),
        velocities=np.array([r[2] for r in recs]),
        sample_events=[None if r[3] is None else specs[r[3]].kind.value for r in recs],
        events=ev,
        accepted=int(res.accepted[0]),
        rejected=int(res.rejected[0]),
        max_error=float(res.max_error[0]),
        termination=termination,
    )


def integrate_many(
    y0,
    field: Callable,
    t0: float,
    span: float,
    settings: IntegratorSettings | None = None,
    events: Sequence[EventSpec] = (),
    kind: Kind = Kind.PAIR1D,
    params=None,
    direction=None,
    jobs: int = 1,
) -> BatchResult:
    """Integrate many independent rows for ``span`` time units each (no sample recording).

    ``direction`` (+1/-1 per row) selects forward or backward time. Rows are cut
    into fixed blocks of ``CHUNK_ROWS`` so results do not depend on ``jobs``.
    """
    settings = settings or IntegratorSettings()
    y0 = np.atleast_2d(np.asarray(y0, dtype=float))
    n = y0.shape[0]
    direction = np.ones(n) if direction is None else np.broadcast_to(np.asarray(direction, dtype=float), (n,)).copy()
    _, fns, stops = _event_setup(events, kind, params)
    blocks = [slice(i, min(i + CHUNK_ROWS, n)) for i in range(0, n, CHUNK_ROWS)]

    def run(sl):
        return _solve(field, t0, y0[sl], span, settings, fns, stops, direction[sl])

    if jobs > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(sl) for sl in blocks]
    if not parts:
        empty = np.zeros(0)
        return BatchResult(empty, y0.copy(), empty.astype(int), empty.astype(int), empty.astype(int), empty, [])
    return BatchResult(
        t=np.concatenate([p.t for p in parts]),
        y=np.concatenate([p.y for p in parts]),
        status=np.concatenate([p.status for p in parts]),
        accepted=np.concatenate([p.accepted for p in parts]),
        rejected=np.concatenate([p.rejected for p in parts]),
        max_error=np.concatenate([p.max_error for p in parts]),
        events=[ev for p in parts for ev in p.events],
    )


def conserved_residual(traj: Trajectory, first_integral: Callable[[Configuration], float]) -> float:
    """Largest |F(sample) - F(first sample)| along the trajectory."""
    samples = traj.samples
    if not samples:
        raise ValidationError("empty trajectory")
    ref = first_integral(samples[0])
    return max(abs(first_integral(c) - ref) for c in samples)
