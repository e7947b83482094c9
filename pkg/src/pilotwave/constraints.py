"""First integrals and position constraints.

Plane pair: the relative coordinate D = x1 - x2 obeys an autonomous 1-D flow,
so G(D) - t with G' = 1/(dD/dt) is a first integral. Two candidate forms are
kept side by side:

* ``two-term`` D/(2(a^2-b^2)) + (hbar/p)(ab/(a^2-b^2)) sin(2pD/hbar) - (2p/m) t
* ``derived`` G(D) - t, G obtained by quadrature of the reciprocal relative velocity

and every statement about roots, uniqueness or conservation is evaluated under
both. Two-slit pair: the mirror constraint r1A = r2B, r1B = r2A.
"""
from __future__ import annotations

import csv
import enum
import functools
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import fft, optimize

from .dynamics import EventKind, EventSpec, IntegratorSettings, Status, fmt, integrate_many, integrate_trajectory, text_sink
from .errors import FieldFailure, GridTooCoarse, NoCrossingInBox, QuadratureFailure, ValidationError
from .guidance import _plane_v1, plane_field, relative_speed_bounds, twoslit_field
from .model import Configuration, Kind, PlanePairParams, TwoSlitParams, check_plane_box, mirror_partner, validate_plane_params
from .wavefunction import _distances

MIN_SAMPLES_PER_PERIOD = 64


class FirstIntegralForm(str, enum.Enum):
    TWO_TERM = "PaperEq11"
    DERIVED = "DerivedQuadrature"


# -- the two first integrals -------------------------------------------------------


def two_term_lhs(delta, params: PlanePairParams):
    a, b = params.a, params.b
    d = np.asarray(delta, dtype=float)
    diff = a * a - b * b
    return d / (2.0 * diff) + (params.hbar / params.p) * (a * b / diff) * np.sin(2.0 * params.p * d / params.hbar)


def first_integral_two_term(delta, t, params: PlanePairParams):
    """Left side minus (2p/m) t; equals the integration constant along a trajectory if the form is exact."""
    check_plane_box(delta, params)
    return two_term_lhs(delta, params) - 2.0 * params.p / params.mass * t


class _ChebG:
    """G(D) = int_0^D dD'/v_rel(D'), tabulated on one period and continued periodically."""

    def __init__(self, params: PlanePairParams, tol: float = 1e-13, max_degree: int = 1 << 15):
        self.period = params.period
        half = 0.5 * self.period
        gx, gw = np.polynomial.legendre.leggauss(16)

        def integrand(d):
            return 0.5 / _plane_v1(d, params)

        def cumulative(x):
            # integral from 0 to each x, panel by panel between sorted abscissae
            pts = np.unique(np.concatenate([[0.0], x]))
            mid = 0.5 * (pts[1:] + pts[:-1])
            hw = 0.5 * (pts[1:] - pts[:-1])
            panels = (integrand(mid[:, None] + hw[:, None] * gx) * gw).sum(axis=1) * hw
            cum = np.concatenate([[0.0], np.cumsum(panels)])
            cum -= cum[np.searchsorted(pts, 0.0)]
            return cum[np.searchsorted(pts, x)]

        degree = 64
        while True:
            nodes = half * np.cos(math.pi * np.arange(degree + 1) / degree)
            vals = cumulative(nodes)
            coef = fft.dct(vals, type=1) / degree
            coef[0] *= 0.5
            coef[-1] *= 0.5
            probe = half * np.cos(math.pi * (np.arange(degree) + 0.5) / degree)
            err = np.max(np.abs(np.polynomial.chebyshev.chebval(probe / half, coef) - cumulative(probe)))
            scale = abs(vals[0] - vals[-1])
            if err <= tol * scale:
                break
            degree *= 2
            if degree > max_degree:
                raise QuadratureFailure(f"Chebyshev table for G did not converge (err {err:.3g})")
        self.coef = coef
        self.half = half
        self.per_period = float(np.polynomial.chebyshev.chebval(1.0, coef) - np.polynomial.chebyshev.chebval(-1.0, coef))
        self.degree = degree

    def __call__(self, delta):
        d = np.asarray(delta, dtype=float)
        n = np.round(d / self.period)
        rem = d - n * self.period
        return n * self.per_period + np.polynomial.chebyshev.chebval(rem / self.half, self.coef)


@functools.lru_cache(maxsize=32)
def _g_table(params: PlanePairParams) -> _ChebG:
    return _ChebG(params)


def g_integral(delta, params: PlanePairParams):
    """G(D) = int_0^D dD'/(dD/dt); strictly monotone, sign of a^2 - b^2."""
    return _g_table(params)(delta)


def first_integral_derived(delta, t, params: PlanePairParams):
    check_plane_box(delta, params)
    return g_integral(delta, params) - t


def _form_fn(form: FirstIntegralForm):
    return {FirstIntegralForm.TWO_TERM: first_integral_two_term, FirstIntegralForm.DERIVED: first_integral_derived}[FirstIntegralForm(form)]


# -- root counting -----------------------------------------------------------------


@dataclass(frozen=True)
class RootReport:
    form: str
    roots: tuple
    bracket_count: int
    monotone: bool
    threshold_value: float
    samples_per_period: int

    @property
    def count(self) -> int:
        return len(self.roots)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["roots"] = list(self.roots)
        d["count"] = self.count
        return d


def count_roots(form, t: float, t0: float, params: PlanePairParams, samples_per_period: int = 4096) -> RootReport:
    """Roots in D of form(D, t) - form(0, t0) over the open normalization box.

    Sign changes on a uniform grid are bracketed and refined with Brent's method
    to 1e-12; exact grid zeros count as roots. ``monotone`` reports whether the
    sampled function never changes its direction of variation.
    """
    if not (math.isfinite(t) and math.isfinite(t0)):
        raise ValidationError("t and t0 must be finite")
    if samples_per_period < MIN_SAMPLES_PER_PERIOD:
        raise GridTooCoarse(f"need >= {MIN_SAMPLES_PER_PERIOD} samples per density period")
    form = FirstIntegralForm(form)
    fn = _form_fn(form)
    half_count = samples_per_period * (2 * params.box_n + 1) // 2
    step = params.period / samples_per_period
    grid = step * np.arange(-half_count + 1, half_count)
    grid = grid[np.abs(grid) < params.delta_half_width]
    ref = float(fn(0.0, t0, params))
    F = fn(grid, t, params) - ref

    roots = list(grid[F == 0.0])
    brackets = np.flatnonzero(F[:-1] * F[1:] < 0)
    for i in brackets:
        roots.append(optimize.brentq(lambda d: float(fn(d, t, params)) - ref, grid[i], grid[i + 1], xtol=1e-12, rtol=4 * np.finfo(float).eps))
    roots.sort()
    sep = 1e-9 * params.box_length
    deduped = []
    for r in roots:
        if not deduped or r - deduped[-1] > sep:
            deduped.append(float(r))
    dF = np.diff(F)
    monotone = bool(np.all(dF > 0) or np.all(dF < 0))
    return RootReport(form.value, tuple(deduped), int(brackets.size), monotone, 4 * params.a * params.b, samples_per_period)


def uniqueness_report(params: PlanePairParams, t0: float = 0.0, samples_per_period: int = 4096) -> dict:
    """Root counts at t = t0 under both forms, checked against the 4ab < 1 criterion.

    ``threshold_sufficient`` tests the stated implication (4ab < 1 => unique);
    ``threshold_exact`` tests whether 4ab < 1 also predicts non-uniqueness.
    """
    params = validate_plane_params(params)
    four_ab = 4 * params.a * params.b
    predicted = four_ab < 1
    out = {"a": params.a, "b": params.b, "four_ab": four_ab, "threshold_predicts_unique": predicted, "forms": {}}
    for form in FirstIntegralForm:
        rep = count_roots(form, t0, t0, params, samples_per_period)
        unique = rep.count == 1
        out["forms"][form.value] = {
            "report": rep.to_dict(),
            "unique": unique,
            "threshold_sufficient": (not predicted) or unique,
            "threshold_exact": predicted == unique,
        }
    counts = [v["report"]["count"] for v in out["forms"].values()]
    out["forms_agree"] = counts[0] == counts[1]
    if predicted and all(v["unique"] for v in out["forms"].values()):
        out["verdict"] = "threshold satisfied, unique"
    elif predicted:
        out["verdict"] = "threshold satisfied, not unique under some form"
    else:
        out["verdict"] = "threshold violated; root counts " + ", ".join(f"{k}={v['report']['count']}" for k, v in out["forms"].items())
    return out


# -- crossing times ----------------------------------------------------------------


@dataclass
class CrossingMap:
    deltas: np.ndarray
    times: np.ndarray
    monotone: bool
    coincidence: bool
    min_separation: float

    def to_dict(self) -> dict:
        return {
            "count": int(self.deltas.size),
            "monotone": self.monotone,
            "coincidence": self.coincidence,
            "min_separation": self.min_separation,
        }

    def to_csv(self, target) -> None:
        with text_sink(target) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delta_init", "t_star"])
            for d, t in zip(self.deltas, self.times):
                w.writerow([fmt(d), fmt(t)])


COINCIDENCE_TOL = 1e-8


def crossing_time_map(
    delta_inits: Sequence[float],
    params: PlanePairParams,
    settings: IntegratorSettings | None = None,
    jobs: int = 1,
) -> CrossingMap:
    """Time t* at which each pair, started at D = delta_init at t = 0, reaches D = 0.

    Integrates forward or backward in time depending on which way the flow
    carries D toward zero. Also flags whether the map is strictly monotone and
    whether any two distinct starts share a crossing time within 1e-8.
    """
    settings = settings or IntegratorSettings()
    deltas = np.asarray(delta_inits, dtype=float)
    check_plane_box(deltas, params)
    flow_sign = math.copysign(1.0, params.a * params.a - params.b * params.b)
    direction = np.where(deltas * flow_sign < 0, 1.0, -1.0)
    times = np.zeros(deltas.size)
    moving = deltas != 0.0
    if np.any(moving):
        vmin = relative_speed_bounds(params)[0]
        span = 1.01 * params.delta_half_width / vmin + settings.max_step
        y0 = np.stack([0.5 * deltas[moving], -0.5 * deltas[moving]], axis=-1)
        res = integrate_many(
            y0,
            plane_field(params),
            0.0,
            span,
            settings,
            events=[EventSpec(EventKind.DELTA_ZERO, terminal=True), EventSpec(EventKind.BOX_EXIT)],
            kind=Kind.PAIR1D,
            params=params,
            direction=direction[moving],
            jobs=jobs,
        )
        idx = np.flatnonzero(moving)
        for j, row in enumerate(idx):
            evs = res.events[j]
            if res.status[j] != Status.EVENT or not evs or evs[-1][0] != 0:
                raise NoCrossingInBox(f"pair started at delta={deltas[row]} never reached delta=0 inside the box")
            times[row] = evs[-1][1]
    order = np.argsort(deltas, kind="stable")
    ds, ts = deltas[order], times[order]
    distinct = np.diff(ds) > 0
    dt = np.diff(ts)
    monotone = bool(np.all(distinct) and (np.all(dt > 0) or np.all(dt < 0))) if ds.size > 1 else True
    by_time = np.argsort(times, kind="stable")
    gaps = np.diff(times[by_time])
    diff_start = np.diff(deltas[by_time]) != 0
    real_gaps = gaps[diff_start]
    coincidence = bool(np.any(real_gaps < COINCIDENCE_TOL))
    min_sep = float(real_gaps.min()) if real_gaps.size else math.inf
    return CrossingMap(deltas, times, monotone, coincidence, min_sep)


def crossing_time_oracle(delta_init: float, params: PlanePairParams) -> float:
    """t* = int_{delta_init}^0 dD / v_rel(D) by adaptive quadrature."""
    from scipy import integrate

    val, _ = integrate.quad(lambda d: 0.5 / float(_plane_v1(d, params)), delta_init, 0.0, epsabs=1e-14, epsrel=1e-13, limit=500)
    return val


# -- first-integral adjudication ---------------------------------------------------

CONSERVED_TOL = 1e-7


def _classify(times, lhs_values, rhs_rate):
    """Conserved, conserved after rescaling the time coefficient, or not conserved."""
    drift = float(np.max(np.abs((lhs_values - rhs_rate * times) - (lhs_values[0] - rhs_rate * times[0]))))
    scale = max(1.0, float(np.max(np.abs(lhs_values))))
    if drift <= CONSERVED_TOL * scale:
        return "conserved", drift, 1.0
    A = np.stack([times, np.ones_like(times)], axis=-1)
    (slope, icpt), *_ = np.linalg.lstsq(A, lhs_values, rcond=None)
    resid = float(np.max(np.abs(lhs_values - (slope * times + icpt))))
    if resid <= CONSERVED_TOL * scale:
        return "conserved up to a constant rescaling", drift, float(slope / rhs_rate)
    return "not conserved", drift, float(slope / rhs_rate)


def adjudicate_first_integrals(
    params: PlanePairParams,
    n_traj: int = 50,
    t1: float = 10.0,
    seed: int = 0,
    settings: IntegratorSettings | None = None,
) -> dict:
    """Drift of both first-integral forms along random plane-pair trajectories."""
    settings = settings or IntegratorSettings()
    rng = np.random.default_rng(seed)
    vmax = relative_speed_bounds(params)[1]
    # keep every run inside the box: start far enough from the exit side
    reach = min(vmax * t1, 2 * abs(params.a * params.a - params.b * params.b) * params.p / params.mass * t1 + params.period)
    half = params.delta_half_width
    lo, hi = (-half + 1e-6, half - reach) if params.a**2 > params.b**2 else (-half + reach, half - 1e-6)
    if lo >= hi:
        raise ValidationError("box too small for trajectories of this length; raise boxN")
    rate = 2.0 * params.p / params.mass
    derived_drift, two_term_drift, classes, rescale = [], [], [], []
    field = plane_field(params)
    for _ in range(n_traj):
        d0 = rng.uniform(lo, hi)
        com = rng.uniform(-1.0, 1.0)
        traj = integrate_trajectory(
            Configuration(Kind.PAIR1D, (com + 0.5 * d0, com - 0.5 * d0)), field, (0.0, t1), settings, [EventSpec(EventKind.BOX_EXIT)], params
        )
        d = traj.coords[:, 0] - traj.coords[:, 1]
        g = g_integral(d, params) - traj.times
        derived_drift.append(float(np.max(np.abs(g - g[0]))))
        cls, drift, factor = _classify(traj.times, two_term_lhs(d, params), rate)
        two_term_drift.append(drift)
        classes.append(cls)
        rescale.append(factor)
    order = ["conserved", "conserved up to a constant rescaling", "not conserved"]
    worst = max(classes, key=order.index)
    return {
        "a": params.a,
        "b": params.b,
        "trajectories": n_traj,
        "t1": t1,
        "derived_max_drift": max(derived_drift),
        "two_term_max_drift": max(two_term_drift),
        "two_term_classification": worst,
        "two_term_rate_ratio": float(np.median(rescale)),
    }


# -- two-slit mirror constraint ----------------------------------------------------


def mirror_residual(cfg: Configuration, params: TwoSlitParams) -> tuple[float, float]:
    """(|r1A - r2B|, |r1B - r2A|); both vanish exactly when particle 2 mirrors particle 1 in y."""
    if cfg.kind is not Kind.PAIR3D:
        raise ValidationError("mirror_residual needs a Pair3D configuration")
    r1A, r1B, r2A, r2B = (float(v) for v in _distances(cfg.array, params))
    return abs(r1A - r2B), abs(r1B - r2A)


def mirror_check(
    params: TwoSlitParams,
    n_traj: int = 20,
    t1: float = 10.0,
    seed: int = 0,
    settings: IntegratorSettings | None = None,
    perturbation: float = 0.0,
    region=((0.2, 4.0), (-3.0, 3.0), (-2.0, 2.0)),
) -> dict:
    """Integrate two-slit pairs started on (or near) the mirror manifold and track the residual.

    With ``perturbation > 0`` particle 2 is displaced off the manifold; such runs
    are descriptive only (nothing is asserted about off-manifold motion).
    """
    settings = settings or IntegratorSettings()
    rng = np.random.default_rng(seed)
    field = twoslit_field(params)
    runs = []
    while len(runs) < n_traj:
        r1 = [rng.uniform(*region[i]) for i in range(3)]
        y0 = mirror_partner(r1)
        if perturbation:
            y0[3:] += rng.normal(scale=perturbation, size=3)
        try:
            cfg = Configuration(Kind.PAIR3D, tuple(y0))
            traj = integrate_trajectory(cfg, field, (0.0, t1), settings, [EventSpec(EventKind.BOX_EXIT)], params)
        except FieldFailure:
            # start sits on a node; draw another
            continue
        r1A, r1B, r2A, r2B = _distances(traj.coords, params)
        res = np.maximum(np.abs(r1A - r2B), np.abs(r1B - r2A))
        runs.append(
            {
                "start": [float(v) for v in y0],
                "t_end": float(traj.times[-1]),
                "termination": traj.termination,
                "initial_residual": float(res[0]),
                "max_residual": float(res.max()),
            }
        )
    return {
        "trajectories": n_traj,
        "t1": t1,
        "rel_tol": settings.rel_tol,
        "perturbation": perturbation,
        "max_residual": max(r["max_residual"] for r in runs),
        "runs": runs,
    }
