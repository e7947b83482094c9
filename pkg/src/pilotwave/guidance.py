"""Bohmian velocity fields, v_i = (1/m) dS/dx_i.

Closed forms for both pairs, plus a central-difference phase gradient that works
for any phase function and serves as the oracle for the closed forms.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .errors import NodeEncountered, PilotwaveError, SlitSingularity, StencilFailure, ValidationError
from .model import Configuration, Kind, PlanePairParams, TwoSlitParams, check_plane_box
from .wavefunction import _node_mask, _slit_mask, _twoslit_terms, phase_plane, phase_twoslit

DEFAULT_STEP = 1e-5

# -- plane pair --------------------------------------------------------------------


def _plane_v1(delta, params: PlanePairParams):
    phi = params.p * np.asarray(delta, dtype=float) / params.hbar
    r = params.ratio
    c = np.cos(phi)
    s = np.sin(phi)
    return (params.p / params.mass) * r / (c * c + r * r * s * s)


def velocity_plane(delta, params: PlanePairParams) -> np.ndarray:
    """Velocities (v1, v2) of the plane pair; trailing axis of length 2, v2 == -v1 exactly."""
    check_plane_box(delta, params)
    v1 = _plane_v1(delta, params)
    return np.stack([v1, -v1], axis=-1)


def relative_velocity_plane(delta, params: PlanePairParams):
    """d(x1 - x2)/dt = 2 v1."""
    check_plane_box(delta, params)
    return 2.0 * _plane_v1(delta, params)


def relative_velocity_closed(delta, params: PlanePairParams):
    """Same quantity as ``relative_velocity_plane`` written as 2(p/m)(a^2 - b^2)/(1 + 2ab cos(2p Delta/hbar))."""
    a, b = params.a, params.b
    phi2 = 2.0 * params.p * np.asarray(delta, dtype=float) / params.hbar
    return 2.0 * (params.p / params.mass) * (a * a - b * b) / (1.0 + 2.0 * a * b * np.cos(phi2))


def relative_speed_bounds(params: PlanePairParams) -> tuple[float, float]:
    """Range of |d Delta/dt| over all Delta."""
    r = abs(params.ratio)
    scale = 2.0 * params.p / params.mass
    return scale * min(r, 1.0 / r), scale * max(r, 1.0 / r)


def plane_field(params: PlanePairParams) -> Callable:
    """Vectorized field ``f(t, y)`` for the integrator; y has trailing axis (x1, x2)."""

    def field(t, y):
        v1 = _plane_v1(y[..., 0] - y[..., 1], params)
        return np.stack([v1, -v1], axis=-1)

    return field


# -- two-slit pair -----------------------------------------------------------------


def _phase_partials(terms, params: TwoSlitParams):
    """dS/dr for r1A, r1B, r2A, r2B via the chain rule on S = hbar atan2(num, den).

    Each partial is hbar (den dnum - num dden) / (num^2 + den^2).
    """
    P, Q, al, ga = terms.P, terms.Q, terms.alpha, terms.gamma
    k = params.k
    sa, ca, sg, cg = np.sin(al), np.cos(al), np.sin(ga), np.cos(ga)
    # d(num), d(den) for each distance; P = r1B r2A, Q = r1A r2B
    d_num = {
        "r1A": k * P * ca + terms.r2B * sg,
        "r2B": k * P * ca + terms.r1A * sg,
        "r1B": terms.r2A * sa + k * Q * cg,
        "r2A": terms.r1B * sa + k * Q * cg,
    }
    d_den = {
        "r1A": -k * P * sa + terms.r2B * cg,
        "r2B": -k * P * sa + terms.r1A * cg,
        "r1B": terms.r2A * ca - k * Q * sg,
        "r2A": terms.r1B * ca - k * Q * sg,
    }
    norm2 = terms.num**2 + terms.den**2
    return {key: params.hbar * (terms.den * d_num[key] - terms.num * d_den[key]) / norm2 for key in d_num}


def arctan_phase_partials(terms, params: TwoSlitParams):
    """dS/dr in the arctan form hbar [1 + N^2/D^2]^-1 [dN/D - (N/D^2) dD].

    The r1B and r2A partials are the A <-> B images of the r1A and r2B
    expressions. Singular where D = 0 even though the partial itself is finite there.
    """
    P, Q, al, ga = terms.P, terms.Q, terms.alpha, terms.gamma
    k, N, D = params.k, terms.num, terms.den
    pref = params.hbar / (1.0 + N * N / (D * D))

    def form(dn, dd):
        return pref * (dn / D - N / (D * D) * dd)

    return {
        "r1A": form(k * P * np.cos(al) + terms.r2B * np.sin(ga), -k * P * np.sin(al) + terms.r2B * np.cos(ga)),
        "r2B": form(k * P * np.cos(al) + terms.r1A * np.sin(ga), -k * P * np.sin(al) + terms.r1A * np.cos(ga)),
        # A <-> B: r1A <-> r1B, r2B <-> r2A, P <-> Q, alpha <-> gamma
        "r1B": form(k * Q * np.cos(ga) + terms.r2A * np.sin(al), -k * Q * np.sin(ga) + terms.r2A * np.cos(al)),
        "r2A": form(k * Q * np.cos(ga) + terms.r1B * np.sin(al), -k * Q * np.sin(ga) + terms.r1B * np.cos(al)),
    }


def _assemble_velocity(coords, terms, dS, params: TwoSlitParams):
    coords = np.asarray(coords, dtype=float)
    a = params.slit_half_sep
    shift_a = np.array([0.0, a, 0.0])
    shift_b = np.array([0.0, -a, 0.0])
    p1, p2 = coords[..., :3], coords[..., 3:]
    v1 = dS["r1A"][..., None] * (p1 - shift_a) / terms.r1A[..., None] + dS["r1B"][..., None] * (p1 - shift_b) / terms.r1B[..., None]
    v2 = dS["r2A"][..., None] * (p2 - shift_a) / terms.r2A[..., None] + dS["r2B"][..., None] * (p2 - shift_b) / terms.r2B[..., None]
    return np.concatenate([v1, v2], axis=-1) / params.mass


def _twoslit_velocity(coords, params: TwoSlitParams, arctan_form: bool = False):
    terms = _twoslit_terms(coords, params)
    bad = _slit_mask(terms, params) | _node_mask(terms, params)
    with np.errstate(divide="ignore", invalid="ignore"):
        dS = arctan_phase_partials(terms, params) if arctan_form else _phase_partials(terms, params)
        v = _assemble_velocity(coords, terms, dS, params)
    return np.where(np.asarray(bad)[..., None], np.nan, v), terms


def velocity_twoslit(cfg: Configuration, params: TwoSlitParams, arctan_form: bool = False) -> np.ndarray:
    """Six Cartesian velocity components (vx1, vy1, vz1, vx2, vy2, vz2)."""
    if cfg.kind is not Kind.PAIR3D:
        raise ValidationError("velocity_twoslit needs a Pair3D configuration")
    v, terms = _twoslit_velocity(cfg.array, params, arctan_form=arctan_form)
    if _slit_mask(terms, params):
        raise SlitSingularity("configuration within exclusion radius of a slit")
    if _node_mask(terms, params):
        raise NodeEncountered("wave function vanishes; velocity undefined")
    return v


def twoslit_field(params: TwoSlitParams) -> Callable:
    """Vectorized field for the integrator; rows at nodes or slits come back as NaN."""

    def field(t, y):
        return _twoslit_velocity(y, params)[0]

    return field


# -- finite-difference fallback ----------------------------------------------------


def _central_gradient(phase_field, cfg: Configuration, step: float, hbar: float) -> np.ndarray:
    base = cfg.array
    grad = np.empty_like(base)
    period = 2.0 * math.pi * hbar
    for i in range(base.size):
        shifted = []
        for sign in (1.0, -1.0):
            pt = base.copy()
            pt[i] += sign * step
            try:
                shifted.append(phase_field(cfg.at(pt, cfg.time)))
            except PilotwaveError as exc:
                raise StencilFailure(f"stencil point failed: {exc}") from exc
        raw = shifted[0] - shifted[1]
        jump = raw - period * math.floor(raw / period + 0.5)
        if abs(abs(jump) - 0.5 * period) < 1e-3 * hbar:
            raise StencilFailure(f"phase jump of {raw} is ambiguous modulo 2*pi*hbar")
        grad[i] = jump / (2.0 * step)
    return grad


def numeric_velocity(
    phase_field: Callable[[Configuration], float],
    cfg: Configuration,
    step: float = DEFAULT_STEP,
    mass: float = 1.0,
    hbar: float = 1.0,
    rel_tol: float = 1e-6,
) -> np.ndarray:
    """Velocity as the central-difference gradient of ``phase_field`` divided by ``mass``.

    Differences are unwrapped into (-pi hbar, pi hbar]. When steps h and h/2
    disagree by more than ``rel_tol`` the Richardson combination is returned.
    """
    coarse = _central_gradient(phase_field, cfg, step, hbar)
    fine = _central_gradient(phase_field, cfg, 0.5 * step, hbar)
    scale = max(np.linalg.norm(fine), np.finfo(float).tiny)
    if np.linalg.norm(coarse - fine) > rel_tol * scale:
        return (4.0 * fine - coarse) / 3.0 / mass
    return fine / mass


def plane_phase_field(params: PlanePairParams) -> Callable[[Configuration], float]:
    return lambda cfg: phase_plane(cfg, params)


def twoslit_phase_field(params: TwoSlitParams) -> Callable[[Configuration], float]:
    return lambda cfg: phase_twoslit(cfg, params)


# -- oracle comparison -------------------------------------------------------------


def _rel_err(v, ref):
    return float(np.linalg.norm(np.asarray(v) - np.asarray(ref)) / max(np.linalg.norm(ref), np.finfo(float).tiny))


def grad_check_plane(params: PlanePairParams, n: int = 100, seed: int = 0, step: float = DEFAULT_STEP) -> dict:
    """Closed-form plane velocities against finite differences of the phase at random Delta."""
    rng = np.random.default_rng(seed)
    half = params.delta_half_width
    errors, skipped = [], 0
    while len(errors) < n:
        delta = rng.uniform(-0.999 * half, 0.999 * half)
        cfg = Configuration(Kind.PAIR1D, (0.5 * delta, -0.5 * delta))
        try:
            fd = numeric_velocity(plane_phase_field(params), cfg, step, params.mass, params.hbar)
        except StencilFailure:
            # stencil straddles a jump of the principal branch
            skipped += 1
            continue
        errors.append(_rel_err(velocity_plane(delta, params), fd))
    return {"system": "plane", "points": n, "skipped": skipped, "max_rel_err": max(errors), "median_rel_err": float(np.median(errors))}


def random_twoslit_points(params: TwoSlitParams, n: int, rng, min_amplitude: float = 1e-2) -> np.ndarray:
    """Uniform points in domain_box for both particles, away from slits and nodes."""
    lo = np.array([b[0] for b in params.domain_box] * 2)
    hi = np.array([b[1] for b in params.domain_box] * 2)
    out = []
    while len(out) < n:
        pts = rng.uniform(lo, hi, size=(4 * n, 6))
        terms = _twoslit_terms(pts, params)
        ok = ~_slit_mask(terms, params) & (np.hypot(terms.num, terms.den) >= min_amplitude * (terms.P + terms.Q))
        out.extend(pts[ok])
    return np.array(out[:n])


def grad_check_twoslit(params: TwoSlitParams, n: int = 100, seed: int = 0, step: float = DEFAULT_STEP) -> dict:
    """Chain-rule velocities against finite differences, and against the arctan-form partials."""
    rng = np.random.default_rng(seed)
    pts = random_twoslit_points(params, n, rng)
    errors, arctan_errors = [], []
    for row in pts:
        cfg = Configuration(Kind.PAIR3D, tuple(row))
        v = velocity_twoslit(cfg, params)
        fd = numeric_velocity(twoslit_phase_field(params), cfg, step, params.mass, params.hbar)
        errors.append(_rel_err(v, fd))
        alt = _twoslit_velocity(row, params, arctan_form=True)[0]
        arctan_errors.append(_rel_err(alt, v))
    return {
        "system": "twoslit",
        "points": n,
        "max_rel_err": max(errors),
        "median_rel_err": float(np.median(errors)),
        "arctan_partials_max_rel_diff": max(arctan_errors),
        "arctan_partials_match": bool(max(arctan_errors) < 1e-9),
    }
