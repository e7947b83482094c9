"""Wave functions, densities and phases of the two entangled pairs.

Plane pair (1-D)::

    psi = L**-0.5 * (a exp(i p D / hbar) + b exp(-i p D / hbar)) * exp(-i E t / hbar),   D = x1 - x2

Two-slit pair (3-D), at t = 0::

    psi = (1/N) * (exp(ik(r1A + r2B)) / (r1A r2B) + exp(ik(r1B + r2A)) / (r1B r2A))

Array helpers (leading underscore) broadcast over a trailing coordinate axis and
are what the guidance field and the integrator call; the public functions take
``Configuration`` values and raise on inadmissible input.
"""
from __future__ import annotations

import functools
import math
from typing import NamedTuple

import numpy as np

from .errors import NodeEncountered, SlitSingularity, ValidationError
from .model import Configuration, Kind, PlanePairParams, TwoSlitParams, check_plane_box


def _require(cfg: Configuration, kind: Kind) -> None:
    if cfg.kind is not kind:
        raise ValidationError(f"expected a {kind.value} configuration, got {cfg.kind.value}")


# -- plane pair --------------------------------------------------------------------


def psi_plane(cfg: Configuration, params: PlanePairParams) -> complex:
    _require(cfg, Kind.PAIR1D)
    delta = cfg.delta
    check_plane_box(delta, params)
    phi = params.p * delta / params.hbar
    amp = params.a * complex(math.cos(phi), math.sin(phi)) + params.b * complex(math.cos(phi), -math.sin(phi))
    wt = params.energy * cfg.time / params.hbar
    return amp * complex(math.cos(wt), -math.sin(wt)) / math.sqrt(params.box_length)


def prob_density_plane(delta, params: PlanePairParams):
    """|psi|^2 as a function of Delta alone; no time argument because it is stationary."""
    check_plane_box(delta, params)
    return _plane_density(delta, params)


def _plane_density(delta, params: PlanePairParams):
    return (1.0 + 2.0 * params.a * params.b * np.cos(2.0 * params.p * np.asarray(delta) / params.hbar)) / params.box_length


def phase_plane(cfg: Configuration, params: PlanePairParams) -> float:
    """Phase S on the principal arctan branch, in action units.

    Where tan(p Delta / hbar) diverges the limit from below, sign(r) * hbar * pi/2,
    is returned.
    """
    _require(cfg, Kind.PAIR1D)
    delta = cfg.delta
    check_plane_box(delta, params)
    return float(_principal_phase(delta, params)) - params.energy * cfg.time


def _principal_phase(delta, params: PlanePairParams):
    phi = params.p * np.asarray(delta, dtype=float) / params.hbar
    c = np.cos(phi)
    s = np.sin(phi)
    r = params.ratio
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.arctan(r * s / c)
    return params.hbar * np.where(c == 0.0, np.sign(r * s) * (math.pi / 2), val)


def phase_plane_continuous(cfg: Configuration, params: PlanePairParams) -> float:
    """Phase as the two-argument angle of psi; continuous in Delta except for 2*pi*hbar wraps."""
    _require(cfg, Kind.PAIR1D)
    check_plane_box(cfg.delta, params)
    phi = params.p * cfg.delta / params.hbar
    return params.hbar * math.atan2((params.a - params.b) * math.sin(phi), (params.a + params.b) * math.cos(phi)) - params.energy * cfg.time


# -- two-slit pair -----------------------------------------------------------------


class SlitDistances(NamedTuple):
    r1A: float
    r1B: float
    r2A: float
    r2B: float


def _distances(coords, params: TwoSlitParams):
    coords = np.asarray(coords, dtype=float)
    a = params.slit_half_sep
    x1, y1, z1, x2, y2, z2 = np.moveaxis(coords, -1, 0)
    r1A = np.sqrt(x1 * x1 + (y1 - a) ** 2 + z1 * z1)
    r1B = np.sqrt(x1 * x1 + (y1 + a) ** 2 + z1 * z1)
    r2A = np.sqrt(x2 * x2 + (y2 - a) ** 2 + z2 * z2)
    r2B = np.sqrt(x2 * x2 + (y2 + a) ** 2 + z2 * z2)
    return r1A, r1B, r2A, r2B


def slit_distances(cfg: Configuration, params: TwoSlitParams) -> SlitDistances:
    _require(cfg, Kind.PAIR3D)
    dist = SlitDistances(*(float(r) for r in _distances(cfg.array, params)))
    if min(dist) < params.exclusion_radius:
        raise SlitSingularity(f"configuration within {params.exclusion_radius} of a slit")
    return dist


class _TwoSlitTerms(NamedTuple):
    r1A: np.ndarray
    r1B: np.ndarray
    r2A: np.ndarray
    r2B: np.ndarray
    P: np.ndarray  # r1B * r2A
    Q: np.ndarray  # r1A * r2B
    alpha: np.ndarray  # k (r1A + r2B)
    gamma: np.ndarray  # k (r1B + r2A)
    num: np.ndarray
    den: np.ndarray


def _twoslit_terms(coords, params: TwoSlitParams) -> _TwoSlitTerms:
    r1A, r1B, r2A, r2B = _distances(coords, params)
    P = r1B * r2A
    Q = r1A * r2B
    alpha = params.k * (r1A + r2B)
    gamma = params.k * (r1B + r2A)
    num = P * np.sin(alpha) + Q * np.sin(gamma)
    den = P * np.cos(alpha) + Q * np.cos(gamma)
    return _TwoSlitTerms(r1A, r1B, r2A, r2B, P, Q, alpha, gamma, num, den)


def _node_mask(terms: _TwoSlitTerms, params: TwoSlitParams):
    # num + i den is psi times the positive factor r1A r1B r2A r2B; compare against its scale
    return np.hypot(terms.num, terms.den) < params.node_tol * (terms.P + terms.Q)


def _slit_mask(terms: _TwoSlitTerms, params: TwoSlitParams):
    rmin = np.minimum(np.minimum(terms.r1A, terms.r1B), np.minimum(terms.r2A, terms.r2B))
    return rmin < params.exclusion_radius


def psi_twoslit(cfg: Configuration, params: TwoSlitParams, normalized: bool = True) -> complex:
    r1A, r1B, r2A, r2B = slit_distances(cfg, params)
    k = params.k
    val = complex(math.cos(k * (r1A + r2B)), math.sin(k * (r1A + r2B))) / (r1A * r2B) + complex(
        math.cos(k * (r1B + r2A)), math.sin(k * (r1B + r2A))
    ) / (r1B * r2A)
    return val / twoslit_norm(params) if normalized else val


def prob_density_twoslit(cfg: Configuration, params: TwoSlitParams, normalized: bool = True) -> float:
    """|psi|^2 from the expanded square (direct terms plus interference term)."""
    r1A, r1B, r2A, r2B = slit_distances(cfg, params)
    dens = (
        1.0 / (r1A * r2B) ** 2
        + 1.0 / (r1B * r2A) ** 2
        + 2.0 * math.cos(params.k * (r1A + r2B - r1B - r2A)) / (r1A * r2B * r1B * r2A)
    )
    return dens / twoslit_norm(params) ** 2 if normalized else dens


def phase_twoslit(cfg: Configuration, params: TwoSlitParams) -> float:
    _require(cfg, Kind.PAIR3D)
    terms = _twoslit_terms(cfg.array, params)
    if _slit_mask(terms, params):
        raise SlitSingularity(f"configuration within {params.exclusion_radius} of a slit")
    if _node_mask(terms, params):
        raise NodeEncountered("wave function vanishes; phase undefined")
    return params.hbar * math.atan2(float(terms.num), float(terms.den))


# -- two-slit normalization --------------------------------------------------------


def _ray_extent(center, dirs, box):
    """Entry/exit distances of rays ``center + rho * dirs`` through an axis-aligned box."""
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - center) / dirs
        t2 = (hi - center) / dirs
    tmin = np.where(dirs == 0.0, np.where((center >= lo) & (center <= hi), -np.inf, np.inf), np.minimum(t1, t2))
    tmax = np.where(dirs == 0.0, np.where((center >= lo) & (center <= hi), np.inf, -np.inf), np.maximum(t1, t2))
    rho_in = np.maximum(tmin.max(axis=-1), 0.0)
    rho_out = tmax.min(axis=-1)
    return rho_in, np.maximum(rho_out, rho_in)


def _centered_integral(center, integrand, box, n_mu=64, n_phi=128, n_rad=96):
    """Integrate ``integrand(points, rho)`` over the box in spherical coordinates about ``center``.

    The integrand receives the Jacobian-free value; rho**2 is applied here so a
    1/rho**2 singularity at the center becomes a bounded radial integrand.
    Polar axis is +x; mu = cos(theta) is split at 0 because a center on the
    x = 0 face sees the box only for mu >= 0.
    """
    gm, gw = np.polynomial.legendre.leggauss(n_mu)
    mu = np.concatenate([0.5 * (gm - 1.0), 0.5 * (gm + 1.0)])
    wmu = np.concatenate([0.5 * gw, 0.5 * gw])
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    wphi = 2.0 * math.pi / n_phi
    rg, rw = np.polynomial.legendre.leggauss(n_rad)

    MU, PHI = np.meshgrid(mu, phi, indexing="ij")
    s = np.sqrt(1.0 - MU**2)
    dirs = np.stack([MU, s * np.cos(PHI), s * np.sin(PHI)], axis=-1)
    rho_in, rho_out = _ray_extent(np.asarray(center, dtype=float), dirs, box)
    half = 0.5 * (rho_out - rho_in)
    rho = 0.5 * (rho_out + rho_in)[..., None] + half[..., None] * rg
    pts = np.asarray(center)[None, None, None, :] + rho[..., None] * dirs[:, :, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = integrand(pts, rho) * rho**2
    # rays that miss the box have zero radial extent
    vals = np.where(half[..., None] > 0.0, vals, 0.0)
    radial = (vals * rw).sum(axis=-1) * half
    return (radial * wmu[:, None]).sum() * wphi


@functools.lru_cache(maxsize=64)
def _single_particle_integrals(k, slit_half_sep, box, resolution):
    n_mu, n_phi, n_rad = resolution
    A = np.array([0.0, slit_half_sep, 0.0])
    B = np.array([0.0, -slit_half_sep, 0.0])

    def dist(pts, c):
        return np.linalg.norm(pts - c, axis=-1)

    def inv_sq_a(pts, rho):
        return 1.0 / rho**2

    J = _centered_integral(A, inv_sq_a, box, n_mu, n_phi, n_rad)
    J_b = _centered_integral(B, inv_sq_a, box, n_mu, n_phi, n_rad)

    # partition of unity w_A = rB^2/(rA^2 + rB^2) isolates each slit's singularity
    def cross_a(pts, rho):
        ra, rb = rho, dist(pts, B)
        return np.exp(1j * k * (ra - rb)) * rb / (ra * (ra * ra + rb * rb))

    def cross_b(pts, rho):
        ra, rb = dist(pts, A), rho
        return np.exp(1j * k * (ra - rb)) * ra / (rb * (ra * ra + rb * rb))

    C = _centered_integral(A, cross_a, box, n_mu, n_phi, n_rad) + _centered_integral(B, cross_b, box, n_mu, n_phi, n_rad)
    return float(J), float(J_b), complex(C)


def twoslit_norm(params: TwoSlitParams, resolution=(64, 128, 96)) -> float:
    """Normalization constant N of the two-slit state over domain_box x domain_box.

    The state is f_A(1) f_B(2) + f_B(1) f_A(2) with f_S(r) = exp(ik r_S)/r_S, so
    its squared norm factorizes into single-particle integrals:
    2 J_A J_B + 2 |C|^2 with J_S = int |f_S|^2 and C = int f_A conj(f_B).
    Results are cached per parameter set.
    """
    J_a, J_b, C = _single_particle_integrals(params.k, params.slit_half_sep, tuple(map(tuple, params.domain_box)), tuple(resolution))
    return math.sqrt(2.0 * J_a * J_b + 2.0 * abs(C) ** 2)
