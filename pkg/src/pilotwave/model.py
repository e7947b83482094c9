"""Parameter and state types shared by every module.

All types are frozen dataclasses; once validated they are plain values that
can be hashed, cached on, and shipped between workers.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import BadDomain, DegenerateAB, NonPositive, NormViolation, OutOfBox, SlitSingularity, ValidationError

NORM_TOL = 1e-12
AB_TOL = 1e-9


@dataclass(frozen=True)
class PhysicalConstants:
    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        _positive("hbar", self.hbar)
        _positive("mass", self.mass)


@dataclass(frozen=True)
class PlanePairParams:
    """Superposed counter-propagating plane-wave pair in one dimension.

    ``box_n`` fixes the normalization box: the relative phase p*(x1 - x2)/hbar
    ranges over the open interval of half-width (2*box_n + 1)*pi/2.
    """

    a: float
    b: float
    p: float
    box_n: int = 10
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)

    @property
    def hbar(self) -> float:
        return self.constants.hbar

    @property
    def mass(self) -> float:
        return self.constants.mass

    @property
    def box_length(self) -> float:
        """L = (2N + 1) pi hbar / p; also the width of the admissible Delta range."""
        return (2 * self.box_n + 1) * math.pi * self.hbar / self.p

    @property
    def energy(self) -> float:
        return self.p**2 / self.mass

    @property
    def ratio(self) -> float:
        """(a - b)/(a + b)."""
        return (self.a - self.b) / (self.a + self.b)

    @property
    def period(self) -> float:
        """Period of density and velocity in Delta: pi hbar / p."""
        return math.pi * self.hbar / self.p

    @property
    def delta_half_width(self) -> float:
        return 0.5 * self.box_length

    def in_box(self, delta) -> np.ndarray:
        return np.abs(np.asarray(delta, dtype=float)) < self.delta_half_width


@dataclass(frozen=True)
class TwoSlitParams:
    """Two point sources at (0, +slit_half_sep, 0) and (0, -slit_half_sep, 0)."""

    k: float
    slit_half_sep: float
    exclusion_radius: float = 1e-3
    domain_box: tuple = ((0.0, 20.0), (-10.0, 10.0), (-10.0, 10.0))
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    node_tol: float = 1e-12
    # never enters the guidance; kept so the stationary state is fully specified
    energy: float | None = None

    @property
    def hbar(self) -> float:
        return self.constants.hbar

    @property
    def mass(self) -> float:
        return self.constants.mass

    @property
    def slit_a(self) -> np.ndarray:
        return np.array([0.0, self.slit_half_sep, 0.0])

    @property
    def slit_b(self) -> np.ndarray:
        return np.array([0.0, -self.slit_half_sep, 0.0])


class Kind(str, enum.Enum):
    PAIR1D = "Pair1D"
    PAIR3D = "Pair3D"

    @property
    def dim(self) -> int:
        return 2 if self is Kind.PAIR1D else 6


@dataclass(frozen=True)
class Configuration:
    kind: Kind
    coords: tuple
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        coords = tuple(float(c) for c in self.coords)
        if len(coords) != self.kind.dim:
            raise ValidationError(f"{self.kind.value} needs {self.kind.dim} coordinates, got {len(coords)}")
        if not all(math.isfinite(c) for c in coords):
            raise ValidationError("non-finite coordinate")
        object.__setattr__(self, "coords", coords)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.coords)

    @property
    def delta(self) -> float:
        if self.kind is not Kind.PAIR1D:
            raise ValidationError("delta is defined for Pair1D configurations only")
        return self.coords[0] - self.coords[1]

    def at(self, coords, time: float) -> "Configuration":
        return replace(self, coords=tuple(coords), time=float(time))


def _positive(name: str, value) -> None:
    if not (isinstance(value, (int, float, np.floating, np.integer)) and math.isfinite(value) and value > 0):
        raise NonPositive(f"{name} must be a finite positive number, got {value!r}")


def _constants_from(raw: Mapping[str, Any]) -> PhysicalConstants:
    return PhysicalConstants(hbar=float(raw.get("hbar", 1.0)), mass=float(raw.get("mass", 1.0)))


def validate_plane_params(raw: PlanePairParams | Mapping[str, Any]) -> PlanePairParams:
    """Check and return plane-pair parameters.

    Accepts either a ``PlanePairParams`` or a flat mapping using the config-file
    keys (``a, b, p, boxN, hbar, mass``).
    """
    if isinstance(raw, PlanePairParams):
        params = raw
        constants = PhysicalConstants(params.hbar, params.mass)
    else:
        constants = _constants_from(raw)
        box_n = raw.get("boxN", raw.get("box_n", 10))
        if isinstance(box_n, float) and box_n.is_integer():
            box_n = int(box_n)
        params = PlanePairParams(a=float(raw["a"]), b=float(raw["b"]), p=float(raw["p"]), box_n=box_n, constants=constants)

    _positive("p", params.p)
    if not isinstance(params.box_n, (int, np.integer)) or isinstance(params.box_n, bool) or params.box_n < 1:
        raise NonPositive(f"boxN must be an integer >= 1, got {params.box_n!r}")
    if not (math.isfinite(params.a) and math.isfinite(params.b)):
        raise NormViolation("a and b must be finite")
    if abs(params.a**2 + params.b**2 - 1.0) > NORM_TOL:
        raise NormViolation(f"a^2 + b^2 = {params.a**2 + params.b**2!r}, expected 1")
    if abs(params.a - params.b) <= AB_TOL:
        raise DegenerateAB("a == b makes the wave function factorizable")
    if abs(params.a + params.b) <= AB_TOL:
        # psi ~ sin(p Delta/hbar): real, with a node at Delta = 0 and zero velocity
        raise DegenerateAB("a == -b gives a real wave function with nodes")
    return replace(params, box_n=int(params.box_n), constants=constants)


def validate_twoslit_params(raw: TwoSlitParams | Mapping[str, Any]) -> TwoSlitParams:
    if isinstance(raw, TwoSlitParams):
        params = raw
        constants = PhysicalConstants(params.hbar, params.mass)
    else:
        constants = _constants_from(raw)
        kwargs = dict(
            k=float(raw["k"]),
            slit_half_sep=float(raw.get("slit_half_sep", raw.get("slitHalfSep", 1.0))),
            exclusion_radius=float(raw.get("exclusion_radius", raw.get("exclusionRadius", 1e-3))),
            constants=constants,
        )
        box = raw.get("domain_box", raw.get("domainBox"))
        if box is not None:
            kwargs["domain_box"] = box
        if raw.get("energy") is not None:
            kwargs["energy"] = float(raw["energy"])
        params = TwoSlitParams(**kwargs)

    _positive("k", params.k)
    _positive("slit_half_sep", params.slit_half_sep)
    _positive("exclusion_radius", params.exclusion_radius)
    _positive("node_tol", params.node_tol)
    try:
        box = tuple((float(lo), float(hi)) for lo, hi in params.domain_box)
    except (TypeError, ValueError) as exc:
        raise BadDomain(f"domain_box must be three (lo, hi) pairs: {exc}") from None
    if len(box) != 3 or not all(math.isfinite(lo) and math.isfinite(hi) and lo < hi for lo, hi in box):
        raise BadDomain(f"domain_box must be three finite (lo, hi) pairs with lo < hi, got {params.domain_box!r}")
    if box[0][0] < 0:
        raise BadDomain("the sources radiate into x >= 0; domain x-min must be >= 0")
    return replace(params, domain_box=box, constants=constants)


def plane_config(x1: float, x2: float, params: PlanePairParams, time: float = 0.0) -> Configuration:
    cfg = Configuration(Kind.PAIR1D, (x1, x2), time)
    check_plane_box(cfg.delta, params)
    return cfg


def check_plane_box(delta, params: PlanePairParams) -> None:
    if not np.all(params.in_box(delta)):
        raise OutOfBox(f"p*Delta/hbar outside the normalization box (half-width {(2 * params.box_n + 1)}*pi/2)")


def twoslit_config(coords, params: TwoSlitParams, time: float = 0.0) -> Configuration:
    cfg = Configuration(Kind.PAIR3D, coords, time)
    check_slit_clearance(cfg.array, params)
    return cfg


def check_slit_clearance(coords, params: TwoSlitParams) -> None:
    coords = np.asarray(coords, dtype=float)
    for part in (coords[..., :3], coords[..., 3:]):
        for slit in (params.slit_a, params.slit_b):
            if np.any(np.linalg.norm(part - slit, axis=-1) < params.exclusion_radius):
                raise SlitSingularity("particle within exclusion radius of a slit")


def mirror_partner(r1) -> np.ndarray:
    """Six coordinates with particle 2 the y-reflection of particle 1."""
    x, y, z = (float(c) for c in r1)
    return np.array([x, y, z, x, -y, z])


def load_config(path: str | Path) -> dict:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return data
