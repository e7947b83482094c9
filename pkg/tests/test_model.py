import json
import math

import numpy as np
import pytest

from pilotwave.errors import BadDomain, DegenerateAB, NonPositive, NormViolation, OutOfBox, SlitSingularity, ValidationError
from pilotwave.model import (
    Configuration,
    Kind,
    PlanePairParams,
    TwoSlitParams,
    check_plane_box,
    load_config,
    mirror_partner,
    plane_config,
    twoslit_config,
    validate_plane_params,
    validate_twoslit_params,
)


def test_plane_params_valid():
    p = validate_plane_params({"a": 0.8, "b": 0.6, "p": 1, "boxN": 10})
    assert p.box_length == pytest.approx(21 * math.pi, rel=1e-15)
    assert p.energy == 1.0
    assert p.period == pytest.approx(math.pi)


def test_plane_params_from_dataclass():
    p = validate_plane_params(PlanePairParams(0.6, 0.8, 2.0, box_n=3))
    assert p.box_length == pytest.approx(7 * math.pi / 2)
    assert p.energy == 4.0


@pytest.mark.parametrize(
    "raw, err",
    [
        ({"a": 2**-0.5, "b": 2**-0.5, "p": 1}, DegenerateAB),
        ({"a": 0.8, "b": 0.6, "p": 1, "boxN": 0}, NonPositive),
        ({"a": 0.9, "b": 0.6, "p": 1}, NormViolation),
        ({"a": 0.8, "b": 0.6, "p": -1}, NonPositive),
        ({"a": 0.8, "b": 0.6, "p": 1, "hbar": 0}, NonPositive),
        ({"a": 0.8, "b": 0.6, "p": 1, "mass": -2}, NonPositive),
        ({"a": 0.8, "b": 0.6, "p": 1, "boxN": 2.5}, NonPositive),
        ({"a": float("nan"), "b": 0.6, "p": 1}, NormViolation),
        ({"a": 2**-0.5, "b": -(2**-0.5), "p": 1}, DegenerateAB),
    ],
)
def test_plane_params_rejected(raw, err):
    with pytest.raises(err):
        validate_plane_params(raw)


def test_near_degenerate_boundary():
    b = 2**-0.5
    a = math.sqrt(1 - b * b) + 1e-10
    with pytest.raises(ValidationError):
        validate_plane_params({"a": a, "b": b, "p": 1})


def test_validation_errors_are_value_errors():
    with pytest.raises(ValueError):
        validate_plane_params({"a": 0.9, "b": 0.6, "p": 1})


def test_twoslit_params_valid():
    p = validate_twoslit_params(
        {"k": 5, "slitHalfSep": 1, "exclusionRadius": 1e-3, "domain_box": [[0, 20], [-10, 10], [-10, 10]]}
    )
    assert p.k == 5.0
    assert p.domain_box == ((0.0, 20.0), (-10.0, 10.0), (-10.0, 10.0))
    np.testing.assert_array_equal(p.slit_a, [0, 1, 0])
    np.testing.assert_array_equal(p.slit_b, [0, -1, 0])


@pytest.mark.parametrize(
    "raw, err",
    [
        ({"k": 5, "slit_half_sep": -1}, NonPositive),
        ({"k": 0, "slit_half_sep": 1}, NonPositive),
        ({"k": 5, "slit_half_sep": 1, "exclusion_radius": 0}, NonPositive),
        ({"k": 5, "slit_half_sep": 1, "domain_box": [[-1, 1], [-10, 10], [-10, 10]]}, BadDomain),
        ({"k": 5, "slit_half_sep": 1, "domain_box": [[0, 1], [3, -3], [-10, 10]]}, BadDomain),
        ({"k": 5, "slit_half_sep": 1, "domain_box": [[0, 1], [-3, 3]]}, BadDomain),
    ],
)
def test_twoslit_params_rejected(raw, err):
    with pytest.raises(err):
        validate_twoslit_params(raw)


def test_configuration_checks_dimension():
    with pytest.raises(ValidationError):
        Configuration(Kind.PAIR1D, (0.0, 1.0, 2.0))
    with pytest.raises(ValidationError):
        Configuration(Kind.PAIR3D, (0.0,) * 5)
    with pytest.raises(ValidationError):
        Configuration(Kind.PAIR1D, (0.0, float("inf")))


def test_configuration_delta_and_at():
    cfg = Configuration("Pair1D", (0.25, -0.5), 1.0)
    assert cfg.kind is Kind.PAIR1D
    assert cfg.delta == 0.75
    moved = cfg.at((1.0, 2.0), 3.0)
    assert moved.coords == (1.0, 2.0) and moved.time == 3.0
    with pytest.raises(ValidationError):
        Configuration(Kind.PAIR3D, (1.0,) * 6).delta


def test_plane_box():
    p = validate_plane_params({"a": 0.8, "b": 0.6, "p": 1, "boxN": 1})
    plane_config(1.0, -1.0, p)
    with pytest.raises(OutOfBox):
        plane_config(3.0, -3.0, p)
    with pytest.raises(OutOfBox):
        check_plane_box(1.5 * math.pi, p)


def test_twoslit_config_exclusion():
    p = validate_twoslit_params({"k": 2, "slit_half_sep": 1})
    twoslit_config((1, 1, 0, 1, -1, 0), p)
    with pytest.raises(SlitSingularity):
        twoslit_config((0, 1, 0, 1, -1, 0), p)


def test_mirror_partner():
    np.testing.assert_array_equal(mirror_partner((1.0, 2.0, 3.0)), [1, 2, 3, 1, -2, 3])


def test_load_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"a": 0.8, "b": 0.6, "p": 1, "boxN": 4}))
    params = validate_plane_params(load_config(path))
    assert params.box_n == 4
    path.write_text("[1, 2]")
    with pytest.raises(ValidationError):
        load_config(path)


def test_params_are_immutable():
    p = validate_plane_params({"a": 0.8, "b": 0.6, "p": 1})
    with pytest.raises(AttributeError):
        p.a = 0.6
    t = validate_twoslit_params(TwoSlitParams(k=1.0, slit_half_sep=0.5))
    with pytest.raises(AttributeError):
        t.k = 2.0
