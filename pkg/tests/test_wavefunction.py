import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

import oracles
from pilotwave.errors import NodeEncountered, OutOfBox, SlitSingularity, ValidationError
from pilotwave.model import Configuration, Kind, mirror_partner, validate_plane_params, validate_twoslit_params
from pilotwave.wavefunction import (
    phase_plane,
    phase_plane_continuous,
    phase_twoslit,
    prob_density_plane,
    prob_density_twoslit,
    psi_plane,
    psi_twoslit,
    slit_distances,
    twoslit_norm,
)

P = validate_plane_params({"a": 0.8, "b": 0.6, "p": 1.0})
L = 21 * math.pi


def pair(delta, t=0.0, com=0.0):
    return Configuration(Kind.PAIR1D, (com + 0.5 * delta, com - 0.5 * delta), t)


def test_psi_plane_at_zero():
    assert psi_plane(pair(0.0), P) == pytest.approx(1.4 / math.sqrt(L), abs=1e-15)


def test_psi_plane_quarter_period():
    val = psi_plane(pair(math.pi / 2), P)
    assert val.real == pytest.approx(0.0, abs=1e-15)
    assert val.imag == pytest.approx(0.2 / math.sqrt(L), rel=1e-12)


def test_psi_plane_matches_oracle():
    rng = np.random.default_rng(3)
    for d, t, com in zip(rng.uniform(-30, 30, 50), rng.uniform(-5, 5, 50), rng.uniform(-4, 4, 50)):
        ref = oracles.plane_psi(com + d / 2, com - d / 2, t, 0.8, 0.6, 1.0)
        assert abs(psi_plane(pair(d, t, com), P) - ref) < 1e-14


def test_density_matches_modulus_squared():
    rng = np.random.default_rng(0)
    for d in rng.uniform(-32, 32, 100):
        ref = abs(psi_plane(pair(d, 1.3), P)) ** 2
        assert prob_density_plane(d, P) == pytest.approx(ref, rel=1e-12)


def test_density_examples():
    assert prob_density_plane(0.0, P) == pytest.approx(1.96 / L, rel=1e-14)
    assert prob_density_plane(math.pi / 2, P) == pytest.approx(0.04 / L, rel=1e-12)


def test_density_normalized_over_box():
    # the Delta box has width L and the center of mass is uniform over a box of width L
    half = L / 2
    val, err = integrate.quad(lambda d: prob_density_plane(d, P), -half, half, limit=400, epsabs=1e-13)
    assert abs(val - 1.0) < 1e-8


def test_density_vectorized_and_positive():
    d = np.linspace(-32, 32, 1001)
    rho = prob_density_plane(d, P)
    assert rho.shape == d.shape
    assert rho.min() >= (1 - 2 * 0.48) / L * (1 - 1e-12)


def test_density_outside_box():
    with pytest.raises(OutOfBox):
        prob_density_plane(40.0, P)


def test_phase_plane_examples():
    assert phase_plane(pair(0.0), P) == 0.0
    assert phase_plane(pair(math.pi / 4), P) == pytest.approx(math.atan(1 / 7), rel=1e-14)
    # two-argument angle of psi, same branch here
    assert cmath.phase(psi_plane(pair(math.pi / 4), P)) == pytest.approx(math.atan(1 / 7), rel=1e-12)


@given(st.floats(-30, 30), st.floats(-10, 10), st.floats(1e-6, 3.0))
def test_phase_advances_by_energy(delta, t, dt):
    s0 = phase_plane(pair(delta, t), P)
    s1 = phase_plane(pair(delta, t + dt), P)
    assert s0 - s1 == pytest.approx(P.energy * dt, rel=1e-9, abs=1e-12)


def test_continuous_phase_matches_psi_angle():
    rng = np.random.default_rng(5)
    for d in rng.uniform(-32, 32, 100):
        cfg = pair(d, 0.7)
        diff = phase_plane_continuous(cfg, P) - cmath.phase(psi_plane(cfg, P))
        assert abs((diff + math.pi) % (2 * math.pi) - math.pi) < 1e-12


def test_principal_phase_differs_by_branch_only():
    rng = np.random.default_rng(6)
    for d in rng.uniform(-32, 32, 100):
        diff = phase_plane(pair(d), P) - phase_plane_continuous(pair(d), P)
        k = diff / math.pi
        assert abs(k - round(k)) < 1e-12


def test_plane_ops_reject_three_d():
    with pytest.raises(ValidationError):
        psi_plane(Configuration(Kind.PAIR3D, (1,) * 6), P)


# -- two-slit ------------------------------------------------------------------

T = validate_twoslit_params({"k": 2.0, "slit_half_sep": 0.5})


def cfg3(*coords):
    return Configuration(Kind.PAIR3D, coords)


def test_slit_distances_examples():
    with pytest.raises(SlitSingularity):
        slit_distances(cfg3(0, 0.5, 0, 1, 1, 1), T)
    d = slit_distances(cfg3(1, 0.5, 0, 2, 0, 0), T)
    assert d.r1A == 1.0
    assert d.r1B == pytest.approx(math.sqrt(1 + 4 * 0.25))


def test_mirror_pair_distances():
    d = slit_distances(Configuration(Kind.PAIR3D, mirror_partner((1.3, 0.7, -0.2))), T)
    assert d.r1A == d.r2B and d.r1B == d.r2A


def test_psi_twoslit_matches_oracle():
    rng = np.random.default_rng(1)
    n = twoslit_norm(T)
    for c in rng.uniform([0.1, -3, -2, 0.1, -3, -2], [5, 3, 2, 5, 3, 2], size=(50, 6)):
        val = psi_twoslit(cfg3(*c), T)
        assert abs(val - oracles.twoslit_psi(c, 2.0, 0.5) / n) < 1e-14 * abs(oracles.twoslit_psi(c, 2.0, 0.5) / n) + 1e-16


def test_mirror_terms_coincide_on_axis():
    # with y1 = 0 all four distances agree, so the two terms are equal
    c = mirror_partner((1.2, 0.0, 0.4))
    r = slit_distances(cfg3(*c), T)
    expect = 2 * cmath.exp(1j * 2.0 * (r.r1A + r.r2B)) / (r.r1A * r.r2B)
    assert abs(psi_twoslit(cfg3(*c), T, normalized=False) - expect) < 1e-14


@given(st.lists(st.floats(0.05, 6), min_size=6, max_size=6))
@settings(max_examples=50)
def test_twoslit_symmetries(c):
    c[1] -= 3
    c[4] -= 3
    c[2] -= 3
    c[5] -= 3
    try:
        base = psi_twoslit(cfg3(*c), T, normalized=False)
    except SlitSingularity:
        return
    swapped = psi_twoslit(cfg3(*c[3:], *c[:3]), T, normalized=False)
    mirrored = psi_twoslit(cfg3(c[0], -c[1], c[2], c[3], -c[4], c[5]), T, normalized=False)
    assert abs(swapped - base) <= 1e-13 * abs(base) + 1e-300
    assert abs(mirrored - base) <= 1e-13 * abs(base) + 1e-300


def test_density_twoslit_matches_modulus():
    rng = np.random.default_rng(2)
    for c in rng.uniform([0.1, -3, -2, 0.1, -3, -2], [5, 3, 2, 5, 3, 2], size=(30, 6)):
        cfg = cfg3(*c)
        assert prob_density_twoslit(cfg, T) == pytest.approx(abs(psi_twoslit(cfg, T)) ** 2, rel=1e-10, abs=1e-300)


def test_phase_twoslit_is_psi_angle():
    rng = np.random.default_rng(4)
    for c in rng.uniform([0.1, -3, -2, 0.1, -3, -2], [5, 3, 2, 5, 3, 2], size=(100, 6)):
        cfg = cfg3(*c)
        diff = phase_twoslit(cfg, T) - cmath.phase(psi_twoslit(cfg, T))
        assert abs((diff + math.pi) % (2 * math.pi) - math.pi) < 1e-12


def test_phase_twoslit_zero_when_both_terms_real_positive():
    # on the axis with k*2r = 2*pi the amplitude is real and positive
    r = math.pi / 2.0
    x = math.sqrt(r * r - 0.25)
    assert phase_twoslit(cfg3(x, 0, 0, x, 0, 0), T) == pytest.approx(0.0, abs=1e-12)


def test_mirror_phase_on_axis():
    c = mirror_partner((2.3, 0.0, -0.7))
    r = slit_distances(cfg3(*c), T)
    expect = 2.0 * (r.r1A + r.r2B)
    diff = phase_twoslit(cfg3(*c), T) - expect
    assert abs((diff + math.pi) % (2 * math.pi) - math.pi) < 1e-12


def test_phase_twoslit_node():
    # r1A=1, r1B=sqrt2, r2A=2, r2B=2sqrt2: equal moduli; k makes the phases opposite
    k = math.pi / (math.sqrt(2) - 1)
    params = validate_twoslit_params({"k": k, "slit_half_sep": 0.5})
    cfg = cfg3(1.0, 0.5, 0.0, math.sqrt(1.75), 2.0, 0.0)
    assert abs(psi_twoslit(cfg, params, normalized=False)) < 1e-14
    with pytest.raises(NodeEncountered):
        phase_twoslit(cfg, params)


def test_twoslit_norm_against_cartesian_oracle():
    params = validate_twoslit_params({"k": 2.0, "slit_half_sep": 0.5, "domain_box": oracles.SMALL_BOX})
    n = twoslit_norm(params)
    assert abs(n - oracles.SMALL_BOX_NORM) / oracles.SMALL_BOX_NORM < 1e-3
    finer = twoslit_norm(params, resolution=(96, 192, 160))
    assert abs(finer - oracles.SMALL_BOX_NORM) < abs(n - oracles.SMALL_BOX_NORM)


def test_twoslit_norm_cached():
    a = twoslit_norm(T)
    b = twoslit_norm(validate_twoslit_params({"k": 2.0, "slit_half_sep": 0.5}))
    assert a == b
