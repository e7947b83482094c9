import json
import math

import numpy as np
import pytest

import oracles
from pilotwave.dynamics import IntegratorSettings
from pilotwave.equilibrium import (
    Ensemble,
    Provenance,
    compare_distribution,
    evolve_ensemble,
    plane_cdf,
    point_mass_ensemble,
    qeh_report,
    sample_initial,
    sampler_ks_bound,
    wrap_delta,
)
from pilotwave.errors import TooManyFailures, ValidationError
from pilotwave.guidance import plane_field
from pilotwave.model import validate_plane_params
from pilotwave.wavefunction import prob_density_plane

P = validate_plane_params({"a": 0.8, "b": 0.6, "p": 1.0})
L = 21 * math.pi


def density(d):
    return prob_density_plane(d, P)


def l1_oracle(deltas, bins=128):
    edges = np.linspace(-L / 2, L / 2, bins + 1)
    prob = np.diff(oracles.plane_cdf(edges, 0.8, 0.6, 1.0))
    counts, _ = np.histogram(deltas, edges)
    return np.abs(counts / len(deltas) - prob).sum()


def test_cdf_table_matches_closed_form():
    cdf = plane_cdf(P)
    np.testing.assert_allclose(cdf.values, oracles.plane_cdf(cdf.grid, 0.8, 0.6, 1.0), atol=1e-13)
    # between nodes: linear interpolation error h^2/8 * max|rho'|
    h = cdf.grid[1] - cdf.grid[0]
    bound = h * h / 8 * 4 * 0.48 / L
    x = np.linspace(-L / 2, L / 2, 10007)
    assert np.abs(cdf(x) - oracles.plane_cdf(x, 0.8, 0.6, 1.0)).max() < 1.01 * bound + 1e-13


def test_sampler_large_n():
    ens = sample_initial(P, 100_000, seed=11)
    assert l1_oracle(ens.deltas) < 0.02
    cmp = compare_distribution(ens, density, 128)
    assert cmp.l1_distance < 0.02
    assert cmp.l1_distance == pytest.approx(l1_oracle(ens.deltas), abs=1e-9)


def test_iid_sampler_passes_ks():
    n = 20_000
    ens = sample_initial(P, n, seed=12, stratified=False)
    cmp = compare_distribution(ens, density)
    assert cmp.ks_statistic < sampler_ks_bound(n)


def test_sampler_deterministic():
    a = sample_initial(P, 1000, seed=5)
    b = sample_initial(P, 1000, seed=5)
    c = sample_initial(P, 1000, seed=6)
    np.testing.assert_array_equal(a.coords, b.coords)
    assert not np.array_equal(a.coords, c.coords)
    assert a.provenance is Provenance.SAMPLED and a.seed == 5 and a.time == 0.0


def test_member_streams_do_not_depend_on_n():
    # the center-of-mass draw for member i depends only on (seed, i)
    a = sample_initial(P, 100, seed=5, stratified=False)
    b = sample_initial(P, 300, seed=5, stratified=False)
    np.testing.assert_array_equal(a.coords, b.coords[:100])


def test_sampler_stays_in_box():
    ens = sample_initial(P, 5000, seed=1)
    assert np.all(np.abs(ens.deltas) < L / 2)
    assert np.all(np.abs(ens.centers) <= L / 2)


def test_density_floor():
    assert density(np.pi / 2) == pytest.approx((1 - 2 * 0.48) / L)
    assert (1 - 2 * 0.48) / L > 0


def test_evolve_identity():
    ens = sample_initial(P, 200, seed=3)
    same = evolve_ensemble(ens, plane_field(P), 0.0)
    np.testing.assert_array_equal(same.coords, ens.coords)
    assert same.failures == {}


def test_evolve_conserves_com_and_first_integral():
    ens = sample_initial(P, 500, seed=4)
    out = evolve_ensemble(ens, plane_field(P), 5.0)
    assert out.time == 5.0
    assert np.abs(out.centers - ens.centers).max() < 1e-8
    g0 = oracles.g_closed(ens.deltas, 0.8, 0.6, 1.0)
    g1 = oracles.g_closed(out.deltas, 0.8, 0.6, 1.0) - 5.0
    assert np.abs(g1 - g0).max() < 1e-7


def test_evolve_backward():
    ens = sample_initial(P, 100, seed=4)
    fwd = evolve_ensemble(ens, plane_field(P), 2.0)
    back = evolve_ensemble(fwd, plane_field(P), 0.0)
    np.testing.assert_allclose(back.coords, ens.coords, atol=1e-7)


def test_periodic_wrap():
    coords = np.array([[20.0, -20.0], [-1.0, 1.0]])
    wrapped = wrap_delta(coords, P)
    d = wrapped[:, 0] - wrapped[:, 1]
    assert d[0] == pytest.approx(40.0 - L)
    assert d[1] == pytest.approx(-2.0)
    np.testing.assert_allclose(wrapped.sum(axis=1), coords.sum(axis=1), atol=1e-14)


def test_evolve_failures_counted():
    def field(t, y):
        v = np.ones_like(y)
        v[:, 1] = -1.0
        v[y[:, 0] > 1.0] = np.nan
        return v

    coords = np.zeros((1000, 2))
    coords[:5, 0] = 0.9
    ens = Ensemble(coords, 0.0, None, Provenance.USER, P)
    out = evolve_ensemble(ens, field, 0.5)
    assert len(out) == 995
    assert out.failures == {"field_failure": 5}
    coords[:20, 0] = 0.9
    with pytest.raises(TooManyFailures):
        evolve_ensemble(Ensemble(coords, 0.0, None, Provenance.USER, P), field, 0.5)


def test_point_mass_far_from_density():
    ens = point_mass_ensemble(P, 1000)
    cmp = compare_distribution(ens, density)
    assert cmp.l1_distance > 1.5
    assert cmp.ks_statistic > 0.4


def test_uniform_vs_uniform_shrinks():
    flat = lambda d: np.full_like(np.asarray(d, dtype=float), 1 / 10.0)  # noqa: E731
    rng = np.random.default_rng(0)
    l1 = [compare_distribution(rng.uniform(-5, 5, n), flat, 32, support=(-5, 5)).l1_distance for n in (1000, 100_000)]
    assert l1[1] < l1[0] / 5


def test_compare_distribution_validation():
    ens = sample_initial(P, 100, seed=1)
    with pytest.raises(ValidationError):
        compare_distribution(ens, density, bins=4)
    with pytest.raises(ValidationError):
        compare_distribution(np.array([0.0]), density)
    with pytest.raises(ValidationError):
        Ensemble(np.zeros((0, 2)), 0.0, None, Provenance.USER)


def test_qeh_report_small():
    rep = qeh_report(P, 2000, 1.0, seed=9)
    assert rep["excluded"] == 0
    assert rep["final"]["l1"] < 0.05
    assert rep["point_mass_l1"] > 1.5
    assert rep["crossing"]["coincidence"] is False
    assert rep["crossing"]["monotone"] is True
    again = qeh_report(P, 2000, 1.0, seed=9)
    assert json.dumps(rep, sort_keys=True) == json.dumps(again, sort_keys=True)


def test_qeh_zero_time():
    rep = qeh_report(P, 1000, 0.0, seed=2)
    assert rep["final"] == rep["initial"]


def test_ensemble_csv(tmp_path):
    ens = sample_initial(P, 10, seed=1)
    ens.to_csv(tmp_path / "e.csv")
    rows = (tmp_path / "e.csv").read_text().splitlines()
    assert rows[0] == "member,t,x1,x2"
    assert len(rows) == 11
    assert float(rows[1].split(",")[2]) == ens.coords[0, 0]


def test_evolve_uses_settings():
    ens = sample_initial(P, 50, seed=1)
    a = evolve_ensemble(ens, plane_field(P), 1.0, IntegratorSettings(rel_tol=1e-6, abs_tol=1e-8))
    b = evolve_ensemble(ens, plane_field(P), 1.0)
    assert not np.array_equal(a.coords, b.coords)
    assert np.abs(a.coords - b.coords).max() < 1e-4
