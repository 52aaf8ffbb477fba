import json
import math

import numpy as np
import pytest

from stablebranch.offspring import build_offspring_law
from stablebranch.ou_hermite import OUParams, PolynomialFn, generator_apply, hermite_poly
from stablebranch.simulator import (
    PopulationCapExceeded,
    SimConfig,
    decompose,
    functional,
    run_replicate,
    simulate,
    simulate_gw_counts,
    track_martingales,
)
from stablebranch.verify import exact_small_population_probability

LAW = build_offspring_law(2.0, 0.5)  # a = 1, lam = 1
OU = OUParams()  # mu = 1, phi = N(0, 1)
R = 10_000


def _cfg(**kw):
    base = dict(offspring=LAW, ou=OU, x0=(0.0,), horizon_T=7, replicates=R, seed=0)
    base.update(kw)
    return SimConfig(**base)


@pytest.fixture(scope="module")
def runs():
    return simulate(_cfg())


@pytest.fixture(scope="module")
def fine_runs():
    return simulate(_cfg(x0=(0.5,), horizon_T=3, replicates=4000, refinement=16, seed=1))


def _within(values, target, k=3.0):
    v = np.asarray(values, dtype=float)
    se = v.std(ddof=1) / math.sqrt(len(v))
    return abs(v.mean() - target) <= k * se, (v.mean(), target, se)


# ---------------------------------------------------------------------------
# configuration


def test_config_validation():
    with pytest.raises(ValueError):
        _cfg(horizon_T=2.5)
    with pytest.raises(ValueError):
        _cfg(x0=(0.0, 1.0))
    with pytest.raises(ValueError):
        _cfg(max_particles=0)
    assert _cfg(horizon_T=3.0).horizon_T == 3
    np.testing.assert_array_equal(_cfg(horizon_T=3).snapshot_grid, [0, 1, 2, 3])


def test_zero_horizon_is_single_particle():
    s = run_replicate(_cfg(horizon_T=0, x0=(1.5,), replicates=1))
    assert s.population()[0].tolist() == [1.0]
    np.testing.assert_array_equal(s.positions_at(0), [[1.5]])


# ---------------------------------------------------------------------------
# moments (many-to-one)


def test_mean_population_T5():
    s = simulate(_cfg(horizon_T=5, seed=5))
    ok, info = _within(s.population()[:, 5], math.exp(5.0))
    assert ok, info


def test_constant_functional_is_population(runs):
    one = PolynomialFn.constant(1.0)
    np.testing.assert_array_equal(functional(runs, one, 4), runs.population()[:, 4])


def test_linear_functional_mean():
    s = simulate(_cfg(x0=(2.0,), horizon_T=2, seed=3))
    ok, info = _within(functional(s, PolynomialFn.from_dict({1: 1.0}), 2), 2.0)
    assert ok, info


@pytest.mark.parametrize("p", [1, 2])
def test_eigenfunction_means(runs, p):
    h = hermite_poly(OU, p)
    for t in (1, 2, 3):
        ok, info = _within(functional(runs, h, t), math.exp((1 - p) * t) * float(h(0.0)))
        assert ok, (t, info)


def test_count_distribution_matches_forward_equation(runs):
    # P(|X_2| <= n), exact from the forward equation of the count chain
    pop = runs.population()[:, 2]
    for n in (1, 2, 3, 5, 8):
        p = exact_small_population_probability(LAW, 2.0, n)
        z = (np.mean(pop <= n) - p) / math.sqrt(p * (1 - p) / len(pop))
        assert abs(z) < 4, (n, z)


def test_gw_counts_match_forward_equation():
    counts, below = simulate_gw_counts(LAW, 3.0, 10, 50_000, seed=2)
    p = exact_small_population_probability(LAW, 3.0, 10)
    assert abs(below.mean() - p) < 4 * math.sqrt(p * (1 - p) / len(below))
    assert np.all(counts[below] <= 10) and np.all(counts[~below] > 10)


# ---------------------------------------------------------------------------
# structural invariants


def test_no_extinction_and_initial_state(runs):
    pop = runs.population()
    assert runs.abort_rate == 0
    assert np.all(pop[:, 0] == 1) and np.all(pop >= 1)
    assert np.all(np.diff(pop, axis=1) >= 0)  # p_0 = 0: counts never drop
    assert np.all(runs.W() > 0)


def test_reproducible_across_workers_and_chunks():
    cfg = _cfg(horizon_T=4, replicates=300, seed=9)
    a = simulate(cfg, chunk=4096)
    b = simulate(SimConfig(**{**cfg.__dict__, "workers": 1}), chunk=7)
    np.testing.assert_array_equal(a.counts, b.counts)
    np.testing.assert_array_equal(a.power_sums, b.power_sums)


def test_single_replicate_matches_batch():
    cfg = _cfg(horizon_T=4, replicates=20, seed=4)
    batch = simulate(cfg)
    one = run_replicate(cfg, replicate=13)
    np.testing.assert_array_equal(one.counts[0], batch.counts[13])
    np.testing.assert_array_equal(one.power_sums[0], batch.power_sums[13])
    # power sums agree with the kept positions
    for t in range(5):
        x = one.positions_at(t)[:, 0]
        assert functional(one, PolynomialFn.from_dict({3: 1.0}), t)[0] == pytest.approx(np.sum(x**3))


def test_population_cap_aborts_not_truncates():
    cfg = _cfg(horizon_T=6, replicates=200, max_particles=50, seed=6)
    s = simulate(cfg)
    assert 0 < s.abort_rate < 1
    assert np.all(np.isnan(s.population()[~s.ok]))
    assert np.all(s.population()[s.ok] <= 50)
    bad = int(np.flatnonzero(~s.ok)[0])
    with pytest.raises(PopulationCapExceeded):
        run_replicate(cfg, replicate=bad)


def test_degree_guard(runs):
    with pytest.raises(ValueError):
        runs.pairing(PolynomialFn.from_dict({5: 1.0}))
    with pytest.raises(ValueError):
        functional(runs, PolynomialFn.constant(1.0), 1.5)


def test_two_dimensional_run():
    ou = OUParams(d=2)
    s = simulate(SimConfig(LAW, ou, x0=(1.0, -0.5), horizon_T=3, replicates=4000, seed=8))
    h = hermite_poly(ou, (1, 0))
    ok, info = _within(functional(s, h, 3), float(h(np.array([1.0, -0.5]))))
    assert ok, info


# ---------------------------------------------------------------------------
# decomposition


def test_telescoping_exact(runs):
    g = PolynomialFn.from_dict({0: 0.3, 1: -1.0, 3: 0.25})
    D = decompose(runs, g, 6)
    assert D.residual().max() < 1e-9
    assert np.all(D.M[:, 6] == D.terminal)
    np.testing.assert_array_equal(D.delta[:, 0], D.terminal)


def test_increments_centered(runs):
    D = decompose(runs, hermite_poly(OU, 1) + hermite_poly(OU, 2), 7)
    for k in range(7):
        ok, info = _within(D.M[:, k], 0.0)
        assert ok, (k, info)


def test_increment_norm_slope(runs):
    # L^{1+gamma} norm of M_k^t[h_1] against k, gamma = 0.25
    gam, t = 0.25, 7
    D = decompose(runs, hermite_poly(OU, 1), t)
    norms = np.mean(np.abs(D.M[:, :t]) ** (1 + gam), axis=0) ** (1 / (1 + gam))
    slope = np.polyfit(np.arange(t), np.log(norms), 1)[0]
    predicted = (gam * 1.0 - 1 * 1.0 * (1 + gam)) / (1 + gam)
    assert abs(slope - predicted) <= 0.15, slope


def test_increments_are_martingale_differences(runs):
    # E[M_k phi(M_j)] = 0 for the earlier increment j > k and bounded phi
    D = decompose(runs, hermite_poly(OU, 1), 7)
    M = D.M[:, :7]
    for k in range(7):
        for j in range(k + 1, 7):
            v = M[:, k] * np.tanh(M[:, j] / np.median(np.abs(M[:, j])))
            ok, info = _within(v, 0.0, k=4.0)
            assert ok, (k, j, info)


# ---------------------------------------------------------------------------
# martingales


def test_W_and_H_means(runs):
    tr = track_martingales(runs, [1, 2], hermite_poly(OU, 1), 1.0)
    assert np.all(tr.W[:, 0] == 1)
    for t in runs.times[1:]:
        ok, info = _within(tr.W[:, t], 1.0)
        assert ok, (t, info)
    for p, H in tr.H.items():
        h0 = float(hermite_poly(OU, p)(0.0))
        assert np.all(H[:, 0] == pytest.approx(h0))
        # H^2 carries an e^t factor on an infinite-variance pairing, so the
        # sample SE stops being a usable scale after a few steps
        for t in (1, 2, 3):
            ok, info = _within(H[:, t], h0)
            assert ok, (p, t, info)


def test_eigenfunction_martingale_equals_H(runs):
    tr = track_martingales(runs, [2], hermite_poly(OU, 2), 2.0)
    np.testing.assert_array_equal(tr.M, tr.H[(2,)])


def test_compensated_martingale(fine_runs):
    h = PolynomialFn.from_dict({2: 1.0})
    assert np.any(generator_apply(OU, h).coeffs + h.coeffs)
    tr = track_martingales(fine_runs, [], h, 1.0)
    assert np.all(tr.M[:, 0] == 0.25)
    for t in (1, 2, 3):
        ok, info = _within(tr.M[:, t], 0.25)
        assert ok, (t, info)
    with pytest.raises(ValueError):
        track_martingales(simulate(_cfg(horizon_T=1, replicates=2)), [], h, 1.0)


def test_W_cauchy_decay(runs):
    gam = 0.25
    W = runs.W()
    s = np.arange(1, 7)
    e = [np.mean(np.abs(W[:, 7] - W[:, k])) for k in s]
    slope = np.polyfit(s, np.log(e), 1)[0]
    assert slope <= -1.0 * gam / (1 + gam) + 0.1, slope


# ---------------------------------------------------------------------------
# export


def test_csv_and_jsonl(tmp_path, runs):
    small = simulate(_cfg(horizon_T=2, replicates=3, seed=2))
    small.to_csv(tmp_path / "s.csv", {"x": PolynomialFn.from_dict({1: 1.0})})
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "replicate,t,population,W,x" and len(rows) == 1 + 3 * 3
    one = run_replicate(_cfg(horizon_T=2, replicates=1, seed=2))
    one.dump_jsonl(tmp_path / "s.jsonl")
    recs = [json.loads(line) for line in (tmp_path / "s.jsonl").read_text().splitlines()]
    assert [r["t"] for r in recs] == [0, 1, 2]
    assert [len(r["positions"]) for r in recs] == one.population()[0].astype(int).tolist()
    with pytest.raises(ValueError):
        small.dump_jsonl(tmp_path / "x.jsonl")
