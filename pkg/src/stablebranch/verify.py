"""Statistical checks tying simulations to the limit theory.

Statistics here have infinite variance, so location and scale summaries are
medians, and the uncertainty of empirical characteristic functions comes from
a replicate bootstrap driven by a stats seed separate from the simulation
seed.

Sign convention.  For a centred heavy-tailed offspring count,
E exp(i theta (xi - m)) = 1 + (m-1)(-i theta)^(1+beta) + ..., so the
characteristic functions observed in simulation carry the complex conjugate
of Z and m as defined in :mod:`stable_limits`.  Targets built below use
``conj``; for real parameters (odd g, for instance) nothing changes.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

from .offspring import OffspringLaw
from .ou_hermite import OUParams, PolynomialFn, expand_in_hermite, hermite_poly, semigroup_apply
from .simulator import SimConfig, SnapshotSet, simulate, simulate_gw_counts
from .stable_limits import RegimeReport, StableLimitParams, classify_regime, compute_Z, limit_cf

__all__ = [
    "ECFReport",
    "ScalingReport",
    "SmallPopulationReport",
    "SubsystemReport",
    "as_limit_test",
    "ecf_test",
    "empirical_cf",
    "exact_small_population_probability",
    "scaling_exponent",
    "small_population_check",
    "subsystem_cf_check",
]

BOOTSTRAP_DRAWS = 200


def _jsonable(v):
    if isinstance(v, np.ndarray):
        v = v.tolist()
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, list):
        return [_jsonable(u) for u in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(u) for k, u in v.items()}
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


class _Report:
    def to_json(self) -> str:
        return json.dumps({k: _jsonable(v) for k, v in asdict(self).items()})


def _pool(runs) -> SnapshotSet | list:
    if isinstance(runs, SnapshotSet):
        return [runs]
    return list(runs)


def _values(runs, g: PolynomialFn, t: int):
    """(<X_t, g>, |X_t|) over all non-aborted replicates of all runs."""
    vals, pops = [], []
    for s in _pool(runs):
        ok = s.ok
        vals.append(s.pairing(g)[ok, t])
        pops.append(s.population()[ok, t])
    return np.concatenate(vals), np.concatenate(pops)


# ---------------------------------------------------------------------------
# empirical characteristic functions


def empirical_cf(values, theta_grid, stats_seed: int = 0, draws: int = BOOTSTRAP_DRAWS):
    """Replicate average of exp(i theta v) with bootstrap standard errors."""
    v = np.asarray(values, dtype=float)
    th = np.asarray(theta_grid, dtype=float)
    E = np.exp(1j * np.outer(v, th))
    est = E.mean(axis=0)
    rng = np.random.default_rng(stats_seed)
    n = len(v)
    boots = np.empty((draws, len(th)), dtype=complex)
    for b in range(draws):
        w = np.bincount(rng.integers(0, n, n), minlength=n)
        boots[b] = w @ E / n
    se = np.sqrt(np.var(boots.real, axis=0) + np.var(boots.imag, axis=0))
    return est, se, E


@dataclass
class ECFReport(_Report):
    t: int
    theta_grid: np.ndarray
    empirical_cf: np.ndarray
    standard_error: np.ndarray
    target_cf: np.ndarray
    max_abs_gap: float
    replicate_count: int
    split_half_max_z: float
    normalization: str

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta", "ecf_re", "ecf_im", "se", "target_re", "target_im"])
            for row in zip(self.theta_grid, self.empirical_cf, self.standard_error, self.target_cf):
                th, e, s, tg = row
                w.writerow([th, e.real, e.imag, s, tg.real, tg.imag])


def ecf_test(runs, g: PolynomialFn, regime: RegimeReport, params, t: int, theta_grid,
             stats_seed: int = 0, conjugate: bool = True) -> ECFReport:
    """Compare the ECF of <X_t,g>/F_t with the stable limit exp(theta^(1+beta) m)."""
    if regime.regime == "large":
        raise ValueError("the large regime has no CF target; use as_limit_test")
    if isinstance(params, StableLimitParams):
        m, beta = params.m, params.beta
    else:
        m, beta = complex(params), regime.beta
    vals, pops = _values(runs, g, t)
    if not np.any(expand_in_hermite(_ou_of(runs), g).coeffs):
        vals = np.zeros_like(vals)
    F = regime.normalization(t, pops)
    z = vals / F
    th = np.asarray(theta_grid, dtype=float)
    est, se, E = empirical_cf(z, th, stats_seed)
    target = np.atleast_1d(limit_cf(np.conj(m) if conjugate else m, th, beta))
    half = len(z) // 2
    e1, e2 = E[:half].mean(axis=0), E[half:].mean(axis=0)
    s1 = np.sqrt((np.var(E[:half].real, 0) + np.var(E[:half].imag, 0)) / max(half, 1))
    s2 = np.sqrt((np.var(E[half:].real, 0) + np.var(E[half:].imag, 0)) / max(len(z) - half, 1))
    pooled = np.sqrt(s1**2 + s2**2)
    zsplit = np.where(pooled > 0, np.abs(e1 - e2) / np.where(pooled > 0, pooled, 1.0), 0.0)
    return ECFReport(t=int(t), theta_grid=th, empirical_cf=est, standard_error=se, target_cf=target,
                     max_abs_gap=float(np.max(np.abs(est - target))), replicate_count=len(z),
                     split_half_max_z=float(zsplit.max()),
                     normalization=regime.normalization_descriptor)


def _ou_of(runs) -> OUParams:
    return _pool(runs)[0].config.ou


def _lam_of(runs) -> float:
    return _pool(runs)[0].lam


# ---------------------------------------------------------------------------
# scaling


@dataclass
class ScalingReport(_Report):
    times: np.ndarray
    scale: np.ndarray
    slope: float
    band: tuple
    theoretical: float | None
    extra: dict = field(default_factory=dict)

    def within_band(self, tol: float) -> bool:
        return self.theoretical is not None and abs(self.slope - self.theoretical) <= tol


def _fit_slope(t, y) -> float:
    return float(np.polyfit(t, y, 1)[0])


def _bootstrap_slope(t, rows, transform, stats_seed, draws=BOOTSTRAP_DRAWS):
    """rows: (R, len(t)) replicate values; transform: per-column robust summary -> log scale."""
    rng = np.random.default_rng(stats_seed)
    n = rows.shape[0]
    out = np.empty(draws)
    for b in range(draws):
        out[b] = _fit_slope(t, transform(rows[rng.integers(0, n, n)]))
    return float(np.quantile(out, 0.025)), float(np.quantile(out, 0.975))


def scaling_exponent(runs, g: PolynomialFn, t_grid, stats_seed: int = 0) -> ScalingReport:
    """Growth exponent of median |<X_t, g>| against the regime prediction."""
    runs = _pool(runs)
    ou, lam = _ou_of(runs), _lam_of(runs)
    beta = runs[0].config.offspring.beta
    t = np.asarray(t_grid, dtype=int)
    rows = np.concatenate([s.pairing(g)[s.ok][:, t] for s in runs])
    kappa = expand_in_hermite(ou, g).kappa
    log_corr = np.zeros(len(t), dtype=float)
    if kappa == 0:
        theo, regime = lam, "population"
    else:
        rep = classify_regime(ou, lam, beta, g)
        regime = rep.regime
        if regime == "large":
            theo = lam - kappa * ou.mu
        else:
            theo = lam / (1.0 + beta)
            if regime == "critical":
                log_corr = np.log(t.astype(float)) / (1.0 + beta)

    def transform(r):
        return np.log(np.median(np.abs(r), axis=0)) - log_corr

    scale = np.median(np.abs(rows), axis=0)
    slope = _fit_slope(t, transform(rows))
    band = _bootstrap_slope(t, rows, transform, stats_seed)
    return ScalingReport(times=t, scale=scale, slope=slope, band=band, theoretical=theo,
                         extra={"regime": regime, "replicates": rows.shape[0]})


def as_limit_test(runs, g: PolynomialFn, regime: RegimeReport, t_grid, stats_seed: int = 0) -> ScalingReport:
    """Path behaviour of Y_t = <X_t,g> e^{-(lam - kappa mu) t} in the large regime.

    ``scale`` holds the median of |Y_{t+1} - Y_t| for consecutive grid times
    and ``slope`` its log-decay rate.  ``extra`` carries the mean of Y_t with
    standard errors and the correlation of Y_T with sum_{|p|=kappa} a_p H_T^p.
    """
    if regime.regime != "large":
        raise ValueError("as_limit_test applies to the large regime")
    runs = _pool(runs)
    ou, lam = _ou_of(runs), _lam_of(runs)
    kappa = int(regime.kappa_g)
    t = np.asarray(t_grid, dtype=int)
    g = expand_in_hermite(ou, g)
    Y = np.concatenate([s.pairing(g)[s.ok][:, t] for s in runs]) * np.exp(-(lam - kappa * ou.mu) * t)
    inc = np.abs(np.diff(Y, axis=1))
    tm = t[:-1]

    def transform(r):
        return np.log(np.median(r, axis=0))

    slope = _fit_slope(tm, transform(inc))
    band = _bootstrap_slope(tm, inc, transform, stats_seed)

    a = g.hermite_coeffs
    target = np.zeros(Y.shape[0])
    for p in zip(*np.nonzero(np.indices(a.shape).sum(axis=0) == kappa)):
        if a[p] != 0:
            hp = hermite_poly(ou, p)
            Hp = np.concatenate([s.pairing(hp)[s.ok][:, t[-1]] for s in runs])
            target += a[p] * Hp * math.exp(-(lam - kappa * ou.mu) * t[-1])
    corr = float(np.corrcoef(Y[:, -1], target)[0, 1]) if np.std(target) > 0 else float("nan")
    x0 = np.array(runs[0].config.x0)
    expected = [float(semigroup_apply(ou, g, s, lam)(x0)) * math.exp(-(lam - kappa * ou.mu) * s) for s in t]
    theo = kappa * ou.mu - lam * regime.beta / (1.0 + regime.beta)
    return ScalingReport(
        times=t, scale=np.median(inc, axis=0), slope=slope, band=band, theoretical=theo,
        extra={
            "mean_Y": Y.mean(axis=0),
            "se_Y": Y.std(axis=0, ddof=1) / math.sqrt(Y.shape[0]),
            "expected_Y": np.array(expected),
            "limit_correlation": corr,
            "replicates": Y.shape[0],
        },
    )


# ---------------------------------------------------------------------------
# single subsystem


@dataclass
class SubsystemReport(_Report):
    thetas: np.ndarray
    empirical: np.ndarray
    standard_error: np.ndarray
    Z: complex
    target: np.ndarray
    gaps: np.ndarray
    replicates: int
    abort_rate: float

    @property
    def gap_ratio(self) -> float:
        return float(self.gaps[1] / self.gaps[0])


def subsystem_cf_check(ou: OUParams, lam: float, offspring: OffspringLaw, g_k: PolynomialFn, x,
                       theta, replicates: int = 10**6, seed: int = 0, conjugate: bool = True):
    """E exp(i theta (<X_1^x, g_k> - T_1^lam g_k(x))) against 1 + theta^(1+beta) Z.

    ``theta`` may be a scalar (returns the absolute gap) or a sequence
    (returns a SubsystemReport; all values share the same replicates).
    """
    beta = offspring.beta
    g_k = expand_in_hermite(ou, g_k)
    scalar = np.isscalar(theta)
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if not np.any(g_k.coeffs):
        Z = 0j
        emp = np.ones(len(th), dtype=complex)
        se = np.zeros(len(th))
        ab = 0.0
    else:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        Z = compute_Z(ou, lam, beta, g_k, x)
        cfg = SimConfig(offspring, ou, x0=tuple(x), horizon_T=1, seed=seed, replicates=replicates,
                        degree=max(g_k.degree, 0))
        snap = simulate(cfg)
        if snap.abort_rate > 0:
            raise RuntimeError(f"{np.sum(~snap.ok)} subsystem replicates hit the population cap")
        ab = snap.abort_rate
        centre = float(semigroup_apply(ou, g_k, 1.0, lam)(x))
        v = snap.pairing(g_k)[:, 1] - centre
        E = np.exp(1j * np.outer(v, th))
        emp = E.mean(axis=0)
        se = np.sqrt((np.var(E.real, 0) + np.var(E.imag, 0)) / len(v))
    Zt = np.conj(Z) if conjugate else Z
    target = 1.0 + th ** (1.0 + beta) * Zt
    gaps = np.abs(emp - target)
    if scalar:
        return float(gaps[0])
    return SubsystemReport(thetas=th, empirical=emp, standard_error=se, Z=complex(Z), target=target,
                           gaps=gaps, replicates=replicates, abort_rate=ab)


# ---------------------------------------------------------------------------
# small population


@dataclass
class SmallPopulationReport(_Report):
    t: float
    threshold: float
    replicates: int
    hits: int
    probability: float
    log_probability: float
    upper_bound: float | None
    predicted_log: float
    predicted_log_thinned: float
    within_tolerance: bool


def small_population_check(offspring: OffspringLaw, t: float, threshold: float, replicates: int,
                           seed: int = 0, tol: float = 1.0, use_thinned: bool = False) -> SmallPopulationReport:
    """Estimate P(|X_t| <= threshold) and compare its log with the predicted exponent.

    ``predicted_log`` is (ln f - lam t)/(m-1).  Deaths with a single child
    change nothing, so the count process equals one with intensity a(1-p_1)
    and no single-child mass; ``predicted_log_thinned`` applies the same
    formula to that process, i.e. multiplies by (1 - p_1).  The two agree
    when p_1 = 0.  With zero hits the probability is reported as a 95%
    upper bound (3/replicates) and the tolerance check uses that bound.
    """
    lam, m, p1 = offspring.lam, offspring.m, offspring.p1
    thr = int(math.floor(threshold))
    pred = (math.log(threshold) - lam * t) / (m - 1.0) if threshold > 0 else -math.inf
    pred_thin = pred * (1.0 - p1)
    if t == 0 or thr < 1:
        hits = replicates if thr >= 1 else 0
    else:
        _, below = simulate_gw_counts(offspring, t, thr, replicates, seed)
        hits = int(below.sum())
    if hits == 0:
        ub = 3.0 / replicates
        prob, logp = 0.0, -math.inf
        ref = math.log(ub)
    else:
        ub = None
        prob = hits / replicates
        logp = math.log(prob)
        ref = logp
    target = pred_thin if use_thinned else pred
    ok = (ref <= target + tol) if hits == 0 else abs(ref - target) <= tol
    return SmallPopulationReport(t=float(t), threshold=float(threshold), replicates=replicates, hits=hits,
                                 probability=prob, log_probability=logp, upper_bound=ub,
                                 predicted_log=pred, predicted_log_thinned=pred_thin,
                                 within_tolerance=bool(ok))


def exact_small_population_probability(offspring: OffspringLaw, t: float, threshold: int) -> float:
    """P(|X_t| <= threshold) from the Kolmogorov forward equation on {1..threshold}.

    The count only jumps upwards, so the chain restricted to the states up to
    the threshold is closed under the dynamics that matter.
    """
    K = int(threshold)
    if K < 1:
        return 0.0  # the count starts at 1 and never drops
    a, p = offspring.a, np.array([offspring.pmf(n) for n in range(K + 1)])
    Q = np.zeros((K, K))
    for n in range(1, K + 1):
        Q[n - 1, n - 1] = -n * a * (1.0 - p[1])
        for k in range(2, K - n + 2):
            Q[n - 1, n + k - 2] += n * a * p[k]
    return float(linalg.expm(Q * t)[0].sum())
