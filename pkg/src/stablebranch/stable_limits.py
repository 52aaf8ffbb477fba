"""Parameters of the (1+beta)-stable limits of the spatial fluctuations.

Every quantity reduces to Gaussian expectations of ``(i f)^(1+beta)`` for a
polynomial f.  Since

    (i f)^(1+beta) = |f|^(1+beta) exp(i sgn(f) pi (1+beta) / 2),

these are real integrals of |f|^(1+beta) and |f|^(1+beta) sgn f, whose
integrands have kinks at the real roots of f.  In one dimension they are
computed by Gauss-Legendre on segments broken at those roots, with a cosine
map that clusters nodes at the segment ends; each value is computed at two
orders and the results must agree.  Higher dimensions integrate the first
coordinate this way and the remaining ones by Gauss-Hermite.

The notation follows the package README: T_s^lam = e^{lam s} T_s, phi is the
invariant Gaussian, kappa(g) the lowest non-vanishing Hermite level.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import polynomial as P

from .ou_hermite import (
    OUParams,
    PolynomialFn,
    QuadratureError,
    expand_in_hermite,
    from_hermite,
    hermite_poly,
    semigroup_apply,
)

__all__ = [
    "RegimeMismatch",
    "RegimeReport",
    "StableLimitParams",
    "classify_regime",
    "complex_power_1pbeta",
    "compute_Z",
    "compute_m_bar",
    "compute_m_k",
    "compute_m_series",
    "limit_cf",
    "m_k_eigen_closed_form",
    "power_expectation",
]

CUT_TOL = 1e-12
CRITICAL_RTOL = 1e-9
_L = 12.0  # truncation of the standard normal range
_FIXED_BREAKS = np.arange(-_L, _L + 1e-9, 3.0)


class RegimeMismatch(ValueError):
    """A regime-specific quantity was requested in the wrong regime."""


# ---------------------------------------------------------------------------
# branch of the complex power


def complex_power_1pbeta(z, beta: float):
    """z^(1+beta) on the principal branch, cut along the negative reals."""
    z = np.asarray(z, dtype=complex)
    if np.any((z.real < -CUT_TOL) & (z.imag == 0)):
        raise ValueError("argument lies on the branch cut (negative real axis)")
    r = np.abs(z)
    out = np.where(r > 0, r ** (1.0 + beta) * np.exp(1j * (1.0 + beta) * np.angle(z)), 0.0)
    return out[()] if out.ndim == 0 else out


def _phase(beta: float) -> complex:
    """(i)^(1+beta); (-i)^(1+beta) is its conjugate."""
    return complex(complex_power_1pbeta(1j, beta))


# ---------------------------------------------------------------------------
# one-dimensional kinked Gaussian integrals


@lru_cache(maxsize=None)
def _clustered_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes u in (0,1) and weights for int_0^1 F(u) du after u = (1-cos pi t)/2."""
    t, w = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    u = 0.5 * (1.0 - np.cos(np.pi * t))
    return u, w * 0.5 * np.pi * np.sin(np.pi * t)


def _kink_breaks(coeffs: np.ndarray, sd: float) -> np.ndarray:
    """Real parts of the roots that are close enough to the real axis to matter."""
    c = np.trim_zeros(np.asarray(coeffs, dtype=float), "b")
    if len(c) <= 1:
        return np.empty(0)
    r = P.polyroots(c)
    return np.sort(r.real[np.abs(r.imag) <= max(sd, 1e-300) * 2.0])


def _gauss_kink_moments(coeffs, means, sd: float, beta: float, n: int, breaks=None):
    """E|f(Y)|^(1+beta) and E|f(Y)|^(1+beta) sgn f(Y) for Y ~ N(mean, sd^2).

    ``coeffs`` are ascending monomial coefficients of f; ``means`` is a 1-D
    array.  Returns two arrays of the shape of ``means``.
    """
    means = np.atleast_1d(np.asarray(means, dtype=float))
    b1 = 1.0 + beta
    if sd == 0.0:
        v = P.polyval(means, coeffs)
        a = np.abs(v) ** b1
        return a, a * np.sign(v)
    roots = _kink_breaks(coeffs, sd) if breaks is None else breaks
    zb = np.clip((roots[None, :] - means[:, None]) / sd, -_L, _L)
    br = np.sort(np.concatenate([np.broadcast_to(_FIXED_BREAKS, (len(means), len(_FIXED_BREAKS))), zb],
                                axis=1), axis=1)
    lo, hi = br[:, :-1], br[:, 1:]
    u, w = _clustered_rule(n)
    z = lo[..., None] + (hi - lo)[..., None] * u  # (M, S, n)
    wz = (hi - lo)[..., None] * w * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    v = P.polyval(means[:, None, None] + sd * z, coeffs)
    a = np.abs(v) ** b1 * wz
    return a.sum(axis=(1, 2)), (a * np.sign(v)).sum(axis=(1, 2))


def _combine(A, B, beta: float):
    ph = _phase(beta)
    return A * ph.real + 1j * B * ph.imag


def _gh_outer(n: int):
    y, w = np.polynomial.hermite_e.hermegauss(n)
    return y, w / math.sqrt(2.0 * math.pi)


def _power_expectation_raw(f: PolynomialFn, beta: float, mean: np.ndarray, sd: float, n: int) -> complex:
    c = f.coeffs
    d = c.ndim
    if d == 1:
        A, B = _gauss_kink_moments(c, mean[:1], sd, beta, n)
        return complex(_combine(A[0], B[0], beta))
    # the kink is resolved exactly along the leading axis only, so lead with
    # the coordinate of highest degree
    deg = [int(np.max(np.nonzero(np.moveaxis(c, ax, 0).reshape(c.shape[0], -1).any(axis=1))[0], initial=0))
           for ax in range(d)]
    lead = int(np.argmax(deg))
    if lead:
        order = [lead] + [ax for ax in range(d) if ax != lead]
        c = np.transpose(c, order)
        mean = mean[order]
    # collapse the trailing coordinates on a Gauss-Hermite grid
    y, w = _gh_outer(2 * n)
    total = 0.0 + 0.0j
    D = c.shape[0]
    k = np.arange(D)
    for idx in np.ndindex(*(len(y),) * (d - 1)):
        pts = mean[1:] + sd * y[list(idx)]
        wt = float(np.prod(w[list(idx)]))
        c1 = c
        for ax in range(d - 1, 0, -1):
            c1 = np.tensordot(c1, pts[ax - 1] ** k, axes=([ax], [0]))
        A, B = _gauss_kink_moments(c1, mean[:1], sd, beta, n)
        total += wt * complex(_combine(A[0], B[0], beta))
    return total


def power_expectation(ou: OUParams, f: PolynomialFn, beta: float, mean=None, sd: float | None = None,
                      n: int = 24, rtol: float | None = None) -> complex:
    """E[(i f(Y))^(1+beta)] for Y ~ N(mean, sd^2 Id); defaults to Y ~ phi.

    Evaluated at orders n and 2n; raises QuadratureError if they disagree by
    more than ``rtol`` (relative to max(1, |value|) times the scale of f).
    """
    if f.d != ou.d:
        raise ValueError("dimension mismatch")
    mean = np.zeros(ou.d) if mean is None else np.atleast_1d(np.asarray(mean, dtype=float))
    sd = math.sqrt(ou.stationary_var) if sd is None else float(sd)
    if rtol is None:
        rtol = 1e-10 if ou.d == 1 else 1e-6
    if not np.any(f.coeffs):
        return 0.0j
    v1 = _power_expectation_raw(f, beta, mean, sd, n)
    v2 = _power_expectation_raw(f, beta, mean, sd, 2 * n)
    if not (np.isfinite(v1) and np.isfinite(v2)):
        raise QuadratureError("non-finite value in power expectation")
    if abs(v1 - v2) > rtol * max(1.0, abs(v2)):
        raise QuadratureError(f"quadrature refinements disagree: {v1} vs {v2}")
    return v2


# ---------------------------------------------------------------------------
# Z_h and m_k


def compute_Z(ou: OUParams, lam: float, beta: float, h: PolynomialFn, x, quad_s: int = 32,
              quad_x_order: int = 24) -> complex:
    """Z_h(x) = int_0^1 T_{1-s}^lam[ lam (T_s^lam(i h))^(1+beta) ](x) ds.

    The inner expectation over the transition kernel uses the kinked
    Gaussian rule.  Near s = 1 the kernel collapses onto x, so the s-integral
    runs in u with 1 - s = u^4, which removes the tau^{(1+beta)/2} behaviour
    when x sits on a root.  Orders (quad_s, quad_x_order) and their doubles
    must agree.
    """
    h = expand_in_hermite(ou, h)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.any(h.coeffs):
        return 0.0j

    def run(ns, nx):
        t, w = np.polynomial.legendre.leggauss(ns)
        u = 0.5 * (t + 1.0)
        w = 0.5 * w
        tau = u**4
        jac = 4.0 * u**3
        s = 1.0 - tau
        total = 0.0j
        for si, ti, ji, wi in zip(s, tau, jac, w):
            f = semigroup_apply(ou, h, si, lam)
            fac, var = ou.transition_moments(ti)
            val = _power_expectation_raw(f, beta, x * fac, math.sqrt(var), nx)
            total += wi * ji * math.exp(lam * ti) * lam * val
        return total

    v1 = run(quad_s, quad_x_order)
    v2 = run(2 * quad_s, 2 * quad_x_order)
    if not (np.isfinite(v1) and np.isfinite(v2)):
        raise QuadratureError("non-finite value in Z")
    if abs(v1 - v2) > 1e-9 * max(1.0, abs(v2)):
        raise QuadratureError(f"Z refinements disagree: {v1} vs {v2}")
    return v2


def _kappa_of(ou: OUParams, g: PolynomialFn) -> float:
    return expand_in_hermite(ou, g).kappa


def _clean(ou: OUParams, g: PolynomialFn) -> PolynomialFn:
    """g with the rounding-level coefficients below kappa set to exactly zero.

    Otherwise e^{kappa mu s} T_s would amplify them for large s.
    """
    g = expand_in_hermite(ou, g)
    k = g.kappa
    if k == 0 or k == math.inf:
        return g
    a = np.array(g.hermite_coeffs)
    a[np.indices(a.shape).sum(axis=0) < k] = 0.0
    return expand_in_hermite(ou, from_hermite(ou, a))


_MAX_SPLITS = 24


def _adaptive(rule, a: float, b: float, n: int, tol: float | None = None, rel: float = 1e-10,
              depth: int = 0) -> complex:
    """Adaptive Gauss-Legendre: ``rule(a, b, n)`` at orders n and 2n, bisecting on disagreement.

    The s-integrands are smooth except where two real roots of T_s g merge,
    which leaves a fractional-power kink in s; bisection isolates it.
    """
    v1, v2 = rule(a, b, n), rule(a, b, 2 * n)
    if tol is None:
        tol = rel * abs(v2) + 1e-14
    if abs(v1 - v2) <= tol:
        return v2
    if depth >= _MAX_SPLITS:
        raise QuadratureError(f"s-integral did not converge on [{a}, {b}]: {v1} vs {v2}")
    mid = 0.5 * (a + b)
    return (_adaptive(rule, a, mid, n, 0.5 * tol, rel, depth + 1)
            + _adaptive(rule, mid, b, n, 0.5 * tol, rel, depth + 1))


def _gl(a, b, n):
    t, w = np.polynomial.legendre.leggauss(n)
    return a + (b - a) * 0.5 * (t + 1.0), (b - a) * 0.5 * w


def _s_integral(ou, lam, beta, g, s0, s1, n, shift):
    """lam * int_{s0}^{s1} e^{(lam beta - shift (1+beta)) s} E_phi[(i T_s^shift g)^(1+beta)] ds.

    With shift = kappa mu the semigroup factor stays O(1) for large s.
    """
    rate = lam * beta - shift * (1.0 + beta)
    sd = math.sqrt(ou.stationary_var)

    def rule(a, b, m):
        total = 0.0j
        for si, wi in zip(*_gl(a, b, m)):
            f = semigroup_apply(ou, g, si, shift)
            total += wi * math.exp(rate * si) * _power_expectation_raw(f, beta, np.zeros(ou.d), sd, 24)
        return total

    return lam * _adaptive(rule, s0, s1, n)


def _m_k_alternative(ou, lam, beta, g, k, n_s=16):
    return _s_integral(ou, lam, beta, g, k, k + 1, n_s, _kappa_of(ou, g) * ou.mu)


def _m_k_definition(ou, lam, beta, g, k, n_s=16, n_x=16, n_in=16):
    """e^{-lam(k+1)} <Z_{g_k}, phi> by explicit nesting: s, then x ~ phi, then the kernel."""
    if ou.d != 1:
        raise NotImplementedError("nested definition route is implemented for d = 1")
    gk = semigroup_apply(ou, g, k, lam)
    sd_phi = math.sqrt(ou.stationary_var)
    u, wu = _clustered_rule(n_x)

    def rule(a, b, m):
        total = 0.0j
        for s, ws in zip(*_gl(a, b, m)):
            f = semigroup_apply(ou, gk, s, lam)
            c = f.coeffs
            tau = 1.0 - s
            fac, var = ou.transition_moments(tau)
            sd_in = math.sqrt(var)
            roots = _kink_breaks(c, sd_in)
            # x-integral against phi, broken where the inner kink centre a*x crosses a root
            zb = np.clip(roots / fac / sd_phi, -_L, _L)
            br = np.sort(np.concatenate([_FIXED_BREAKS, zb]))
            lo, hi = br[:-1], br[1:]
            z = (lo[:, None] + (hi - lo)[:, None] * u).ravel()
            wz = ((hi - lo)[:, None] * wu).ravel() * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
            xs = sd_phi * z
            A, B = _gauss_kink_moments(c, fac * xs, sd_in, beta, n_in, breaks=roots)
            inner = _combine(A, B, beta)
            total += ws * math.exp(lam * tau) * lam * np.dot(wz, inner)
        return total

    return math.exp(-lam * (k + 1)) * _adaptive(rule, 0.0, 1.0, n_s, rel=1e-9)


def compute_m_k(ou: OUParams, lam: float, beta: float, g: PolynomialFn, k: int,
                cross_check: bool = True, tol: float = 1e-7) -> complex:
    """m_k[g] = e^{-lam(k+1)} <Z_{T_k^lam g}, phi>.

    The value returned is the single s-integral form.  With ``cross_check``
    (d = 1) the nested definition is evaluated too and the two must agree.
    """
    g = _clean(ou, g)
    if k < 0:
        raise ValueError("k must be non-negative")
    if not np.any(g.coeffs):
        return 0.0j
    val = _m_k_alternative(ou, lam, beta, g, k)
    if cross_check and ou.d == 1:
        ref = _m_k_definition(ou, lam, beta, g, k)
        ref2 = _m_k_definition(ou, lam, beta, g, k, 32, 32, 32)
        if abs(ref - ref2) > tol * max(1.0, abs(ref2)) or abs(val - ref2) > tol * max(
            abs(ref2), math.exp((lam * beta - _kappa_of(ou, g) * ou.mu * (1 + beta)) * k)
        ):
            raise QuadratureError(f"m_k routes disagree: {val} vs {ref2} (coarse {ref})")
    return val


def m_k_eigen_closed_form(ou: OUParams, lam: float, beta: float, p, k: int) -> complex:
    """m_k[h_p] = lam <(i h_p)^(1+beta)>_phi (e^{r(k+1)} - e^{rk}) / r,  r = lam beta - |p| mu (1+beta)."""
    h = hermite_poly(ou, p)
    r = lam * beta - sum(np.atleast_1d(p)) * ou.mu * (1.0 + beta)
    base = power_expectation(ou, h, beta)
    span = 1.0 if r == 0 else (math.exp(r * (k + 1)) - math.exp(r * k)) / r
    return lam * base * span


# ---------------------------------------------------------------------------
# series and Cesaro limits


@dataclass
class StableLimitParams:
    lam: float
    beta: float
    kappa: float
    regime: str
    m_k_values: np.ndarray = field(repr=False)
    m_series: complex | None = None
    m_bar: complex | None = None
    K: int = 0
    tail_bound: float = 0.0
    envelope_C: float = 0.0
    m_integral: complex | None = None

    @property
    def m(self) -> complex:
        return self.m_series if self.regime == "small" else self.m_bar

    def to_json(self) -> str:
        d = asdict(self)

        def enc(v):
            if isinstance(v, complex):
                return [v.real, v.imag]
            if isinstance(v, np.ndarray):
                return [[complex(z).real, complex(z).imag] for z in v]
            return v

        return json.dumps({k: enc(v) for k, v in d.items()})


def _l2_norm(ou: OUParams, g: PolynomialFn) -> float:
    a = expand_in_hermite(ou, g).hermite_coeffs
    return float(np.sqrt(np.sum(a**2)))


def compute_m_series(ou: OUParams, lam: float, beta: float, g: PolynomialFn, K: int | None = None,
                     tol: float = 1e-8, K_max: int = 20000, check: bool = True) -> StableLimitParams:
    """m[g] = sum_k m_k[g] in the small regime.

    K is the first depth whose analytic tail bound
    lam ||g||^(1+beta) e^{r(K+1)} / |r| (r = lam beta - kappa mu (1+beta) < 0)
    falls below ``tol``.  The double integral
    lam int_0^inf e^{-lam s} <(T_s^lam(i g))^(1+beta)>_phi ds is evaluated as
    an independent check.
    """
    g = _clean(ou, g)
    rep = classify_regime(ou, lam, beta, g)
    if rep.regime != "small":
        raise RegimeMismatch(f"m[g] series requires the small regime, got {rep.regime}")
    kappa = rep.kappa_g
    r = lam * beta - kappa * ou.mu * (1.0 + beta)
    C = lam * _l2_norm(ou, g) ** (1.0 + beta)
    if K is None:
        if C == 0:
            K = 0
        else:
            K = max(0, math.ceil(math.log(tol * abs(r) / C) / r - 1.0))
            if K > K_max:
                K = K_max
    tail = C * math.exp(r * (K + 1)) / abs(r)
    mk = np.array([_m_k_alternative(ou, lam, beta, g, k) for k in range(K + 1)], dtype=complex)
    total = complex(mk.sum())
    integral = None
    if check:
        integral = _m_integral(ou, lam, beta, g, kappa)
        if abs(integral - total) > 1e-6 * max(1.0, abs(total)) + tail:
            raise QuadratureError(f"series {total} and integral {integral} disagree")
    return StableLimitParams(lam=lam, beta=beta, kappa=kappa, regime="small", m_k_values=mk,
                             m_series=total, K=K, tail_bound=tail,
                             envelope_C=C * (1.0 - math.exp(r)) / abs(r), m_integral=integral)


def _m_integral(ou, lam, beta, g, kappa, s0: float = 4.0, n_lag: int = 48):
    shift = kappa * ou.mu
    r = lam * beta - shift * (1.0 + beta)
    head = sum(_s_integral(ou, lam, beta, g, j, j + 1, 24, shift) for j in range(int(s0)))
    u, w = np.polynomial.laguerre.laggauss(n_lag)
    sd = math.sqrt(ou.stationary_var)
    tail = 0.0j
    for ui, wi in zip(u, w):
        s = s0 + ui / abs(r)
        f = semigroup_apply(ou, g, s, shift)
        tail += wi * _power_expectation_raw(f, beta, np.zeros(ou.d), sd, 24)
    return head + lam * math.exp(r * s0) / abs(r) * tail


def compute_m_bar(ou: OUParams, lam: float, beta: float, g: PolynomialFn) -> complex:
    """lam <(i h)^(1+beta)>_phi with h the kappa-level projection of g."""
    g = expand_in_hermite(ou, g)
    rep = classify_regime(ou, lam, beta, g)
    if rep.regime != "critical":
        raise RegimeMismatch(f"m_bar requires the critical regime, got {rep.regime}")
    h = g.projection(int(rep.kappa_g))
    return lam * power_expectation(ou, h, beta)


def cesaro_partial(ou: OUParams, lam: float, beta: float, g: PolynomialFn, t: int) -> complex:
    """(1/t) sum_{k=0}^{t} m_k[g]."""
    g = _clean(ou, g)
    return complex(sum(_m_k_alternative(ou, lam, beta, g, k) for k in range(t + 1))) / t


def limit_cf(m, theta, beta: float | None = None):
    """exp(theta^(1+beta) m) for theta >= 0, extended to theta < 0 by conjugation.

    ``m`` is a complex parameter or a StableLimitParams (which carries beta).
    """
    if isinstance(m, StableLimitParams):
        beta = m.beta if beta is None else beta
        m = m.m
    if beta is None:
        raise ValueError("beta is required when m is given as a number")
    theta = np.asarray(theta, dtype=float)
    val = np.exp(np.abs(theta) ** (1.0 + beta) * complex(m))
    out = np.where(theta >= 0, val, np.conj(val))
    return complex(out) if out.ndim == 0 else out


def cf_curve_to_csv(path, m, thetas, beta: float | None = None) -> None:
    vals = limit_cf(m, np.asarray(thetas), beta)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "re", "im"])
        for th, v in zip(np.atleast_1d(thetas), np.atleast_1d(vals)):
            w.writerow([float(th), v.real, v.imag])


# ---------------------------------------------------------------------------
# regimes

_NORMALIZATION = {
    "small": "|X_t|^(1/(1+beta))",
    "critical": "(t |X_t|)^(1/(1+beta))",
    "large": "exp((lambda - kappa mu) t)",
}


@dataclass(frozen=True)
class RegimeReport:
    lam: float
    mu: float
    beta: float
    kappa_g: float
    threshold: float
    regime: str
    normalization_descriptor: str

    def normalization(self, t, population):
        """F_t for the regime, given t and |X_t|."""
        t = np.asarray(t, dtype=float)
        pop = np.asarray(population, dtype=float)
        if self.regime == "small":
            return pop ** (1.0 / (1.0 + self.beta))
        if self.regime == "critical":
            return (t * pop) ** (1.0 / (1.0 + self.beta))
        return np.exp((self.lam - self.kappa_g * self.mu) * t) * np.ones_like(pop)

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def classify_regime(ou: OUParams, lam: float, beta: float, g: PolynomialFn) -> RegimeReport:
    kappa = _kappa_of(ou, g)
    if not 1 <= kappa < math.inf:
        raise ValueError(f"regimes are defined for kappa(g) >= 1, got {kappa}")
    lhs, rhs = lam * beta, kappa * ou.mu * (1.0 + beta)
    if abs(lhs - rhs) <= CRITICAL_RTOL * max(lhs, rhs):
        regime = "critical"
    else:
        regime = "small" if lhs < rhs else "large"
    return RegimeReport(lam=float(lam), mu=ou.mu, beta=float(beta), kappa_g=kappa,
                        threshold=(1.0 + 1.0 / beta) * kappa * ou.mu, regime=regime,
                        normalization_descriptor=_NORMALIZATION[regime])
