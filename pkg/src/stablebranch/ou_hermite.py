"""Ornstein-Uhlenbeck semigroup on polynomials through its Hermite eigenbasis.

Polynomials on R^d are stored as dense coefficient arrays of shape
(D+1,)*d, entry [alpha] multiplying x^alpha; entries with |alpha| > D are
kept at zero.  Expanding in the normalized Hermite basis

    h_p(x) = prod_i H_{p_i}(sqrt(mu) x_i / sigma) / sqrt(p_i! 2^{p_i})

(physicists' H_n) is an exact triangular change of basis applied axis by
axis, so the semigroup T_t h_p = exp(-|p| mu t) h_p acts on polynomials with
no quadrature at all.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Mapping

import numpy as np
from numpy.polynomial import hermite as _H

__all__ = [
    "OUParams",
    "PolynomialFn",
    "multi_indices",
    "ou_transition_sample",
    "hermite_basis_eval",
    "hermite_poly",
    "expand_in_hermite",
    "semigroup_apply",
    "generator_apply",
    "quadrature_expectation",
    "QuadratureError",
]

KAPPA_TOL = 1e-12


class QuadratureError(ArithmeticError):
    """Integrand produced non-finite values or refinements disagree."""


@dataclass(frozen=True)
class OUParams:
    sigma: float = math.sqrt(2.0)
    mu: float = 1.0
    d: int = 1

    def __post_init__(self):
        if not self.sigma > 0 or not self.mu > 0:
            raise ValueError("sigma and mu must be positive")
        if not 1 <= self.d <= 3:
            raise ValueError("dimension d must be 1, 2 or 3")

    @property
    def stationary_var(self) -> float:
        """Per-coordinate variance sigma^2 / (2 mu) of the invariant Gaussian."""
        return self.sigma**2 / (2.0 * self.mu)

    @property
    def scale(self) -> float:
        """c in h_p(x) = H_p(c x) / norm."""
        return math.sqrt(self.mu) / self.sigma

    def transition_moments(self, t: float) -> tuple[float, float]:
        """(mean factor, variance) of the transition over time t."""
        return math.exp(-self.mu * t), self.stationary_var * -math.expm1(-2.0 * self.mu * t)


def multi_indices(d: int, D: int) -> list[tuple[int, ...]]:
    """All p in Z_+^d with |p| <= D in graded lexicographic order."""
    out = [p for p in itertools.product(range(D + 1), repeat=d) if sum(p) <= D]
    out.sort(key=lambda p: (sum(p), tuple(-q for q in p)))
    return out


def _key(p) -> str:
    return ",".join(str(int(q)) for q in p)


@dataclass(frozen=True, eq=False)
class PolynomialFn:
    """Polynomial in monomial basis, optionally bound to an OU process.

    Binding (``expand_in_hermite``) exposes ``hermite_coeffs`` and ``kappa``.
    """

    coeffs: np.ndarray
    ou: OUParams | None = None

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim == 0:
            c = c.reshape(1)
        if len(set(c.shape)) != 1:
            raise ValueError("coefficient array must be hypercubic")
        if self.ou is not None and c.ndim != self.ou.d:
            raise ValueError("coefficient array dimension does not match OU dimension")
        D = c.shape[0] - 1
        grid = np.indices(c.shape).sum(axis=0)
        if np.any(c[grid > D] != 0):
            raise ValueError("coefficients beyond total degree D must vanish")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # construction ---------------------------------------------------------
    @classmethod
    def from_dict(cls, terms: Mapping, d: int = 1, ou: OUParams | None = None) -> "PolynomialFn":
        parsed = {}
        for k, v in terms.items():
            if isinstance(k, str):
                k = tuple(int(s) for s in k.split(",")) if k.strip() else (0,) * d
            elif isinstance(k, int):
                k = (k,)
            if len(k) != d:
                raise ValueError(f"multi-index {k} does not have length {d}")
            parsed[tuple(k)] = float(v)
        D = max((sum(k) for k in parsed), default=0)
        c = np.zeros((D + 1,) * d)
        for k, v in parsed.items():
            c[k] += v
        return cls(c, ou)

    @classmethod
    def constant(cls, value: float, d: int = 1, ou: OUParams | None = None) -> "PolynomialFn":
        return cls(np.full((1,) * d, float(value)), ou)

    @classmethod
    def from_json(cls, text: str, ou: OUParams | None = None) -> "PolynomialFn":
        data = json.loads(text)
        d = len(next(iter(data)).split(",")) if data else (ou.d if ou else 1)
        return cls.from_dict(data, d, ou)

    # basic shape ------------------------------------------------------------
    @property
    def d(self) -> int:
        return self.coeffs.ndim

    @property
    def max_degree(self) -> int:
        """Storage degree D (coefficient array side minus one)."""
        return self.coeffs.shape[0] - 1

    @property
    def degree(self) -> int:
        """Actual total degree; -1 for the zero polynomial."""
        nz = np.argwhere(np.abs(self.coeffs) > 0)
        return int(nz.sum(axis=1).max()) if len(nz) else -1

    def terms(self) -> dict[tuple[int, ...], float]:
        return {p: float(self.coeffs[p]) for p in multi_indices(self.d, self.max_degree)
                if self.coeffs[p] != 0}

    def to_json(self) -> str:
        return json.dumps({_key(p): v for p, v in self.terms().items()})

    def padded(self, D: int) -> np.ndarray:
        """Monomial coefficients embedded in a (D+1,)*d array."""
        if D < self.max_degree:
            if self.degree > D:
                raise ValueError(f"polynomial of degree {self.degree} does not fit in degree {D}")
            return self.coeffs[(slice(0, D + 1),) * self.d].copy()
        out = np.zeros((D + 1,) * self.d)
        out[(slice(0, self.max_degree + 1),) * self.d] = self.coeffs
        return out

    def bind(self, ou: OUParams) -> "PolynomialFn":
        if ou == self.ou:
            return self
        return PolynomialFn(self.coeffs, ou)

    # evaluation -------------------------------------------------------------
    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        if x.shape[-1] != self.d:
            raise ValueError(f"points must have trailing dimension {self.d}")
        shape = x.shape[:-1]
        pts = x.reshape(-1, self.d)
        powers = pts[:, :, None] ** np.arange(self.max_degree + 1)  # (n, d, D+1)
        letters = "abc"[: self.d]
        subs = ",".join(f"n{l}" for l in letters) + "," + letters + "->n"
        out = np.einsum(subs, *[powers[:, i, :] for i in range(self.d)], self.coeffs)
        return out.reshape(shape)

    # algebra ----------------------------------------------------------------
    def _combine(self, other: "PolynomialFn", sign: float) -> "PolynomialFn":
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        D = max(self.max_degree, other.max_degree)
        return PolynomialFn(self.padded(D) + sign * other.padded(D), self.ou or other.ou)

    def __add__(self, other):
        if np.isscalar(other):
            other = PolynomialFn.constant(other, self.d)
        return self._combine(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        if np.isscalar(other):
            other = PolynomialFn.constant(other, self.d)
        return self._combine(other, -1.0)

    def __neg__(self):
        return PolynomialFn(-self.coeffs, self.ou)

    def __mul__(self, other):
        if np.isscalar(other):
            return PolynomialFn(self.coeffs * float(other), self.ou)
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        D = self.max_degree + other.max_degree
        out = np.zeros((D + 1,) * self.d)
        for p, u in self.terms().items():
            for q, v in other.terms().items():
                out[tuple(i + j for i, j in zip(p, q))] += u * v
        return PolynomialFn(out, self.ou or other.ou)

    __rmul__ = __mul__

    def derivative(self, axis: int = 0) -> "PolynomialFn":
        c = np.moveaxis(self.coeffs, axis, 0)
        k = np.arange(1, c.shape[0]).reshape((-1,) + (1,) * (self.d - 1))
        dc = np.zeros_like(c)
        dc[:-1] = c[1:] * k
        return PolynomialFn(np.moveaxis(dc, 0, axis), self.ou)

    # Hermite side -----------------------------------------------------------
    def _need_ou(self) -> OUParams:
        if self.ou is None:
            raise ValueError("polynomial is not bound to OU parameters; call expand_in_hermite")
        return self.ou

    @cached_property
    def hermite_coeffs(self) -> np.ndarray:
        """a_p = <f, h_p>_phi as a (D+1,)*d array."""
        ou = self._need_ou()
        A, _ = _conversion_matrices(self.max_degree, ou.scale)
        a = _apply_axiswise(A, self.coeffs)
        a.setflags(write=False)
        return a

    @cached_property
    def kappa(self) -> float:
        """Lowest Hermite level with a non-zero coefficient; inf for f = 0."""
        a = np.abs(self.hermite_coeffs)
        thr = KAPPA_TOL * max(1.0, float(a.max(initial=0.0)))
        levels = np.indices(a.shape).sum(axis=0)
        hit = levels[a > thr]
        return int(hit.min()) if hit.size else math.inf

    def hermite_terms(self) -> dict[tuple[int, ...], float]:
        a = self.hermite_coeffs
        return {p: float(a[p]) for p in multi_indices(self.d, self.max_degree) if a[p] != 0}

    def projection(self, level: int) -> "PolynomialFn":
        """Component of f in the eigenspace spanned by h_p with |p| = level."""
        ou = self._need_ou()
        a = np.array(self.hermite_coeffs)
        a[np.indices(a.shape).sum(axis=0) != level] = 0.0
        return from_hermite(ou, a)

    def hermite_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p", "a_p"])
            for p in multi_indices(self.d, self.max_degree):
                w.writerow([_key(p), repr(float(self.hermite_coeffs[p]))])


def _apply_axiswise(M: np.ndarray, arr: np.ndarray) -> np.ndarray:
    out = np.asarray(arr, dtype=float)
    for ax in range(out.ndim):
        out = np.moveaxis(np.tensordot(M, out, axes=([1], [ax])), 0, ax)
    return out


def _conversion_matrices(D: int, c: float) -> tuple[np.ndarray, np.ndarray]:
    """(A, B) with Hermite coeffs = A @ monomial coeffs along an axis, B = A^-1."""
    n = np.arange(D + 1)
    norm = np.sqrt(np.array([2.0**k * math.factorial(k) for k in n]))
    p2h = np.zeros((D + 1, D + 1))
    h2p = np.zeros((D + 1, D + 1))
    for k in n:
        e = np.zeros(D + 1)
        e[k] = 1.0
        col = _H.poly2herm(e)
        p2h[: len(col), k] = col
        col = _H.herm2poly(e)
        h2p[: len(col), k] = col
    A = norm[:, None] * p2h * (c ** -n.astype(float))[None, :]
    B = (c ** n.astype(float))[:, None] * h2p / norm[None, :]
    return A, B


def from_hermite(ou: OUParams, a) -> PolynomialFn:
    """Polynomial with the given normalized-Hermite coefficient array."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1)
    _, B = _conversion_matrices(a.shape[0] - 1, ou.scale)
    out = PolynomialFn(_apply_axiswise(B, a), ou)
    # keep the exact coefficients: a round trip through monomials leaves
    # rounding residue on levels that should be exactly zero
    a = a.copy()
    a.setflags(write=False)
    out.__dict__["hermite_coeffs"] = a
    return out


def hermite_poly(ou: OUParams, p) -> PolynomialFn:
    """h_p as a monomial-basis polynomial bound to ``ou``."""
    p = (p,) if np.isscalar(p) else tuple(p)
    if len(p) != ou.d:
        raise ValueError("multi-index length must equal d")
    D = sum(p)
    a = np.zeros((D + 1,) * ou.d)
    a[p] = 1.0
    return from_hermite(ou, a)


def hermite_basis_eval(ou: OUParams, p, x) -> np.ndarray:
    """h_p(x) via the normalized three-term recurrence, coordinate by coordinate."""
    p = (p,) if np.isscalar(p) else tuple(p)
    x = np.asarray(x, dtype=float)
    if ou.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    y = ou.scale * x
    out = np.ones(x.shape[:-1])
    for i, n in enumerate(p):
        prev, cur = np.zeros_like(y[..., i]), np.ones_like(y[..., i])
        for k in range(n):
            prev, cur = cur, math.sqrt(2.0 / (k + 1)) * y[..., i] * cur - math.sqrt(k / (k + 1)) * prev
        out = out * cur
    return out


def expand_in_hermite(ou: OUParams, f: PolynomialFn) -> PolynomialFn:
    if f.d != ou.d:
        raise ValueError("dimension mismatch")
    g = f.bind(ou)
    g.hermite_coeffs  # noqa: B018  (materialize the cached expansion)
    return g


def semigroup_apply(ou: OUParams, f: PolynomialFn, t: float, lam: float = 0.0) -> PolynomialFn:
    """T_t^lam f = exp(lam t) T_t f, exactly."""
    if t == 0 and lam == 0:
        return f.bind(ou)
    a = expand_in_hermite(ou, f).hermite_coeffs
    levels = np.indices(a.shape).sum(axis=0)
    return from_hermite(ou, a * np.exp((lam - levels * ou.mu) * t))


def generator_apply(ou: OUParams, f: PolynomialFn) -> PolynomialFn:
    """L f = (sigma^2/2) Laplacian f - mu x . grad f on the monomial coefficients."""
    c = f.coeffs
    out = -ou.mu * np.indices(c.shape).sum(axis=0) * c
    for ax in range(f.d):
        cm = np.moveaxis(c, ax, 0)
        k = np.arange(cm.shape[0]).reshape((-1,) + (1,) * (f.d - 1))
        lap = np.zeros_like(cm)
        lap[:-2] = (cm * k * (k - 1))[2:]
        out = out + 0.5 * ou.sigma**2 * np.moveaxis(lap, 0, ax)
    return PolynomialFn(out, ou)


def ou_transition_sample(ou: OUParams, x, t: float, rng: np.random.Generator, size: int | None = None):
    """Exact draw(s) from N(x e^{-mu t}, sigma^2/(2mu) (1 - e^{-2 mu t}) Id)."""
    x = np.asarray(x, dtype=float).reshape(ou.d)
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return x.copy() if size is None else np.tile(x, (size, 1))
    fac, var = ou.transition_moments(t)
    shape = (ou.d,) if size is None else (size, ou.d)
    return x * fac + math.sqrt(var) * rng.standard_normal(shape)


def gauss_hermite_rule(ou: OUParams, order: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Tensor nodes (n, d) and weights (n,) integrating against phi."""
    y, w = _H.hermgauss(order)
    x1 = y / ou.scale  # y = c x has weight e^{-y^2}
    w1 = w / math.sqrt(math.pi)
    nodes = np.array(list(itertools.product(x1, repeat=ou.d)))
    weights = np.prod(np.array(list(itertools.product(w1, repeat=ou.d))), axis=1)
    return nodes, weights


def quadrature_expectation(ou: OUParams, f: Callable, order: int = 64):
    """E_phi f by tensor Gauss-Hermite; exact for polynomials of degree < 2*order."""
    nodes, weights = gauss_hermite_rule(ou, order)
    vals = np.asarray(f(nodes if ou.d > 1 else nodes[:, 0]))
    if not np.all(np.isfinite(vals)):
        raise QuadratureError("integrand returned non-finite values")
    res = weights @ vals
    return complex(res) if np.iscomplexobj(res) else float(res)


def random_polynomial(rng: np.random.Generator, d: int = 1, degree: int = 4,
                      scale: float = 1.0, ou: OUParams | None = None) -> PolynomialFn:
    """Dense random polynomial with standard normal coefficients (test helper)."""
    c = np.zeros((degree + 1,) * d)
    mask = np.indices(c.shape).sum(axis=0) <= degree
    c[mask] = scale * rng.standard_normal(mask.sum())
    return PolynomialFn(c, ou)


def iter_levels(f: PolynomialFn) -> Iterable[tuple[tuple[int, ...], float]]:
    """(p, a_p) pairs in graded order, skipping exact zeros."""
    return f.hermite_terms().items()
