"""Offspring law with generating function F(s) = m s - (m-1) + (m-1)(1-s)^(1+beta).

The law puts no mass at 0, so the branching system never dies out.  Its
coefficients follow from the binomial series of (1-s)^(1+beta):

    p_1 = m - (1+beta)(m-1)
    p_n = (m-1) (-1)^n binom(1+beta, n),        n >= 2

and the survival function has the closed form

    S(n) = P(xi > n) = (m-1) (-1)^(n+1) binom(beta, n),   n >= 1,

which decays like n^-(1+beta).  Everything below N is tabulated; the tail is
handled with the exact survival function, so no mass is ever truncated.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "OffspringLaw",
    "build_offspring_law",
    "evaluate_pgf",
    "sample_offspring",
    "survival",
]

_M_TOL = 1e-12


@dataclass(frozen=True)
class OffspringLaw:
    m: float
    beta: float
    a: float
    truncation_N: int
    pmf_table: np.ndarray = field(repr=False)
    survival_table: np.ndarray = field(repr=False)

    @property
    def lam(self) -> float:
        """Malthusian growth rate a(m-1)."""
        return self.a * (self.m - 1.0)

    @property
    def p1(self) -> float:
        return float(self.pmf_table[1])

    @property
    def tail_constant(self) -> float:
        """c in p_n ~ c n^-(2+beta)."""
        return (self.m - 1.0) / math.gamma(-1.0 - self.beta)

    @property
    def tail_mass(self) -> float:
        """Exact mass beyond the table, S(N)."""
        return float(self.survival_table[self.truncation_N])

    @property
    def tail_mean(self) -> float:
        """Exact value of sum_{n>N} n p_n."""
        N, b = self.truncation_N, self.beta
        return (self.m - 1.0) * (1.0 + b) * math.exp(
            math.lgamma(N - b) - math.lgamma(1.0 - b) - math.lgamma(N)
        )

    def total_mass(self) -> float:
        return float(self.pmf_table.sum()) + self.tail_mass

    def mean(self) -> float:
        n = np.arange(self.truncation_N + 1)
        return float(n @ self.pmf_table) + self.tail_mean

    def pmf(self, n: int) -> float:
        """p_n for any n >= 0, including indices past the table."""
        if n < 0:
            return 0.0
        if n <= self.truncation_N:
            return float(self.pmf_table[n])
        # p_n = S(n-1) - S(n) = S(n-1) (1+beta)/n
        return survival(self, n - 1) * (1.0 + self.beta) / n

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "p_n"])
            for n, p in enumerate(self.pmf_table):
                w.writerow([n, repr(float(p))])
            w.writerow([f">{self.truncation_N}", repr(self.tail_mass)])


def build_offspring_law(m: float, beta: float, a: float = 1.0, truncation_N: int = 64) -> OffspringLaw:
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if not m > 1.0:
        raise ValueError(f"m must exceed 1 (supercritical), got {m}")
    if not a > 0.0:
        raise ValueError(f"branching intensity a must be positive, got {a}")
    if truncation_N < 2:
        raise ValueError("truncation_N must be at least 2")
    m_max = (1.0 + beta) / beta
    if m > m_max + _M_TOL:
        raise ValueError(
            f"m={m} exceeds (1+beta)/beta={m_max}: p_1 would be negative and F is not a pgf"
        )

    N = int(truncation_N)
    p = np.zeros(N + 1)
    p[1] = max(m - (1.0 + beta) * (m - 1.0), 0.0)
    p[2] = (m - 1.0) * (1.0 + beta) * beta / 2.0
    for n in range(2, N):
        p[n + 1] = p[n] * (n - 1.0 - beta) / (n + 1.0)

    sf = np.empty(N + 1)
    sf[0] = 1.0
    sf[1] = (m - 1.0) * beta
    for n in range(1, N):
        sf[n + 1] = sf[n] * (n - beta) / (n + 1.0)

    p.setflags(write=False)
    sf.setflags(write=False)
    return OffspringLaw(m=float(m), beta=float(beta), a=float(a), truncation_N=N,
                        pmf_table=p, survival_table=sf)


def survival(law: OffspringLaw, n: int) -> float:
    """P(xi > n), exact for every n."""
    if n < 1:
        return 1.0
    if n <= law.truncation_N:
        return float(law.survival_table[n])
    b = law.beta
    return (law.m - 1.0) * math.exp(
        math.lgamma(n - b) - math.lgamma(n + 1.0) - math.lgamma(1.0 - b)
    ) * b


def evaluate_pgf(law: OffspringLaw, s: float) -> float:
    if not 0.0 <= s <= 1.0:
        raise ValueError("s must lie in [0, 1]")
    m, b = law.m, law.beta
    return m * s - (m - 1.0) + (m - 1.0) * (1.0 - s) ** (1.0 + b)


def _tail_inverse(m: float, beta: float, N: int, v: float) -> int:
    """Smallest n > N with S(n) < v, assuming S(N) >= v."""
    log_c = math.log(m - 1.0) + math.log(beta) - math.lgamma(1.0 - beta)
    log_v = math.log(v)

    def log_sf(n: float) -> float:
        return log_c + math.lgamma(n - beta) - math.lgamma(n + 1.0)

    guess = math.exp((log_c - log_v) / (1.0 + beta))
    hi = max(N + 1, int(guess * 1.1) + 2)
    while log_sf(hi) >= log_v:
        hi *= 2
    lo = max(N, min(int(guess * 0.9), hi - 1))
    while lo > N and log_sf(lo) < log_v:
        lo = max(N, lo // 2)
    # invariant: S(lo) >= v > S(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if log_sf(mid) < log_v:
            hi = mid
        else:
            lo = mid
    return hi


def sample_offspring(law: OffspringLaw, rng: np.random.Generator, size: int | None = None):
    """Inverse-survival sampling: xi = min{n : S(n) < V} with V uniform on (0, 1)."""
    scalar = size is None
    v = 1.0 - rng.random(1 if scalar else size)  # (0, 1]
    sf = law.survival_table
    N = law.truncation_N
    # sf is decreasing; count of entries >= v among sf[1..N] gives the index
    idx = np.searchsorted(-sf[1:], -v, side="right") + 1
    out = idx.astype(np.int64)
    for i in np.flatnonzero(idx > N):
        out[i] = _tail_inverse(law.m, law.beta, N, float(v[i]))
    return int(out[0]) if scalar else out
