"""Exact simulation of the supercritical branching Ornstein-Uhlenbeck system.

Each replicate is simulated depth first.  A particle lives an Exponential(a)
time, moves by exact OU transitions between record times, and at death is
replaced by a heavy-tailed number of children at its death position.

Instead of storing every particle, a replicate records at each record time
the population count and the power sums ``sum_u X_t(u)^alpha`` for all
multi-indices ``|alpha| <= degree``.  Any polynomial functional of degree at
most ``degree`` is then an exact linear combination of these sums, which is
what makes 10^4..10^5 replicates of a population of size e^{lam T}
affordable.  Full positions are kept only by :func:`run_replicate`.

Record times are ``j / refinement`` for ``j = 0..T*refinement``; the public
grid is the integers.  The finer grid only feeds the compensator integral of
:func:`track_martingales`.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from . import _kernels
from .offspring import OffspringLaw
from .ou_hermite import (
    OUParams,
    PolynomialFn,
    generator_apply,
    hermite_poly,
    multi_indices,
    semigroup_apply,
)
from .rng import seed_key, seed_plan

__all__ = [
    "DecompositionTable",
    "MartingaleTrack",
    "PopulationCapExceeded",
    "SimConfig",
    "SnapshotSet",
    "decompose",
    "functional",
    "run_replicate",
    "simulate",
    "simulate_gw_counts",
    "track_martingales",
]

COMPENSATOR_POINTS = 16


class PopulationCapExceeded(RuntimeError):
    """A replicate exceeded ``max_particles`` and was aborted."""


@dataclass(frozen=True)
class SimConfig:
    offspring: OffspringLaw
    ou: OUParams
    x0: tuple = (0.0,)
    horizon_T: int = 5
    max_particles: int = 2**22
    seed: int = 0
    replicates: int = 1
    degree: int = 4
    refinement: int = 1
    workers: int | None = None

    def __post_init__(self):
        T = self.horizon_T
        if isinstance(T, float):
            if not T.is_integer():
                raise ValueError("horizon_T must be an integer; non-integer horizons are not supported")
            object.__setattr__(self, "horizon_T", int(T))
        if self.horizon_T < 0:
            raise ValueError("horizon_T must be non-negative")
        x0 = tuple(float(v) for v in np.atleast_1d(self.x0))
        if len(x0) != self.ou.d:
            raise ValueError(f"x0 has {len(x0)} coordinates, OU dimension is {self.ou.d}")
        object.__setattr__(self, "x0", x0)
        if self.max_particles < 1:
            raise ValueError("max_particles must be at least 1")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.degree < 0 or self.refinement < 1:
            raise ValueError("degree must be >= 0 and refinement >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def lam(self) -> float:
        return self.offspring.lam

    @property
    def snapshot_grid(self) -> np.ndarray:
        return np.arange(self.horizon_T + 1)

    def seed_plan(self) -> np.ndarray:
        return seed_plan(self.seed, self.replicates)


@dataclass
class SnapshotSet:
    """Per-replicate summaries on the record grid.

    ``counts[r, j]`` and ``power_sums[r, j, q]`` refer to time j/refinement
    and monomial ``exps[q]``.  Aborted replicates hold NaN sums and are
    excluded by ``ok``.
    """

    config: SimConfig
    counts: np.ndarray
    power_sums: np.ndarray
    exps: np.ndarray
    status: np.ndarray
    positions: list | None = field(default=None, repr=False)

    @property
    def replicates(self) -> int:
        return self.counts.shape[0]

    @property
    def T(self) -> int:
        return self.config.horizon_T

    @property
    def refinement(self) -> int:
        return self.config.refinement

    @property
    def lam(self) -> float:
        return self.config.lam

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.T + 1)

    @property
    def fine_times(self) -> np.ndarray:
        return np.arange(self.T * self.refinement + 1) / self.refinement

    @property
    def ok(self) -> np.ndarray:
        return self.status == _kernels.OK

    @property
    def abort_rate(self) -> float:
        return float(np.mean(~self.ok))

    def _grid(self, t) -> int:
        if isinstance(t, float):
            if not t.is_integer():
                raise ValueError(f"t={t} is not on the integer grid")
            t = int(t)
        if not 0 <= t <= self.T:
            raise ValueError(f"t={t} outside 0..{self.T}")
        return t * self.refinement

    def population(self) -> np.ndarray:
        """|X_t| on the integer grid, shape (R, T+1); NaN for aborted runs."""
        out = self.counts[:, :: self.refinement].astype(float)
        out[~self.ok] = np.nan
        return out

    def W(self) -> np.ndarray:
        return self.population() * np.exp(-self.lam * self.times)

    def coefficient_vector(self, g: PolynomialFn) -> np.ndarray:
        if g.d != self.exps.shape[1]:
            raise ValueError("dimension mismatch between g and the simulation")
        D = int(self.exps.sum(axis=1).max()) if len(self.exps) else 0
        if g.degree > D:
            raise ValueError(
                f"g has degree {g.degree} but only power sums up to degree {D} were recorded"
            )
        c = g.padded(max(D, g.max_degree))
        return np.array([c[tuple(e)] for e in self.exps])

    def pairing(self, g: PolynomialFn, fine: bool = False) -> np.ndarray:
        """<X_t, g> for every replicate and grid time, shape (R, n_times)."""
        c = self.coefficient_vector(g)
        ps = self.power_sums if fine else self.power_sums[:, :: self.refinement]
        return ps @ c

    def positions_at(self, t: int, replicate: int = 0) -> np.ndarray:
        if self.positions is None:
            raise ValueError("positions were not kept for this snapshot set")
        return self.positions[replicate][self._grid(t) // self.refinement]

    def to_csv(self, path, functionals: dict[str, PolynomialFn] | None = None) -> None:
        """One row per (replicate, t): |X_t|, W_t and the requested functionals."""
        functionals = functionals or {}
        pop, W = self.population(), self.W()
        vals = {name: self.pairing(g) for name, g in functionals.items()}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["replicate", "t", "population", "W", *vals])
            for r in range(self.replicates):
                for t in self.times:
                    w.writerow([r, int(t), pop[r, t], W[r, t], *(v[r, t] for v in vals.values())])

    def dump_jsonl(self, path) -> None:
        """Full snapshot dump, one JSON object per (replicate, t)."""
        if self.positions is None:
            raise ValueError("positions were not kept for this snapshot set")
        with open(path, "w") as fh:
            for r, per_t in enumerate(self.positions):
                for t, pts in enumerate(per_t):
                    fh.write(json.dumps({"replicate": r, "t": t, "positions": pts.tolist()}) + "\n")


def _kernel_args(cfg: SimConfig):
    law = cfg.offspring
    exps = np.array(multi_indices(cfg.ou.d, cfg.degree), dtype=np.int64)
    return dict(
        x0=np.array(cfg.x0, dtype=float),
        n_steps=cfg.horizon_T * cfg.refinement,
        substeps=cfg.refinement,
        a=law.a,
        mu=cfg.ou.mu,
        sd_stat=math.sqrt(cfg.ou.stationary_var),
        sf=np.ascontiguousarray(law.survival_table),
        m=law.m,
        beta=law.beta,
        exps=exps,
        max_particles=cfg.max_particles,
    )


def run_replicate(cfg: SimConfig, replicate: int = 0) -> SnapshotSet:
    """Simulate one replicate, keeping every particle position on the grid.

    Uses the same stream as replicate ``replicate`` of :func:`simulate`, so
    the two agree bit for bit.
    """
    kw = _kernel_args(cfg)
    n_rec = kw["n_steps"] + 1
    counts = np.zeros(n_rec, dtype=np.int64)
    sums = np.zeros((n_rec, len(kw["exps"])))
    key = np.uint64(seed_plan(cfg.seed, replicate + 1)[replicate])
    status, idx, pos = _kernels.run_one(
        key, kw["x0"], kw["n_steps"], kw["substeps"], kw["a"], kw["mu"], kw["sd_stat"],
        kw["sf"], kw["m"], kw["beta"], kw["exps"], kw["max_particles"], True, counts, sums,
    )
    if status != _kernels.OK:
        raise PopulationCapExceeded(
            f"replicate {replicate} exceeded max_particles={cfg.max_particles}"
        )
    r = cfg.refinement
    per_t = [pos[idx == t * r] for t in range(cfg.horizon_T + 1)]
    return SnapshotSet(cfg, counts[None], sums[None], kw["exps"], np.zeros(1, dtype=np.int64),
                       positions=[per_t])


def simulate(cfg: SimConfig, chunk: int = 4096) -> SnapshotSet:
    """All ``cfg.replicates`` replicates in parallel; aborted ones are flagged."""
    kw = _kernel_args(cfg)
    R = cfg.replicates
    n_rec = kw["n_steps"] + 1
    counts = np.zeros((R, n_rec), dtype=np.int64)
    sums = np.zeros((R, n_rec, len(kw["exps"])))
    status = np.zeros(R, dtype=np.int64)
    root = seed_key(cfg.seed)
    old = numba.get_num_threads()
    if cfg.workers is not None:
        numba.set_num_threads(max(1, min(cfg.workers, numba.config.NUMBA_NUM_THREADS)))
    try:
        for start in range(0, R, chunk):
            stop = min(R, start + chunk)
            _kernels.run_batch(
                root, start, stop - start, kw["x0"], kw["n_steps"], kw["substeps"], kw["a"],
                kw["mu"], kw["sd_stat"], kw["sf"], kw["m"], kw["beta"], kw["exps"],
                kw["max_particles"], counts[start:stop], sums[start:stop], status[start:stop],
            )
    finally:
        numba.set_num_threads(old)
    sums[status != _kernels.OK] = np.nan
    return SnapshotSet(cfg, counts, sums, kw["exps"], status)


def functional(snapshots: SnapshotSet, g: PolynomialFn, t: int) -> np.ndarray:
    """sum_u g(X_t(u)) for each replicate, shape (R,)."""
    j = snapshots._grid(t)
    return snapshots.power_sums[:, j, :] @ snapshots.coefficient_vector(g)


@dataclass
class DecompositionTable:
    """``M[:, k]`` is M_k^t[g]; ``M[:, t]`` is the deterministic term T_t^lam g(x0)."""

    t: int
    M: np.ndarray
    terminal: float
    total: np.ndarray

    @property
    def delta(self) -> np.ndarray:
        """Increments indexed by s = t - k, i.e. delta[:, s] = M[:, t - s]."""
        return self.M[:, ::-1]

    def residual(self) -> np.ndarray:
        """Relative telescoping error per replicate."""
        s = self.M.sum(axis=1)
        return np.abs(s - self.total) / np.maximum(1.0, np.abs(self.total))


def decompose(snapshots: SnapshotSet, g: PolynomialFn, t: int | None = None) -> DecompositionTable:
    cfg = snapshots.config
    ou, lam = cfg.ou, cfg.lam
    t = snapshots.T if t is None else int(t)
    snapshots._grid(t)
    P = snapshots.pairing(g)  # only used for the total
    M = np.empty((snapshots.replicates, t + 1))
    for k in range(t):
        f = semigroup_apply(ou, g, k, lam)
        f1 = semigroup_apply(ou, f, 1, lam)
        s = t - k
        M[:, k] = functional(snapshots, f, s) - functional(snapshots, f1, s - 1)
    terminal = float(semigroup_apply(ou, g, t, lam)(np.array(cfg.x0)))
    M[:, t] = terminal
    return DecompositionTable(t=t, M=M, terminal=terminal, total=P[:, t])


@dataclass
class MartingaleTrack:
    times: np.ndarray
    W: np.ndarray
    H: dict
    M: np.ndarray
    h: PolynomialFn
    a_exp: float


def track_martingales(snapshots: SnapshotSet, basis, h: PolynomialFn, a_exp: float) -> MartingaleTrack:
    """W_t, H_t^p for p in ``basis`` and M_t^{h,a} on the integer grid.

    The compensator integral of M^{h,a} is a trapezoid rule on the record
    grid, which must have at least 16 points per unit interval unless the
    integrand Lh + a mu h vanishes identically.
    """
    cfg = snapshots.config
    ou, lam, mu = cfg.ou, cfg.lam, cfg.ou.mu
    t = snapshots.times
    H = {}
    for p in basis:
        p = tuple(int(q) for q in np.atleast_1d(p))
        hp = hermite_poly(ou, p)
        H[p] = np.exp(-(lam - sum(p) * mu) * t) * snapshots.pairing(hp)

    rate = lam - a_exp * mu
    main = np.exp(-rate * t) * snapshots.pairing(h)
    integrand_fn = generator_apply(ou, h) + h * (a_exp * mu)
    if integrand_fn.degree < 0 or np.max(np.abs(integrand_fn.coeffs)) < 1e-13 * max(
        1.0, np.max(np.abs(h.coeffs))
    ):
        M = main
    else:
        r = snapshots.refinement
        if r < COMPENSATOR_POINTS:
            raise ValueError(
                f"compensator needs refinement >= {COMPENSATOR_POINTS}, simulation used {r}"
            )
        w = snapshots.fine_times
        f = np.exp(-rate * w) * snapshots.pairing(integrand_fn, fine=True)
        step = 0.5 * (f[:, 1:] + f[:, :-1]) / r
        cum = np.concatenate([np.zeros((f.shape[0], 1)), np.cumsum(step, axis=1)], axis=1)
        M = main - cum[:, ::r]
    return MartingaleTrack(times=t, W=snapshots.W(), H=H, M=M, h=h, a_exp=float(a_exp))


def simulate_gw_counts(law: OffspringLaw, t: float, threshold: int, replicates: int,
                       seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Population sizes of the spatially trivial system at time t.

    Returns (counts, below) where ``below[r]`` says |X_t| <= threshold.  Runs
    stop as soon as the count passes ``threshold``, since it can never drop.
    """
    counts = np.zeros(replicates, dtype=np.int64)
    below = np.zeros(replicates, dtype=np.bool_)
    _kernels.gw_batch(seed_key(seed), replicates, float(t), int(threshold), law.a,
                      np.ascontiguousarray(law.survival_table), law.m, law.beta, counts, below)
    return counts, below
