"""Command-line entry point: ``stablebranch CONFIG [section.key=value ...]``.

The config is an INI file whose sections mirror the dotted keys
(``sim.m``, ``experiment.mode``, ...).  See README for one example per mode.

Exit codes: 0 success, 2 configuration error, 3 population-cap abort rate
above ``experiment.abort_ceiling``, 4 a verification assertion failed.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .offspring import build_offspring_law
from .ou_hermite import OUParams, PolynomialFn, expand_in_hermite
from .rng import seed_plan
from .simulator import SimConfig, simulate
from .stable_limits import (
    cf_curve_to_csv,
    classify_regime,
    compute_m_bar,
    compute_m_series,
)
from . import verify

EXIT_OK, EXIT_CONFIG, EXIT_ABORTS, EXIT_ASSERT = 0, 2, 3, 4
MODES = ("simulate", "limits", "regimes", "verify-small", "verify-critical", "verify-large", "gw-tail")
OUTPUT_ENV = "STABLEBRANCH_OUTPUT_DIR"

DEFAULTS = {
    "experiment": {
        "mode": "",
        "output_dir": "results",
        "workers": "",
        "abort_ceiling": "0.001",
        "stats_seed": "0",
    },
    "sim": {
        "m": "2.0",
        "beta": "0.5",
        "a": "1.0",
        "truncation_N": "64",
        "sigma": repr(math.sqrt(2.0)),
        "mu": "1.0",
        "d": "1",
        "x0": "0.0",
        "horizon_T": "5",
        "max_particles": str(2**22),
        "seed": "0",
        "replicates": "1000",
        "degree": "4",
        "refinement": "1",
    },
    "test_function": {"terms": '{"1": 1.0}'},
    "verify": {
        "theta_max": "3.0",
        "theta_points": "31",
        "t_grid": "",
        "gap_tol": "0.05",
        "slope_tol": "0.2",
        "threshold": "",
        "log_tol": "1.0",
        "thinned": "false",
    },
    "quadrature": {"tol": "1e-8", "K_max": "20000"},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    mode: str
    sim: SimConfig
    test_function: PolynomialFn
    theta_grid: np.ndarray
    output_dir: Path
    raw: dict = field(repr=False)

    def get(self, section: str, key: str) -> str:
        return self.raw[section][key]


def _parse_overrides(items) -> dict:
    out: dict = {}
    for it in items:
        if "=" not in it or "." not in it.split("=", 1)[0]:
            raise ConfigError(f"override {it!r} must look like section.key=value")
        k, v = it.split("=", 1)
        sec, key = k.strip().split(".", 1)
        out.setdefault(sec, {})[key] = v.strip()
    return out


def load_config(path, overrides=()) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if not cp.read(path):
        raise ConfigError(f"cannot read config file {path}")
    for sec, kv in _parse_overrides(overrides).items():
        if sec not in cp:
            raise ConfigError(f"unknown section {sec!r}")
        for k, v in kv.items():
            cp[sec][k] = v
    for sec in cp.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown section [{sec}]")
        for k in cp[sec]:
            if k not in DEFAULTS[sec]:
                raise ConfigError(f"unknown key {sec}.{k}")
    raw = {s: dict(cp[s]) for s in cp.sections()}
    ex = cp["experiment"]
    mode = ex["mode"]
    if mode not in MODES:
        raise ConfigError(f"experiment.mode must be one of {MODES}, got {mode!r}")
    s = cp["sim"]
    try:
        law = build_offspring_law(s.getfloat("m"), s.getfloat("beta"), s.getfloat("a"), s.getint("truncation_N"))
        ou = OUParams(sigma=s.getfloat("sigma"), mu=s.getfloat("mu"), d=s.getint("d"))
        x0 = tuple(float(v) for v in s["x0"].split(","))
        workers = ex["workers"].strip()
        sim = SimConfig(
            offspring=law, ou=ou, x0=x0, horizon_T=s.getint("horizon_T"),
            max_particles=s.getint("max_particles"), seed=s.getint("seed"),
            replicates=s.getint("replicates"), degree=s.getint("degree"),
            refinement=s.getint("refinement"), workers=int(workers) if workers else None,
        )
        g = PolynomialFn.from_json(cp["test_function"]["terms"], ou)
        if g.d != ou.d:
            raise ConfigError("test_function dimension does not match sim.d")
        v = cp["verify"]
        theta = np.linspace(0.0, v.getfloat("theta_max"), v.getint("theta_points"))
        float(ex["abort_ceiling"])
        int(ex["stats_seed"])
    except ConfigError:
        raise
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        raise ConfigError(str(e)) from e
    if g.degree > sim.degree and mode.startswith(("simulate", "verify")):
        raise ConfigError(f"test function degree {g.degree} exceeds sim.degree {sim.degree}")
    out = Path(os.environ.get(OUTPUT_ENV) or ex["output_dir"])
    return ExperimentConfig(mode=mode, sim=sim, test_function=g, theta_grid=theta, output_dir=out, raw=raw)


# ---------------------------------------------------------------------------


def _t_grid(cfg: ExperimentConfig, default) -> list[int]:
    txt = cfg.get("verify", "t_grid").strip()
    grid = [int(v) for v in txt.split(",")] if txt else list(default)
    if max(grid) > cfg.sim.horizon_T or min(grid) < 0:
        raise ConfigError(f"verify.t_grid {grid} outside 0..{cfg.sim.horizon_T}")
    return grid


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=verify._jsonable) + "\n")


class _Run:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.summary: list[str] = []
        self.results: dict = {}
        self.failures: list[str] = []
        self.abort_rate = 0.0

    def say(self, line: str) -> None:
        self.summary.append(line)

    def check(self, ok: bool, label: str) -> None:
        self.say(f"{'PASS' if ok else 'FAIL'} {label}")
        if not ok:
            self.failures.append(label)

    def simulate(self):
        snap = simulate(self.cfg.sim)
        self.abort_rate = snap.abort_rate
        self.say(f"replicates: {snap.replicates}, aborted: {int(np.sum(~snap.ok))}")
        return snap


def _regime(run: _Run):
    cfg = run.cfg
    rep = classify_regime(cfg.sim.ou, cfg.sim.lam, cfg.sim.offspring.beta, cfg.test_function)
    run.say(f"regime: {rep.regime}, threshold {rep.threshold:g}")
    run.say(f"normalization: {rep.normalization_descriptor}")
    run.results["regime"] = json.loads(rep.to_json())
    return rep


def mode_regimes(run: _Run) -> None:
    _regime(run)


def mode_limits(run: _Run) -> None:
    cfg = run.cfg
    rep = _regime(run)
    ou, lam, beta, g = cfg.sim.ou, cfg.sim.lam, cfg.sim.offspring.beta, cfg.test_function
    if rep.regime == "small":
        p = compute_m_series(ou, lam, beta, g, tol=float(cfg.get("quadrature", "tol")),
                             K_max=int(cfg.get("quadrature", "K_max")))
        run.results["limits"] = json.loads(p.to_json())
        run.say(f"m[g]: {p.m_series.real:.10g} {p.m_series.imag:+.10g}i (K={p.K}, tail bound {p.tail_bound:.3g})")
        m = p.m_series
    elif rep.regime == "critical":
        m = compute_m_bar(ou, lam, beta, g)
        run.results["limits"] = {"m_bar": [m.real, m.imag]}
        run.say(f"m_bar[g]: {m.real:.10g} {m.imag:+.10g}i")
    else:
        run.say("large regime: the limit is almost sure, no stable parameter")
        return
    cf_curve_to_csv(cfg.output_dir / "cf_curve.csv", m, cfg.theta_grid, beta)


def mode_simulate(run: _Run) -> None:
    snap = run.simulate()
    g = run.cfg.test_function
    snap.to_csv(run.cfg.output_dir / "replicates.csv", {"g": g})
    W = snap.W()[snap.ok]
    vals = snap.pairing(g)[snap.ok]
    run.results["simulation"] = {
        "t": snap.times.tolist(),
        "mean_W": W.mean(axis=0).tolist(),
        "median_population": np.median(snap.population()[snap.ok], axis=0).tolist(),
        "mean_g": vals.mean(axis=0).tolist(),
    }
    run.say(f"mean W_T: {W[:, -1].mean():.6g}")


def _verify_ecf(run: _Run, expected: str) -> None:
    cfg = run.cfg
    rep = _regime(run)
    if rep.regime != expected:
        raise ConfigError(f"mode verify-{expected} needs a {expected}-regime config, got {rep.regime}")
    ou, lam, beta, g = cfg.sim.ou, cfg.sim.lam, cfg.sim.offspring.beta, cfg.test_function
    if expected == "small":
        params = compute_m_series(ou, lam, beta, g)
    else:
        params = compute_m_bar(ou, lam, beta, g)
    snap = run.simulate()
    grid = _t_grid(cfg, [max(1, cfg.sim.horizon_T - 4), max(1, cfg.sim.horizon_T - 2), cfg.sim.horizon_T])
    gaps = []
    stats_seed = int(cfg.get("experiment", "stats_seed"))
    for t in grid:
        r = verify.ecf_test(snap, g, rep, params, t, cfg.theta_grid, stats_seed=stats_seed)
        r.to_csv(cfg.output_dir / f"ecf_t{t}.csv")
        gaps.append(r.max_abs_gap)
        run.say(f"t={t}: max |ECF - target| = {r.max_abs_gap:.4f} (split-half max z {r.split_half_max_z:.2f})")
    run.results["ecf_gaps"] = dict(zip(map(str, grid), gaps))
    tol = float(cfg.get("verify", "gap_tol"))
    run.check(all(b < a for a, b in zip(gaps, gaps[1:])), f"ECF gap decreasing over t={grid}")
    run.check(gaps[-1] < tol, f"final ECF gap {gaps[-1]:.4f} < {tol}")


def mode_verify_small(run: _Run) -> None:
    _verify_ecf(run, "small")


def mode_verify_critical(run: _Run) -> None:
    _verify_ecf(run, "critical")


def mode_verify_large(run: _Run) -> None:
    cfg = run.cfg
    rep = _regime(run)
    if rep.regime != "large":
        raise ConfigError(f"mode verify-large needs a large-regime config, got {rep.regime}")
    snap = run.simulate()
    grid = _t_grid(cfg, range(2, cfg.sim.horizon_T + 1))
    stats_seed = int(cfg.get("experiment", "stats_seed"))
    g = cfg.test_function
    al = verify.as_limit_test(snap, g, rep, grid, stats_seed=stats_seed)
    sc = verify.scaling_exponent(snap, g, grid, stats_seed=stats_seed)
    run.results["as_limit"] = json.loads(al.to_json())
    run.results["scaling"] = json.loads(sc.to_json())
    tol = float(cfg.get("verify", "slope_tol"))
    run.say(f"increment decay slope {al.slope:.3f} (band {al.band[0]:.3f}..{al.band[1]:.3f})")
    run.say(f"scaling slope {sc.slope:.3f} vs {sc.theoretical:.3f} (band {sc.band[0]:.3f}..{sc.band[1]:.3f})")
    run.check(al.slope < 0, "median path increments decay")
    run.check(abs(sc.slope - sc.theoretical) <= tol, f"scaling slope within {tol} of lambda - kappa mu")


def mode_gw_tail(run: _Run) -> None:
    cfg = run.cfg
    law, T = cfg.sim.offspring, cfg.sim.horizon_T
    thr_txt = cfg.get("verify", "threshold").strip()
    thr = float(thr_txt) if thr_txt else math.exp(law.lam * T / 2.0)
    rep = verify.small_population_check(
        law, T, thr, cfg.sim.replicates, seed=cfg.sim.seed, tol=float(cfg.get("verify", "log_tol")),
        use_thinned=cfg.get("verify", "thinned").lower() in ("1", "true", "yes"),
    )
    run.results["small_population"] = json.loads(rep.to_json())
    run.say(f"P(|X_{T}| <= {thr:.6g}) = {rep.probability:.6g} (log {rep.log_probability:.4f})")
    run.say(f"predicted log {rep.predicted_log:.4f}, single-child-thinned {rep.predicted_log_thinned:.4f}")
    run.check(rep.within_tolerance, "log-probability within tolerance of the predicted exponent")


_DISPATCH = {
    "simulate": mode_simulate,
    "limits": mode_limits,
    "regimes": mode_regimes,
    "verify-small": mode_verify_small,
    "verify-critical": mode_verify_critical,
    "verify-large": mode_verify_large,
    "gw-tail": mode_gw_tail,
}


def manifest(cfg: ExperimentConfig, started: float, finished: float, status: int, abort_rate: float) -> dict:
    plan = seed_plan(cfg.sim.seed, cfg.sim.replicates)
    return {
        "library": "stablebranch",
        "version": __version__,
        "mode": cfg.mode,
        "config": cfg.raw,
        "resolved": {
            "lambda": cfg.sim.lam,
            "p1": cfg.sim.offspring.p1,
            "test_function": json.loads(cfg.test_function.to_json()),
            "kappa": expand_in_hermite(cfg.sim.ou, cfg.test_function).kappa,
            "output_dir": str(cfg.output_dir),
        },
        "seed_plan": {
            "first": [int(v) for v in plan[:16]],
            "count": int(len(plan)),
            "sha256": hashlib.sha256(plan.tobytes()).hexdigest(),
        },
        "abort_rate": abort_rate,
        "exit_status": status,
        "wall_clock": {"started": started, "finished": finished},
    }


def run(config_path, overrides=(), stream=None) -> int:
    try:
        cfg = load_config(config_path, overrides)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    r = _Run(cfg)
    try:
        _DISPATCH[cfg.mode](r)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        _write_json(cfg.output_dir / "manifest.json", manifest(cfg, started, time.time(), EXIT_CONFIG, r.abort_rate))
        return EXIT_CONFIG
    ceiling = float(cfg.get("experiment", "abort_ceiling"))
    status = EXIT_OK
    if r.abort_rate > ceiling:
        r.say(f"FAIL abort rate {r.abort_rate:.4g} exceeds ceiling {ceiling:g}")
        status = EXIT_ABORTS
    elif r.failures:
        status = EXIT_ASSERT
    # manifest first, so results never exist without one
    _write_json(cfg.output_dir / "manifest.json", manifest(cfg, started, time.time(), status, r.abort_rate))
    _write_json(cfg.output_dir / "results.json", r.results)
    (cfg.output_dir / "summary.txt").write_text("\n".join(r.summary) + "\n")
    for line in r.summary:
        print(line, file=stream or sys.stdout)
    return status


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="stablebranch", description=__doc__.splitlines()[0])
    ap.add_argument("config", help="INI experiment config")
    ap.add_argument("overrides", nargs="*", help="section.key=value overrides")
    ns = ap.parse_args(argv)
    return run(ns.config, ns.overrides)


if __name__ == "__main__":
    sys.exit(main())
