"""Monte-Carlo coverage study on synthetic models with known quantiles.

Both designs draw ``W ~ U(0, 1)`` and ``eps ~ N(0, 1)`` and set
``Y = g(W) + s(W) eps`` with ``g(w) = 2w + w^2``. The location model has
``s = 1``; the location-scale model has ``s(w) = 1 + 0.5 w``. Hence
``Q(tau | w) = g(w) + s(w) Phi^-1(tau)``.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import replace

import numpy as np
from scipy import stats

from npqr.basis import basis_from_config
from npqr.config import RunConfig, SimConfig
from npqr.dataio import ModelSpec, build_design, make_dataset
from npqr.errors import ConfigError
from npqr.functional import LoadSpec, measure_weights, apply_load, build_load
from npqr.inference import bands_and_pvalues, studentised_draws
from npqr.qrfit import fit_process

SIM_MODEL = ModelSpec("y", "w")
_DATA_STREAM = 101
_SEED_STREAM = 102


def _scale(dgp: str, w, deriv: int):
    w = np.asarray(w, dtype=float)
    if dgp == "location":
        return np.full_like(w, 1.0 if deriv == 0 else 0.0)
    return {0: 1.0 + 0.5 * w, 1: np.full_like(w, 0.5), 2: np.zeros_like(w)}[deriv]


def _location(w, deriv: int):
    w = np.asarray(w, dtype=float)
    return {0: 2 * w + w**2, 1: 2 + 2 * w, 2: np.full_like(w, 2.0)}[deriv]


def generate(dgp: str, n: int, rng: np.random.Generator):
    """One synthetic sample as a Dataset."""
    w = rng.random(n)
    eps = rng.standard_normal(n)
    return make_dataset(_location(w, 0) + _scale(dgp, w, 0) * eps, w)


def true_quantile(dgp: str, w, taus, deriv: int = 0) -> np.ndarray:
    """``d^k/dw^k Q(tau | w)`` as a ``len(w) x len(taus)`` matrix."""
    z = stats.norm.ppf(np.asarray(taus, dtype=float))
    w = np.atleast_1d(np.asarray(w, dtype=float))
    return _location(w, deriv)[:, None] + _scale(dgp, w, deriv)[:, None] * z[None, :]


def true_functional(dgp: str, load: LoadSpec, taus, w_sample, se_mode: str) -> np.ndarray:
    """Target of the load: population average (unconditional) or sample average."""
    if not load.average:
        pts = np.unique(w_sample) if load.eval_points is None else np.asarray(load.eval_points)
        return true_quantile(dgp, pts, taus, load.deriv)
    if se_mode == "conditional":
        pi = measure_weights(load.measure, np.asarray(w_sample))
        return pi @ true_quantile(dgp, w_sample, taus, load.deriv)
    # E over W ~ U(0,1); both g and s are polynomials of degree <= 2
    nodes, weights = np.polynomial.legendre.leggauss(4)
    u = 0.5 * (nodes + 1.0)
    return (0.5 * weights) @ true_quantile(dgp, u, taus, load.deriv)


def _seed_for(seed: int, r: int) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(_SEED_STREAM, r))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_simulation(cfg: RunConfig, sim: SimConfig | None = None) -> dict:
    """Coverage, p-values and timing for every method in ``sim.methods``."""
    sim = sim or cfg.simulate
    if sim.R < 1:
        raise ConfigError("simulate needs at least one replication (R >= 1)")
    taus = cfg.taus
    base_inf = cfg.inference
    cover_u = {m: [] for m in sim.methods}
    cover_p = {m: [] for m in sim.methods}
    pvals = {m: [] for m in sim.methods}
    secs = dict.fromkeys(sim.methods, 0.0)
    fit_secs = 0.0
    for r in range(sim.R):
        rng = np.random.default_rng(np.random.SeedSequence(sim.seed, spawn_key=(_DATA_STREAM, r)))
        ds = generate(sim.dgp, sim.n, rng)
        basis = basis_from_config(cfg.basis, ds.treatment)
        t0 = time.perf_counter()
        design = build_design(ds, SIM_MODEL, basis)
        fit = fit_process(design, ds.outcome, taus, np.ones(ds.n), rank_checked=True)
        load = build_load(cfg.load, basis, ds, design)
        est = apply_load(load, fit)
        fit_secs += time.perf_counter() - t0
        for method in sim.methods:
            se_mode = "unconditional" if method in ("wbootstrap", "gbootstrap") else base_inf.se_mode
            icfg = replace(base_inf, process=method, se_mode=se_mode, rng_seed=_seed_for(sim.seed, r))
            truth = true_functional(sim.dgp, cfg.load, taus.array, ds.treatment, se_mode)
            t0 = time.perf_counter()
            se, _, F = studentised_draws(design, ds.outcome, fit, load, icfg)
            ci_u, _, pv, _ = bands_and_pvalues(est, se, F, ds.n, icfg.alpha, True)
            ci_p, _, _, _ = bands_and_pvalues(est, se, F, ds.n, icfg.alpha, False)
            secs[method] += time.perf_counter() - t0
            cover_u[method].append(bool(np.all((ci_u[..., 0] <= truth) & (truth <= ci_u[..., 1]))))
            cover_p[method].append(float(np.mean((ci_p[..., 0] <= truth) & (truth <= ci_p[..., 1]))))
            pvals[method].append(float(pv[2]))

    def mc_se(p):
        return float(np.sqrt(p * (1 - p) / sim.R))

    methods = {}
    for m in sim.methods:
        cu = float(np.mean(cover_u[m]))
        methods[m] = {"coverage_uniform": cu, "coverage_uniform_mc_se": mc_se(cu),
                      "coverage_pointwise": float(np.mean(cover_p[m])),
                      "mean_pvalue": float(np.mean(pvals[m])),
                      "seconds": secs[m], "seconds_per_replication": secs[m] / sim.R}
    deltas = {}
    for a, b in itertools.combinations(sim.methods, 2):
        d = np.abs(np.asarray(pvals[a]) - np.asarray(pvals[b]))
        deltas[f"{a}-{b}"] = {"mean_abs": float(d.mean()), "max_abs": float(d.max())}
    return {
        "dgp": sim.dgp, "n": sim.n, "R": sim.R, "seed": sim.seed,
        "alpha": base_inf.alpha, "B": base_inf.B, "se": base_inf.se_mode,
        "nderivs": cfg.load.deriv, "average": cfg.load.average, "taus": list(taus.taus),
        "methods": methods, "pvalue_deltas": deltas, "fit_seconds": fit_secs,
    }
