"""Simulation-based inference on linear functionals of the QR process.

Four processes approximate the law of ``sqrt(n) * (beta_hat(tau) - beta(tau))``:

* ``pivotal``: ``J(tau)^-1 n^-1/2 sum_i Z_i (tau - 1{U_i <= tau})`` with uniform U;
* ``gaussian``: the Gaussian process with covariance
  ``(min(tau, tau') - tau tau') E[ZZ']``, mapped through ``J(tau)^-1``;
* ``wbootstrap``: refits with i.i.d. standard exponential weights;
* ``gbootstrap``: refits with the pivotal score added as a linear shift.

All draws share one reduction path: functional draws are studentised by the
standard errors and sup statistics give critical values and p-values.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from npqr import kernels
from npqr.basis import TauGrid
from npqr.dataio import DesignMatrix
from npqr.errors import ConfigError, JacobianError, NumericalError
from npqr.functional import LoadMatrix
from npqr.qrfit import QrProcessFit, fit_process

PROCESSES = ("pivotal", "gaussian", "wbootstrap", "gbootstrap", "none")
BOOTSTRAPS = ("wbootstrap", "gbootstrap")
SE_MODES = ("conditional", "unconditional")
BANDWIDTH_RULES = ("hall-sheather", "bofinger")

# independent RNG substreams, keyed with the draw index
_STREAM = {"pivotal": 1, "gaussian": 2, "wbootstrap": 3, "gbootstrap": 4, "correction": 5}
# draws are generated in fixed-size chunks so results do not depend on threads
CHUNK = 32


@dataclass(frozen=True)
class InferenceConfig:
    process: str = "pivotal"
    B: int = 500
    alpha: float = 0.05
    uniform: bool = True
    se_mode: str = "unconditional"
    rng_seed: int = 0
    bandwidth_rule: str = "hall-sheather"
    threads: int = 1
    analytic_se: bool = False

    def __post_init__(self):
        if self.process not in PROCESSES:
            raise ConfigError(f"process must be one of {PROCESSES}, got {self.process!r}", module="inference")
        if self.process != "none" and self.B < 2:
            raise ConfigError("B must be at least 2", module="inference")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)", module="inference")
        if self.se_mode not in SE_MODES:
            raise ConfigError(f"se must be one of {SE_MODES}", module="inference")
        if self.bandwidth_rule not in BANDWIDTH_RULES:
            raise ConfigError(f"bandwidth rule must be one of {BANDWIDTH_RULES}", module="inference")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1", module="inference")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer", module="inference")


@dataclass(frozen=True)
class JacobianEstimate:
    """Per-tau kernel estimates ``J(tau)`` (``T x m x m``) and ``E_n[ZZ']``."""

    matrices: np.ndarray
    bandwidths: np.ndarray
    gram: np.ndarray

    def inverses(self) -> np.ndarray:
        return np.stack([linalg.cho_solve(linalg.cho_factor(J), np.eye(J.shape[0])) for J in self.matrices])


@dataclass(frozen=True)
class InferenceResult:
    point_est: np.ndarray
    taus: np.ndarray
    var_unique: np.ndarray
    coefficients: np.ndarray
    load: np.ndarray
    std_error: np.ndarray | None = None
    ci: np.ndarray | None = None
    ci_one_sided: np.ndarray | None = None
    pvalues: np.ndarray | None = None
    row_labels: tuple[str, ...] = field(default=(), compare=False)
    critical_value: np.ndarray | None = field(default=None, compare=False)
    std_error_conditional: np.ndarray | None = field(default=None, compare=False)


def rng_for(seed: int, stream: str, b: int) -> np.random.Generator:
    """Generator for draw ``b`` of a named stream."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(_STREAM[stream], int(b))))


def _chunked(B: int, threads: int, work):
    """Run ``work(lo, hi)`` over fixed chunks of draw indices, in order."""
    bounds = [(lo, min(lo + CHUNK, B)) for lo in range(0, B, CHUNK)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda ab: work(*ab), bounds))
    else:
        parts = [work(lo, hi) for lo, hi in bounds]
    return np.concatenate(parts, axis=0)


def _Z(design) -> np.ndarray:
    return design.values if isinstance(design, DesignMatrix) else np.asarray(design, dtype=float)


def hall_sheather(n: int, tau: float, alpha: float = 0.05) -> float:
    z = stats.norm.ppf(tau)
    return n ** (-1 / 3) * stats.norm.ppf(1 - alpha / 2) ** (2 / 3) * \
        (1.5 * stats.norm.pdf(z) ** 2 / (2 * z**2 + 1)) ** (1 / 3)


def bofinger(n: int, tau: float) -> float:
    z = stats.norm.ppf(tau)
    return n ** (-1 / 5) * (4.5 * stats.norm.pdf(z) ** 4 / (2 * z**2 + 1) ** 2) ** (1 / 5)


def residual_bandwidth(residuals: np.ndarray, tau: float, alpha: float = 0.05,
                       rule: str = "hall-sheather") -> float:
    """Bandwidth on the residual scale for the Powell sparsity estimate.

    The rule gives a bandwidth ``h`` in quantile units; it is mapped to the
    residual scale as ``kappa * (Phi^-1(tau + h) - Phi^-1(tau - h))`` with
    ``kappa = min(sd, IQR / 1.34)`` of the residuals.
    """
    n = residuals.size
    h = hall_sheather(n, tau, alpha) if rule == "hall-sheather" else bofinger(n, tau)
    h = min(h, 0.999 * tau, 0.999 * (1 - tau))
    q75, q25 = np.quantile(residuals, [0.75, 0.25])
    kappa = min(float(np.std(residuals, ddof=1)), (q75 - q25) / 1.34)
    if not kappa > 0:
        kappa = float(np.std(residuals, ddof=1))
    return kappa * (stats.norm.ppf(tau + h) - stats.norm.ppf(tau - h))


def estimate_jacobian(design, residuals, tau_grid: TauGrid, alpha: float = 0.05,
                      rule: str = "hall-sheather", bandwidth: float | None = None) -> JacobianEstimate:
    """Powell kernel estimate ``(n h)^-1 sum_i K(r_i / h) Z_i Z_i'`` per tau.

    Uses the uniform kernel ``K(u) = 1/2 * 1{|u| <= 1}``. A fixed ``bandwidth``
    overrides the rule.
    """
    Z = _Z(design)
    n, m = Z.shape
    R = np.asarray(residuals, dtype=float).reshape(n, -1)
    taus = tau_grid.array
    if R.shape[1] != taus.size:
        raise ConfigError("need one residual column per tau", module="inference")
    mats, hs = [], []
    for k, tau in enumerate(taus):
        r = R[:, k]
        h = bandwidth if bandwidth is not None else residual_bandwidth(r, tau, alpha, rule)
        if not h > 0:
            raise JacobianError(f"non-positive bandwidth at tau={tau}")
        kern = 0.5 * (np.abs(r / h) <= 1.0)
        J = (Z * kern[:, None]).T @ Z / (n * h)
        J = 0.5 * (J + J.T)
        ev = np.linalg.eigvalsh(J)
        if not ev[-1] > 0 or ev[0] <= 1e-12 * ev[-1]:
            raise JacobianError(f"Jacobian estimate at tau={tau} is not positive definite "
                                f"(bandwidth {h:.4g}); use a larger bandwidth")
        mats.append(J)
        hs.append(h)
    gram = Z.T @ Z / n
    return JacobianEstimate(np.stack(mats), np.asarray(hs), 0.5 * (gram + gram.T))


def bridge_covariance(taus) -> np.ndarray:
    t = np.asarray(taus, dtype=float)
    return np.minimum.outer(t, t) - np.outer(t, t)


def draw_pivotal(design, jacobian: JacobianEstimate, tau_grid: TauGrid, B: int, seed: int,
                 threads: int = 1, return_scores: bool = False) -> np.ndarray:
    """``B x m x T`` pivotal draws ``J(tau)^-1 s_b(tau)``.

    ``s_b(tau) = n^-1/2 sum_i Z_i (tau - 1{U_i <= tau})``; with
    ``return_scores=True`` the raw scores are returned instead.
    """
    Z = np.ascontiguousarray(_Z(design))
    n = Z.shape[0]
    taus = tau_grid.array
    Jinv = None if return_scores else jacobian.inverses()

    def work(lo, hi):
        U = np.stack([rng_for(seed, "pivotal", b).random(n) for b in range(lo, hi)])
        S = kernels.score_process(Z, U, taus) / math.sqrt(n)
        return S if Jinv is None else np.einsum("tij,bjt->bit", Jinv, S)

    return _chunked(B, threads, work)


def draw_gaussian(design, jacobian: JacobianEstimate, tau_grid: TauGrid, B: int, seed: int,
                  threads: int = 1, return_scores: bool = False) -> np.ndarray:
    """``B x m x T`` Gaussian draws via ``S = L_Z G L_T'`` then ``J(tau)^-1 S``."""
    taus = tau_grid.array
    m = jacobian.gram.shape[0]
    try:
        L_T = linalg.cholesky(bridge_covariance(taus), lower=True)
    except linalg.LinAlgError:
        raise NumericalError("bridge covariance is singular (duplicate taus?)", module="inference") from None
    L_Z = linalg.cholesky(jacobian.gram, lower=True)
    Jinv = None if return_scores else jacobian.inverses()

    def work(lo, hi):
        G = np.stack([rng_for(seed, "gaussian", b).standard_normal((m, taus.size)) for b in range(lo, hi)])
        S = np.einsum("ij,bjt,st->bis", L_Z, G, L_T)
        return S if Jinv is None else np.einsum("tij,bjt->bit", Jinv, S)

    return _chunked(B, threads, work)


def exponential_weights(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_exponential(n)


def draw_wbootstrap(design, y, tau_grid: TauGrid, B: int, seed: int, fit: QrProcessFit | None = None,
                    threads: int = 1, weight_sampler=exponential_weights) -> np.ndarray:
    """``B x m x T`` draws ``sqrt(n) (beta_b - beta_hat)`` from weighted refits."""
    Z = _Z(design)
    n = Z.shape[0]
    if fit is None:
        fit = fit_process(Z, y, tau_grid, np.ones(n))

    def one(b):
        w = weight_sampler(rng_for(seed, "wbootstrap", b), n)
        try:
            refit = fit_process(Z, y, tau_grid, w, rank_checked=True)
        except NumericalError as exc:
            raise NumericalError(f"weighted bootstrap refit failed at draw b={b}, tau={getattr(exc, 'tau', None)}: "
                                 f"{exc.args[0]}", module="inference") from exc
        return math.sqrt(n) * (refit.betas - fit.betas)

    return _chunked(B, threads, lambda lo, hi: np.stack([one(b) for b in range(lo, hi)]))


def draw_gbootstrap(design, y, fit: QrProcessFit, tau_grid: TauGrid, B: int, seed: int,
                    threads: int = 1, perturbation_scale: float = 1.0) -> np.ndarray:
    """``B x m x T`` draws from refits with the pivotal score as gradient shift.

    Each refit minimises ``sum_i rho_tau(y_i - Z_i'b) + b' g_b(tau)`` with
    ``g_b(tau) = sum_i Z_i (tau - 1{U_i <= tau})``, i.e. the solver shift is
    ``-g_b``. With this sign the objective is bounded below for every draw;
    with the opposite sign it is unbounded whenever the uniforms below ``tau``
    cluster on the support of a local basis function.
    """
    Z = np.ascontiguousarray(_Z(design))
    n = Z.shape[0]
    taus = tau_grid.array

    def one(b):
        U = rng_for(seed, "pivotal", b).random(n)
        shift = -perturbation_scale * kernels.score_process(Z, U, taus)
        try:
            refit = fit_process(Z, y, tau_grid, np.ones(n), shift, rank_checked=True)
        except NumericalError as exc:
            raise NumericalError(f"gradient bootstrap refit failed at draw b={b}, "
                                 f"tau={getattr(exc, 'tau', None)}: {exc.args[0]}", module="inference") from exc
        return math.sqrt(n) * (refit.betas - fit.betas)

    return _chunked(B, threads, lambda lo, hi: np.stack([one(b) for b in range(lo, hi)]))


def _correction_parts(load: LoadMatrix, fit: QrProcessFit):
    """Per-observation deviations ``l_i' beta(tau) - mean`` and measure weights."""
    g = load.per_observation @ fit.betas
    pi = load.measure
    dev = g - pi @ g
    return dev, pi


def functional_draws(draws: np.ndarray, load: LoadMatrix, fit: QrProcessFit, config: InferenceConfig,
                     n: int) -> np.ndarray:
    """``B x p x T`` draws of ``sqrt(n) (l' beta* - l' beta_hat)``.

    For unconditional inference on averaged loads an independent multiplier
    draw ``sqrt(n) sum_i pi_i xi_i (g_i - g_bar)`` is added, which accounts for
    the estimated distribution of W.
    """
    F = np.einsum("jk,bkt->bjt", load.rows, draws)
    if config.se_mode == "unconditional" and load.averaged:
        dev, pi = _correction_parts(load, fit)
        A = pi[:, None] * dev
        B = F.shape[0]

        def work(lo, hi):
            xi = np.stack([rng_for(config.rng_seed, "correction", b).standard_normal(n) for b in range(lo, hi)])
            return math.sqrt(n) * (xi @ A)

        F = F + _chunked(B, config.threads, work)[:, None, :]
    return F


def std_errors(draws: np.ndarray, load: LoadMatrix, fit: QrProcessFit, config: InferenceConfig, n: int,
               jacobian: JacobianEstimate | None = None):
    """Standard errors (``p x T``) for the configured mode.

    Returns ``(se, se_conditional)``. The conditional error is
    ``n^-1/2 sd_b(l' draw_b)``; the unconditional one adds
    ``sum_i pi_i^2 (g_i - g_bar)^2`` to the variance for averaged loads.
    """
    if config.process in BOOTSTRAPS and config.se_mode == "conditional":
        raise ConfigError("conditional standard errors are not available for bootstrap processes; "
                          "their inference is always unconditional", module="inference")
    if config.analytic_se and config.process in ("pivotal", "gaussian"):
        if jacobian is None:
            raise ConfigError("analytic standard errors need the Jacobian estimate", module="inference")
        taus = fit.taus.array
        Jinv = jacobian.inverses()
        V = np.einsum("tij,jk,tkl->til", Jinv, jacobian.gram, Jinv)
        var = np.einsum("pi,til,pl->pt", load.rows, V, load.rows) * (taus * (1 - taus))[None, :] / n
    else:
        lin = np.einsum("jk,bkt->bjt", load.rows, draws)
        var = np.var(lin, axis=0, ddof=1) / n
    if np.any(~(var > 0)):
        raise NumericalError("draws have zero variance; cannot studentise", module="inference")
    se_cond = np.sqrt(var)
    if config.se_mode == "unconditional" and load.averaged:
        dev, pi = _correction_parts(load, fit)
        var = var + (pi**2) @ (dev**2)
    return np.sqrt(var), se_cond


def _upper_quantile(values: np.ndarray, level: float, axis=0) -> np.ndarray:
    return np.quantile(values, level, axis=axis, method="inverted_cdf")


def bands_and_pvalues(point_est: np.ndarray, std_error: np.ndarray, fdraws: np.ndarray, n: int,
                      alpha: float, uniform: bool):
    """Two-sided and one-sided bands plus sup-test p-values.

    Returns ``(ci, ci_one_sided, pvalues, critical_value)``. The p-values test,
    in order, H0: functional <= 0 everywhere, >= 0 everywhere, = 0 everywhere;
    they use the add-one convention ``(count + 1) / (B + 1)``.
    """
    B = fdraws.shape[0]
    if B * alpha < 1:
        raise ConfigError(f"B={B} draws are too few for alpha={alpha} (need B * alpha >= 1)",
                          module="inference")
    if np.any(~(std_error > 0)):
        raise NumericalError("standard errors must be positive", module="inference")
    t = fdraws / (math.sqrt(n) * std_error[None, :, :])
    level = 1.0 - alpha
    if uniform:
        flat = t.reshape(B, -1)
        k2 = _upper_quantile(np.max(np.abs(flat), axis=1), level)
        klo = _upper_quantile(np.max(flat, axis=1), level)
        kup = _upper_quantile(np.max(-flat, axis=1), level)
        k2, klo, kup = (np.full(point_est.shape, float(v)) for v in (k2, klo, kup))
    else:
        k2 = _upper_quantile(np.abs(t), level)
        klo = _upper_quantile(t, level)
        kup = _upper_quantile(-t, level)
    klo = np.maximum(klo, 0.0)
    kup = np.maximum(kup, 0.0)
    ci = np.stack([point_est - k2 * std_error, point_est + k2 * std_error], axis=-1)
    ci1 = np.stack([point_est - klo * std_error, point_est + kup * std_error], axis=-1)

    obs = point_est / std_error
    tmax = t.reshape(B, -1)
    p_le = (np.sum(tmax.max(axis=1) >= obs.max()) + 1) / (B + 1)
    p_ge = (np.sum((-tmax).max(axis=1) >= (-obs).max()) + 1) / (B + 1)
    p_eq = (np.sum(np.abs(tmax).max(axis=1) >= np.abs(obs).max()) + 1) / (B + 1)
    return ci, ci1, np.array([p_le, p_ge, p_eq]), k2


def simulate_draws(process: str, design, y, fit: QrProcessFit, jacobian: JacobianEstimate | None,
                   config: InferenceConfig) -> np.ndarray:
    """Coefficient draws (``B x m x T``) for the configured process."""
    tg = fit.taus
    if process == "pivotal":
        return draw_pivotal(design, jacobian, tg, config.B, config.rng_seed, config.threads)
    if process == "gaussian":
        return draw_gaussian(design, jacobian, tg, config.B, config.rng_seed, config.threads)
    if process == "wbootstrap":
        return draw_wbootstrap(design, y, tg, config.B, config.rng_seed, fit, config.threads)
    if process == "gbootstrap":
        return draw_gbootstrap(design, y, fit, tg, config.B, config.rng_seed, config.threads)
    raise ConfigError(f"no draws for process {process!r}", module="inference")


def studentised_draws(design, y, fit: QrProcessFit, load: LoadMatrix, config: InferenceConfig):
    """Standard errors and functional draws for a process other than ``none``.

    Returns ``(se, se_conditional, fdraws)``.
    """
    Z = _Z(design)
    n = Z.shape[0]
    if config.process in BOOTSTRAPS and config.se_mode == "conditional":
        raise ConfigError("conditional standard errors are not available for bootstrap processes; "
                          "their inference is always unconditional", module="inference")
    if config.B * config.alpha < 1:
        raise ConfigError(f"B={config.B} draws are too few for alpha={config.alpha}", module="inference")
    jac = None
    if config.process in ("pivotal", "gaussian"):
        jac = estimate_jacobian(Z, fit.residuals, fit.taus, config.alpha, config.bandwidth_rule)
    draws = simulate_draws(config.process, Z, y, fit, jac, config)
    se, se_cond = std_errors(draws, load, fit, config, n, jac)
    return se, se_cond, functional_draws(draws, load, fit, config, n)


def infer(design, y, fit: QrProcessFit, load: LoadMatrix, config: InferenceConfig, point_est: np.ndarray,
          var_unique: np.ndarray) -> InferenceResult:
    """Run the configured process and assemble an InferenceResult."""
    base = dict(point_est=point_est, taus=fit.taus.array, var_unique=np.asarray(var_unique),
                coefficients=fit.betas.T.copy(), load=load.rows, row_labels=load.labels)
    if config.process == "none":
        return InferenceResult(**base)
    se, se_cond, F = studentised_draws(design, y, fit, load, config)
    n = _Z(design).shape[0]
    ci, ci1, pv, k = bands_and_pvalues(point_est, se, F, n, config.alpha, config.uniform)
    return InferenceResult(**base, std_error=se, ci=ci, ci_one_sided=ci1, pvalues=pv,
                           critical_value=k, std_error_conditional=se_cond)
