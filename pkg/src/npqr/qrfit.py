"""Quantile regression by a primal-dual interior-point method.

For a design ``Z``, outcome ``y``, quantile index ``tau``, positive weights
``w`` and a linear shift vector ``g`` the solver minimises

    sum_i w_i * rho_tau(y_i - Z_i' b) - b' g,   rho_tau(u) = (tau - 1{u < 0}) * u.

The LP dual is ``max y'x  s.t.  Z'x = (1 - tau) Z'w - g,  0 <= x <= w`` and is
solved with a Mehrotra predictor-corrector scheme (the Frisch-Newton family);
``b`` is recovered as the multiplier of the equality constraint.

When the optimal set in ``b`` is unbounded (possible for some shifts) the
interior-point iterates drift along it; the primal LP is then re-solved with
the HiGHS simplex code, which returns a finite optimal vertex or reports that
the objective is unbounded below.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, sparse

from npqr.basis import TauGrid
from npqr.dataio import DesignMatrix, check_rank
from npqr.errors import ConfigError, ConvergenceError, NumericalError, RankDeficiencyError

MAX_ITER = 200
GAP_TOL = 1e-8
STEP_FRACTION = 0.9995
TOL_GRAD = 1e-6
FLAT_SHRINK = 1e-6


def _values(design) -> np.ndarray:
    if isinstance(design, DesignMatrix):
        return design.values
    return np.asarray(design, dtype=float)


def _names(design) -> list[str]:
    if isinstance(design, DesignMatrix):
        return list(design.column_names)
    return [f"col{k}" for k in range(np.shape(design)[1])]


@dataclass(frozen=True)
class QrProblem:
    design: DesignMatrix | np.ndarray
    y: np.ndarray
    tau: float
    weights: np.ndarray | None = None
    gradient_shift: np.ndarray | None = None

    def __post_init__(self):
        Z = _values(self.design)
        if Z.ndim != 2:
            raise ConfigError("design must be a 2-D matrix", module="qrfit")
        n, m = Z.shape
        y = np.asarray(self.y, dtype=float).ravel()
        if y.size != n:
            raise ConfigError(f"y has length {y.size}, design has {n} rows", module="qrfit")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}", module="qrfit")
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float).ravel()
        if w.size != n or np.any(~(w > 0)) or not np.all(np.isfinite(w)):
            raise ConfigError("weights must be positive and finite with one per observation", module="qrfit")
        g = np.zeros(m) if self.gradient_shift is None else np.asarray(self.gradient_shift, dtype=float).ravel()
        if g.size != m:
            raise ConfigError(f"gradient_shift has length {g.size}, expected {m}", module="qrfit")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "gradient_shift", g)

    @property
    def Z(self) -> np.ndarray:
        return _values(self.design)


@dataclass(frozen=True)
class QrSolution:
    beta: np.ndarray
    residuals: np.ndarray
    objective: float
    iterations: int
    duality_gap: float
    tau: float = math.nan


@dataclass(frozen=True)
class QrProcessFit:
    """Coefficient paths over a tau grid; ``betas`` is ``m x len(taus)``."""

    taus: TauGrid
    betas: np.ndarray
    solutions: tuple[QrSolution, ...] = field(repr=False)

    @property
    def residuals(self) -> np.ndarray:
        """``n x len(taus)`` residual matrix."""
        return np.column_stack([s.residuals for s in self.solutions])


def check_objective(Z, y, beta, tau, weights=None, shift=None) -> float:
    """Weighted check-function objective minus the linear shift term."""
    r = np.asarray(y) - np.asarray(Z) @ np.asarray(beta)
    loss = r * (tau - (r < 0))
    if weights is not None:
        loss = loss * weights
    val = math.fsum(loss)
    if shift is not None:
        val -= float(np.dot(beta, shift))
    return val


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def _solve_normal(M: np.ndarray):
    try:
        fac = linalg.cho_factor(M, lower=False, check_finite=False)
        return lambda rhs: linalg.cho_solve(fac, rhs, check_finite=False)
    except linalg.LinAlgError:
        lu = linalg.lu_factor(M, check_finite=False)
        return lambda rhs: linalg.lu_solve(lu, rhs, check_finite=False)


def _interior_point(Z, y, tau, w, g, beta0, max_iter, tol):
    n, m = Z.shape
    b = (1.0 - tau) * (Z.T @ w) - g
    # primal (dual-of-QR) start at the centre of the box
    x = (1.0 - tau) * w
    s = tau * w
    lam = -beta0
    r = y - Z @ beta0
    zd = np.maximum(-r, 0.0)
    wd = np.maximum(r, 0.0)
    delta = 0.5 * (x @ zd + s @ wd) / (x.sum() + s.sum())
    delta = max(delta, 1e-3 * float(np.mean(np.abs(r))), 1e-8 * (1.0 + float(np.max(np.abs(y)))))
    zd = zd + delta
    wd = wd + delta
    c = -y
    bnorm = 1.0 + float(np.max(np.abs(b)))
    cnorm = 1.0 + float(np.max(np.abs(y)))
    wy = (1.0 - tau) * float(y @ w)

    pobj = dobj = math.nan
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out = _ipm_loop(Z, y, tau, w, g, b, c, x, s, lam, zd, wd, bnorm, cnorm, wy, max_iter, tol)
    if len(out) == 5:
        return out
    pobj, dobj, diverged = out
    reason = "diverged" if diverged else f"did not converge in {max_iter} iterations"
    raise ConvergenceError(f"interior point {reason} (tau={tau}, gap={pobj - dobj:.3e})",
                           duality_gap=pobj - dobj, tau=tau)


def _simplex(Z, y, tau, w, g):
    """Primal LP ``min tau w'u + (1-tau) w'v - g'b,  Zb + u - v = y`` via HiGHS."""
    n, m = Z.shape
    c = np.concatenate([-g, tau * w, (1.0 - tau) * w])
    eye = sparse.identity(n, format="csr")
    A = sparse.hstack([sparse.csr_matrix(Z), eye, -eye], format="csr")
    bounds = [(None, None)] * m + [(0, None)] * (2 * n)
    res = optimize.linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs")
    if res.status == 3:
        # an exactly flat ray can look unbounded after rounding; shrinking the
        # shift slightly makes every recession direction strictly costly
        c[:m] *= 1.0 - FLAT_SHRINK
        res = optimize.linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs")
    if res.status == 3:
        raise ConvergenceError(f"objective is unbounded below at tau={tau}; the gradient shift is too "
                               "large for this sample", duality_gap=math.inf, tau=tau)
    if res.status != 0:
        raise ConvergenceError(f"simplex fallback failed at tau={tau}: {res.message}", tau=tau)
    return res.x[:m]


def _ipm_loop(Z, y, tau, w, g, b, c, x, s, lam, zd, wd, bnorm, cnorm, wy, max_iter, tol):
    """Mehrotra iterations; returns the solution tuple or ``(pobj, dobj, diverged)``."""
    n = Z.shape[0]
    pobj = dobj = math.nan
    for it in range(1, max_iter + 1):
        rp = b - Z.T @ x
        rd = c - Z @ lam - zd + wd
        beta = -lam
        pobj = check_objective(Z, y, beta, tau, w, g)
        dobj = float(y @ x) - wy
        feas = float(np.max(np.abs(rp))) <= 1e-10 * bnorm
        if feas and pobj - dobj <= tol * (1.0 + abs(pobj)):
            return beta, x, pobj, dobj, it - 1

        d = 1.0 / (zd / x + wd / s)
        M = (Z * d[:, None]).T @ Z
        solve = _solve_normal(M)

        def newton(rxz, rsw):
            rho = rd - rxz / x + rsw / s
            dlam = solve(rp + Z.T @ (d * rho))
            dx = d * (Z @ dlam - rho)
            dz = (rxz - zd * dx) / x
            dw = (rsw + wd * dx) / s
            return dx, dlam, dz, dw

        # predictor
        dx, dlam, dz, dw = newton(-x * zd, -s * wd)
        ap = min(_max_step(x, dx), _max_step(s, -dx))
        ad = min(_max_step(zd, dz), _max_step(wd, dw))
        mu = (x @ zd + s @ wd) / (2 * n)
        mu_aff = ((x + ap * dx) @ (zd + ad * dz) + (s - ap * dx) @ (wd + ad * dw)) / (2 * n)
        sigma = (mu_aff / mu) ** 3
        # corrector
        dx, dlam, dz, dw = newton(sigma * mu - x * zd - dx * dz, sigma * mu - s * wd + dx * dw)
        ap = min(1.0, STEP_FRACTION * min(_max_step(x, dx), _max_step(s, -dx)))
        ad = min(1.0, STEP_FRACTION * min(_max_step(zd, dz), _max_step(wd, dw)))
        x = x + ap * dx
        s = s - ap * dx
        lam = lam + ad * dlam
        zd = zd + ad * dz
        wd = wd + ad * dw
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(lam))) or \
                float(np.max(np.abs(lam))) > 1e10 * cnorm:
            return pobj, dobj, True
    return pobj, dobj, False


def _purify(Z, y, tau, w, g, beta, pobj):
    """Snap a near-vertex interior solution onto the interpolating vertex."""
    n, m = Z.shape
    scale = 1.0 + float(np.max(np.abs(y)))
    r = y - Z @ beta
    cand = np.flatnonzero(np.abs(r) <= 1e-6 * scale)
    if cand.size >= m:
        _, R, piv = linalg.qr(Z[cand].T, mode="economic", pivoting=True)
        dR = np.abs(np.diag(R))
        if dR.size >= m and dR[m - 1] > 1e-10 * dR[0]:
            rows = cand[piv[:m]]
            try:
                bv = linalg.solve(Z[rows], y[rows], check_finite=False)
            except linalg.LinAlgError:
                bv = None
            if bv is not None:
                pv = check_objective(Z, y, bv, tau, w, g)
                if pv <= pobj + 1e-12 * (1.0 + abs(pobj)):
                    rv = y - Z @ bv
                    rv[rows] = 0.0
                    rv[np.abs(rv) <= 1e-12 * scale] = 0.0
                    return bv, rv, pv, True
    return beta, r, pobj, False


def fit_qr(problem: QrProblem, *, start: np.ndarray | None = None, max_iter: int = MAX_ITER,
           tol: float = GAP_TOL, rank_checked: bool = False) -> QrSolution:
    """Solve one weighted, shifted quantile regression problem.

    Parameters
    ----------
    problem : QrProblem
    start : ndarray, optional
        Initial coefficients (warm start). Defaults to weighted least squares.
    max_iter : int
        Iteration cap; exceeding it raises ``ConvergenceError``.
    tol : float
        Relative duality-gap tolerance.
    rank_checked : bool
        Skip the rank check when the caller already performed it.
    """
    Z = problem.Z
    n, m = Z.shape
    if not rank_checked:
        try:
            check_rank(Z, _names(problem.design))
        except RankDeficiencyError as exc:
            raise RankDeficiencyError(exc.args[0], exc.dependent, module="qrfit") from None
    y, w, g, tau = problem.y, problem.weights, problem.gradient_shift, float(problem.tau)
    if start is None:
        sw = np.sqrt(w)
        start = linalg.lstsq(Z * sw[:, None], y * sw, check_finite=False)[0]
    try:
        beta, _, pobj, dobj, iters = _interior_point(Z, y, tau, w, g, np.asarray(start, float), max_iter, tol)
        from_simplex = False
    except ConvergenceError:
        beta = _simplex(Z, y, tau, w, g)
        pobj = check_objective(Z, y, beta, tau, w, g)
        dobj, iters, from_simplex = pobj, max_iter, True
    beta, resid, pobj, snapped = _purify(Z, y, tau, w, g, beta, pobj)
    if not (snapped or from_simplex):
        # optimal face is not a single vertex; take the vertex HiGHS finds
        bv = _simplex(Z, y, tau, w, g)
        pv = check_objective(Z, y, bv, tau, w, g)
        if pv <= pobj + 1e-9 * (1.0 + abs(pobj)):
            beta, resid, pobj, _ = _purify(Z, y, tau, w, g, bv, pv)
    return QrSolution(beta=beta, residuals=resid, objective=pobj, iterations=iters,
                      duality_gap=pobj - dobj, tau=tau)


def _shift_for(shift, m, k):
    if shift is None:
        return None
    shift = np.asarray(shift, dtype=float)
    return shift if shift.ndim == 1 else shift[:, k]


def fit_process(design, y, tau_grid: TauGrid, weights=None, shift=None, *, warm_start: bool = True,
                threads: int = 1, rank_checked: bool = False) -> QrProcessFit:
    """Fit the quantile regression at every tau of the grid.

    ``shift`` may be a single ``m``-vector or an ``m x len(taus)`` matrix. With
    ``warm_start`` each tau starts from the previous solution and the fits run
    sequentially; otherwise they may run on ``threads`` workers.
    """
    Z = _values(design)
    if not rank_checked:
        try:
            check_rank(Z, _names(design))
        except RankDeficiencyError as exc:
            raise RankDeficiencyError(exc.args[0], exc.dependent, module="qrfit") from None
    taus = tau_grid.taus
    m = Z.shape[1]
    if shift is not None and np.ndim(shift) == 2 and np.shape(shift) != (m, len(taus)):
        raise ConfigError(f"shift matrix must be {m} x {len(taus)}", module="qrfit")

    def one(k, start):
        prob = QrProblem(Z, y, taus[k], weights, _shift_for(shift, m, k))
        try:
            return fit_qr(prob, start=start, rank_checked=True)
        except NumericalError as exc:
            exc.tau = taus[k]
            raise

    sols = []
    if warm_start:
        start = None
        for k in range(len(taus)):
            sol = one(k, start)
            sols.append(sol)
            start = sol.beta
    elif threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            sols = list(pool.map(lambda k: one(k, None), range(len(taus))))
    else:
        sols = [one(k, None) for k in range(len(taus))]
    betas = np.column_stack([s.beta for s in sols])
    return QrProcessFit(tau_grid, betas, tuple(sols))


def brute_force_qr(design, y, tau: float, weights=None, shift=None) -> QrSolution:
    """Exhaustive search over interpolating basic solutions (test oracle).

    An optimal solution of the QR linear program interpolates ``m`` observations,
    so enumerating all ``m``-subsets of rows finds the minimum. Only for small
    problems (``n <= 30``, ``m <= 4``).
    """
    Z = _values(design)
    y = np.asarray(y, dtype=float)
    n, m = Z.shape
    if n > 30 or m > 4:
        raise ConfigError("brute_force_qr is limited to n <= 30 and m <= 4", module="qrfit")
    combos = np.array(list(itertools.combinations(range(n), m)), dtype=np.intp)
    A = Z[combos]
    rhs = y[combos]
    det = np.linalg.det(A)
    norms = np.prod(np.linalg.norm(A, axis=2), axis=1)
    ok = np.abs(det) > 1e-12 * np.maximum(norms, 1e-300)
    if not np.any(ok):
        raise RankDeficiencyError("every m-subset of rows is singular", module="qrfit")
    cands = np.linalg.solve(A[ok], rhs[ok][..., None])[..., 0]
    R = y[None, :] - cands @ Z.T
    loss = R * (tau - (R < 0))
    if weights is not None:
        loss = loss * np.asarray(weights)[None, :]
    obj = loss.sum(axis=1)
    if shift is not None:
        obj = obj - cands @ np.asarray(shift, dtype=float)
    k = int(np.argmin(obj))
    beta = cands[k]
    resid = y - Z @ beta
    resid[combos[ok][k]] = 0.0
    return QrSolution(beta=beta, residuals=resid,
                      objective=check_objective(Z, y, beta, tau, weights, shift),
                      iterations=0, duality_gap=0.0, tau=tau)


def _zero_mask(residuals, y, zero_tol):
    scale = 1.0 + float(np.max(np.abs(y)))
    return np.abs(residuals) <= zero_tol * scale


def optimality_violation(problem: QrProblem, solution: QrSolution, zero_tol: float = 1e-9) -> float:
    """Scaled sup-norm of the best available subgradient of the objective.

    Returns ``||sum_i w_i Z_i psi_i + g||_inf / (sum_i w_i * max_i ||Z_i||_inf)``
    where ``psi_i = tau - 1{r_i < 0}`` for nonzero residuals and zero residuals
    take the value in ``[tau - 1, tau]`` that minimises the norm.
    """
    Z, y, w, g, tau = problem.Z, problem.y, problem.weights, problem.gradient_shift, problem.tau
    r = solution.residuals
    zero = _zero_mask(r, y, zero_tol)
    psi = tau - (r < 0)
    fixed = Z[~zero].T @ (w[~zero] * psi[~zero]) + g
    if np.any(zero):
        A = Z[zero].T * w[zero][None, :]
        res = optimize.lsq_linear(A, -fixed, bounds=(tau - 1.0, tau), method="bvls")
        vec = fixed + A @ res.x
    else:
        vec = fixed
    denom = w.sum() * float(np.max(np.abs(Z)))
    return float(np.max(np.abs(vec))) / denom


def quantile_counts(problem: QrProblem, solution: QrSolution, zero_tol: float = 1e-9):
    """Weighted mass of negative and non-positive residuals, and ``tau * sum(w)``."""
    r, w = solution.residuals, problem.weights
    zero = _zero_mask(r, problem.y, zero_tol)
    neg = (r < 0) & ~zero
    return float(w[neg].sum()), float(w[neg | zero].sum()), problem.tau * float(w.sum())
