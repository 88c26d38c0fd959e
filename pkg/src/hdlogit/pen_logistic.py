"""l1-penalised logistic regression and the post-selection logistic refit.

All fits act on the scale of the dataset they receive; pass a
standardised :class:`~hdlogit.data.Dataset` to get the normalisation the
penalty formulas assume. The treatment ``d`` is always coefficient 0 of
the stacked design ``[d, X]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import cd_lasso
from .data import Dataset
from .errors import NonConvergenceError, RankError, SeparationError
from .numeric import expit, expit_deriv, log1pexp, normal_quantile

SEPARATION_BOUND = 30.0


def _design(ds: Dataset, support=None) -> np.ndarray:
    if support is None:
        return np.asfortranarray(np.column_stack([ds.d, ds.X]))
    cols = np.asarray(sorted(support), dtype=int)
    return np.asfortranarray(np.column_stack([ds.d, ds.X[:, cols]]))


def _loss(y, eta) -> float:
    return float(np.mean(log1pexp(eta) - y * eta))


def neg_loglik(ds: Dataset, alpha: float, beta) -> float:
    """Average negative log-likelihood Lambda(alpha, beta)."""
    beta = np.asarray(beta, dtype=float).reshape(-1)
    eta = ds.d * alpha + (ds.X @ beta if ds.p else 0.0)
    return _loss(ds.y, eta)


def neg_loglik_grad(ds: Dataset, alpha: float, beta) -> np.ndarray:
    """Gradient of Lambda with respect to (alpha, beta)."""
    beta = np.asarray(beta, dtype=float).reshape(-1)
    eta = ds.d * alpha + (ds.X @ beta if ds.p else 0.0)
    r = expit(eta) - ds.y
    return np.concatenate([[np.mean(r * ds.d)], ds.X.T @ r / ds.n])


def penalty_lambda1(n: int, p: int, gamma_scale: float = 0.05) -> float:
    """Plug-in penalty for the l1-logistic step: 1.1/2 sqrt(n) Phi^-1(1 - g / max(n, p log n))."""
    if n < 2 or p < 1:
        raise ValueError("penalty_lambda1 needs n >= 2 and p >= 1")
    denom = max(n, p * math.log(n))
    return 0.55 * math.sqrt(n) * normal_quantile(1.0 - gamma_scale / denom)


def penalty_hoeffding(n: int, p: int, gamma: float, slack: float = 1.1) -> float:
    """Penalty from the Hoeffding bound on the score: lambda/n = c sqrt(2 log(2(p+1)/gamma) / n)."""
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma must lie in (0, 1)")
    return n * slack * math.sqrt(2.0 * math.log(2.0 * (p + 1) / gamma) / n)


@dataclass(frozen=True, eq=False)
class PenalizedLogisticFit:
    alpha_hat: float
    beta_hat: np.ndarray
    support: tuple[int, ...]
    lam: float
    objective: float
    kkt_violation: float
    penalize_treatment: bool = True
    cycles: int = 0
    history: tuple[float, ...] = field(default=(), repr=False)


def _penalty_weights(ds: Dataset, lam: float, penalize_treatment: bool) -> np.ndarray:
    pen = np.full(ds.p + 1, lam / ds.n)
    pen[1:][~ds.penalty_mask()] = 0.0
    if not penalize_treatment:
        pen[0] = 0.0
    return pen


def _kkt(grad, coef, pen) -> float:
    viol = np.where(
        pen == 0.0,
        np.abs(grad),
        np.where(coef == 0.0,
                 np.maximum(np.abs(grad) - pen, 0.0),
                 np.abs(grad + pen * np.sign(coef))),
    )
    return float(viol.max()) if viol.size else 0.0


def kkt_violation(ds: Dataset, alpha: float, beta, lam: float,
                  penalize_treatment: bool = True) -> float:
    """Largest violation of the subgradient optimality conditions at (alpha, beta)."""
    coef = np.concatenate([[alpha], np.asarray(beta, dtype=float)])
    pen = _penalty_weights(ds, lam, penalize_treatment)
    return _kkt(neg_loglik_grad(ds, alpha, beta), coef, pen)


def _polish(Z, y, b, pen, F, kkt, objective, max_iter=8):
    """Newton on the active set with signs held fixed.

    Solves grad_S + pen_S sign(b_S) = 0 to rounding level so the solution
    no longer depends on the coordinate-descent path. Kept only if signs
    survive and the KKT violation does not grow.
    """
    active = np.flatnonzero(b)
    if active.size == 0:
        return b, F, kkt
    n = len(y)
    ZA = Z[:, active]
    sgn = np.sign(b[active])
    bA = b[active].copy()
    for _ in range(max_iter):
        eta = ZA @ bA
        mu = expit(eta)
        g = ZA.T @ (mu - y) / n + pen[active] * sgn
        if np.max(np.abs(g)) < 1e-15:
            break
        H = (ZA.T * expit_deriv(eta)) @ ZA / n
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            return b, F, kkt
        bA = bA + step
    if not np.all(np.sign(bA) == sgn):
        return b, F, kkt
    bp = np.zeros_like(b)
    bp[active] = bA
    eta = Z @ bp
    kp = _kkt(Z.T @ (expit(eta) - y) / n, bp, pen)
    if kp > max(kkt, 1e-12):
        return b, F, kkt
    return bp, objective(bp, eta), kp


def fit_lasso_logistic(ds: Dataset, lam: float, penalize_treatment: bool = True,
                       tol: float = 1e-7, step_tol: float = 1e-9,
                       max_cycles: int = 10_000) -> PenalizedLogisticFit:
    """Minimise Lambda(alpha, beta) + (lam/n) ||(alpha, beta)||_1.

    Proximal Newton: each outer iteration solves the IRLS quadratic
    model by coordinate descent, then backtracks on the true objective
    so the objective never increases. Stops once the last step is below
    ``step_tol`` and the KKT violation is below ``tol``.
    """
    if lam < 0:
        raise ValueError("penalty level must be nonnegative")
    n = ds.n
    Z = _design(ds)
    y = ds.y
    pen = _penalty_weights(ds, lam, penalize_treatment)
    b = np.zeros(Z.shape[1])
    eta = np.zeros(n)

    def objective(coef, lin):
        return _loss(y, lin) + float(np.sum(pen * np.abs(coef)))

    F = objective(b, eta)
    history = [F]
    cycles = 0
    kkt = math.inf
    inner_tol = 1e-3
    while cycles < max_cycles:
        mu = expit(eta)
        w = np.maximum(mu * (1.0 - mu), 1e-12)
        grad = Z.T @ (mu - y) / n
        kkt = _kkt(grad, b, pen)
        h = (Z * Z).T @ w / n
        bn = b.copy()
        resw = y - mu
        used, _ = cd_lasso(Z, w, resw, bn, pen, h, inner_tol, max_cycles - cycles)
        cycles += max(int(used), 1)
        direction = bn - b
        decrease = float(grad @ direction + np.sum(pen * (np.abs(bn) - np.abs(b))))
        t = 1.0
        accepted = False
        while t > 1e-12:
            bt = b + t * direction
            etat = Z @ bt
            Ft = objective(bt, etat)
            if Ft <= F + 1e-4 * t * min(decrease, 0.0):
                accepted = True
                break
            t *= 0.5
        step = float(np.max(np.abs(t * direction))) if accepted else 0.0
        if accepted:
            b, eta, F = bt, etat, Ft
            history.append(F)
        if step < step_tol:
            mu = expit(eta)
            kkt = _kkt(Z.T @ (mu - y) / n, b, pen)
            if kkt < tol:
                break
            if inner_tol <= 1e-14:
                break
        inner_tol = max(min(inner_tol * 1e-2, 0.1 * max(step, kkt)), 1e-14)
    else:
        raise NonConvergenceError(
            f"penalised logistic fit did not converge in {max_cycles} cycles",
            last_iterate=b, kkt_violation=kkt)
    if kkt >= tol:
        raise NonConvergenceError(
            f"penalised logistic fit stalled with KKT violation {kkt:.3g}",
            last_iterate=b, kkt_violation=kkt)
    b, F, kkt = _polish(Z, y, b, pen, F, kkt, objective)
    beta = b[1:].copy()
    return PenalizedLogisticFit(
        alpha_hat=float(b[0]), beta_hat=beta,
        support=tuple(int(j) for j in np.flatnonzero(beta)),
        lam=float(lam), objective=F, kkt_violation=kkt,
        penalize_treatment=penalize_treatment, cycles=cycles, history=tuple(history))


@dataclass(frozen=True, eq=False)
class RefitLogisticFit:
    alpha_tilde: float
    beta_tilde: np.ndarray
    support: tuple[int, ...]
    gradient_norm: float
    converged: bool
    fisher_information: np.ndarray
    iterations: int = 0

    @property
    def inverse_fisher_11(self) -> float:
        return float(np.linalg.inv(self.fisher_information)[0, 0])


def fit_logistic_refit(ds: Dataset, support=(), tol: float = 1e-8,
                       max_iter: int = 100) -> RefitLogisticFit:
    """Unpenalised logistic MLE of y on (d, X[:, support]) by damped Newton."""
    support = tuple(sorted(int(j) for j in support))
    n = ds.n
    k = len(support)
    if k + 1 >= n:
        raise RankError(f"support of size {k} is too large for n = {n}")
    Z = _design(ds, support)
    y = ds.y
    b = np.zeros(k + 1)
    eta = np.zeros(n)
    F = _loss(y, eta)
    gnorm = math.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(eta)
        g = Z.T @ (mu - y) / n
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= tol:
            converged = True
            break
        w = expit_deriv(eta)
        H = (Z.T * w) @ Z / n
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            raise RankError("singular Fisher information in logistic refit") from None
        if not np.all(np.isfinite(step)):
            raise RankError("singular Fisher information in logistic refit")
        t = 1.0
        for _ in range(50):
            bt = b + t * step
            etat = Z @ bt
            Ft = _loss(y, etat)
            if Ft <= F:
                break
            t *= 0.5
        else:
            raise SeparationError("step halving failed 50 times in logistic refit")
        b, eta, F = bt, etat, Ft
        if np.max(np.abs(b)) > SEPARATION_BOUND:
            raise SeparationError(
                f"coefficient magnitude exceeded {SEPARATION_BOUND:g}: "
                "the data are (quasi-)separated on this support")
    w = expit_deriv(eta)
    fisher = (Z.T * w) @ Z / n
    eig = np.linalg.eigvalsh(fisher)
    if eig[0] <= 1e-12 * max(eig[-1], 1e-300):
        raise RankError("singular Fisher information in logistic refit")
    beta = np.zeros(ds.p)
    beta[list(support)] = b[1:]
    return RefitLogisticFit(alpha_tilde=float(b[0]), beta_tilde=beta, support=support,
                            gradient_norm=gnorm, converged=converged,
                            fisher_information=fisher, iterations=it)


@dataclass(frozen=True, eq=False)
class Step1Weights:
    """Per-observation weights from the Step-1 refit.

    ``sigma_hat`` holds the conditional variance G(1-G) at the refit
    index, so the instrument is ``v_hat / sqrt(sigma_hat)``. ``f_hat`` is
    the regression weight, sqrt(w_hat) for the logistic link, or 1 in
    H0 mode.
    """

    w_hat: np.ndarray
    sigma_hat: np.ndarray
    f_hat: np.ndarray
    index: np.ndarray
    h0_mode: bool = False


def step1_weights(ds: Dataset, refit: RefitLogisticFit, h0_mode: bool = False) -> Step1Weights:
    index = ds.d * refit.alpha_tilde + ds.X @ refit.beta_tilde
    w = expit_deriv(index)
    # logistic: G' = G(1 - G), so w_hat / sqrt(var) = sqrt(w_hat)
    f = np.ones(ds.n) if h0_mode else np.sqrt(w)
    return Step1Weights(w_hat=w, sigma_hat=w.copy(), f_hat=f, index=index, h0_mode=h0_mode)


@dataclass(frozen=True, eq=False)
class Step1Result:
    lasso: PenalizedLogisticFit
    refit: RefitLogisticFit
    weights: Step1Weights

    @property
    def support(self) -> tuple[int, ...]:
        return self.refit.support


def run_step1(ds: Dataset, lam: float, penalize_treatment: bool = True,
              h0_mode: bool = False) -> Step1Result:
    """l1-logistic selection, refit on the selected controls, then the Step-1 weights.

    A declared intercept is unpenalised, so it always survives selection.
    """
    lasso = fit_lasso_logistic(ds, lam, penalize_treatment=penalize_treatment)
    support = set(lasso.support)
    if ds.intercept is not None:
        support.add(ds.intercept)
    refit = fit_logistic_refit(ds, support)
    return Step1Result(lasso, refit, step1_weights(ds, refit, h0_mode=h0_mode))
