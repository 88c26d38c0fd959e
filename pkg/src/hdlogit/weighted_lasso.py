"""Weighted Lasso / Post-Lasso of f*d on f*X with estimated penalty loadings.

Objective convention: ``E_n[f^2 (d - x'theta)^2] + (lam/n) sum_j G_j |theta_j|``
with no 1/2 in front of the squared loss, so the KKT threshold for
coordinate j is ``lam * G_j / (2n)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr, solve_triangular

from ._kernels import cd_lasso
from .data import Dataset
from .errors import DegenerateLoadingError, NonConvergenceError
from .numeric import normal_quantile

log = logging.getLogger(__name__)

MIN_LOADING = 1e-12
COLLINEAR_TOL = 1e-10


def penalty_lambda2(n: int, p: int, gamma_scale: float = 0.05) -> float:
    """1.1 * 2 sqrt(n) Phi^-1(1 - g / max(n, p log n)); four times lambda1."""
    if n < 2:
        raise ValueError("penalty_lambda2 needs n >= 2")
    denom = max(n, p * math.log(n))
    return 2.2 * math.sqrt(n) * normal_quantile(1.0 - gamma_scale / denom)


@dataclass(frozen=True, eq=False)
class LoadingsVector:
    gamma: np.ndarray
    stage: str  # "initial" | "refined"


def compute_loadings(f_hat, ds: Dataset, residuals=None) -> LoadingsVector:
    """Penalty loadings sqrt(E_n[f^2 x_j^2 e^2]).

    With ``residuals=None`` the initial stage uses the centred weighted
    response ``e = f d - mean(f d)``; otherwise ``e`` is the supplied
    residual vector ``v_hat`` (refined stage).
    """
    f = np.asarray(f_hat, dtype=float)
    if residuals is None:
        fd = f * ds.d
        e = fd - fd.mean()
        stage = "initial"
    else:
        e = np.asarray(residuals, dtype=float)
        stage = "refined"
    gamma = np.sqrt((ds.X**2).T @ (f**2 * e**2) / ds.n)
    bad = np.flatnonzero(~(gamma >= MIN_LOADING))
    if bad.size:
        j = int(bad[0])
        name = ds.names[j] if ds.names is not None else f"#{j}"
        raise DegenerateLoadingError(
            f"{stage} penalty loading for column {name} is {gamma[j]:.3g}", column=j)
    return LoadingsVector(gamma=gamma, stage=stage)


@dataclass(frozen=True, eq=False)
class WeightedLassoFit:
    theta_hat: np.ndarray
    theta_tilde: np.ndarray
    support: tuple[int, ...]
    lambda2: float
    v_hat: np.ndarray
    z_hat: np.ndarray
    loadings: LoadingsVector | None = None
    kkt_violation: float = 0.0
    mode: str = "lasso"
    dropped: tuple[int, ...] = ()
    initial_support: tuple[int, ...] = field(default=(), repr=False)


def _penalties(ds: Dataset, lambda2: float, gamma) -> np.ndarray:
    pen = lambda2 * np.asarray(gamma, dtype=float) / (2.0 * ds.n)
    pen[~ds.penalty_mask()] = 0.0
    return pen


def weighted_lasso_kkt(ds: Dataset, f_hat, theta, lambda2: float, gamma) -> float:
    """Largest KKT violation of the weighted lasso at ``theta``."""
    f2 = np.asarray(f_hat, dtype=float) ** 2
    theta = np.asarray(theta, dtype=float)
    score = ds.X.T @ (f2 * (ds.d - ds.X @ theta)) / ds.n
    pen = _penalties(ds, lambda2, gamma)
    viol = np.where(
        pen == 0.0, np.abs(score),
        np.where(theta == 0.0, np.maximum(np.abs(score) - pen, 0.0),
                 np.abs(score - pen * np.sign(theta))))
    return float(viol.max()) if viol.size else 0.0


def _polish(ds: Dataset, f, theta, pen, kkt, lambda2, gamma):
    """Solve the active-set KKT equations exactly, keeping signs fixed."""
    active = np.flatnonzero(theta)
    if active.size == 0:
        return theta, kkt
    w = f**2
    XA = ds.X[:, active]
    G = (XA.T * w) @ XA / ds.n
    rhs = XA.T @ (w * ds.d) / ds.n - pen[active] * np.sign(theta[active])
    try:
        tA = np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        return theta, kkt
    if not np.all(np.sign(tA) == np.sign(theta[active])):
        return theta, kkt
    tp = np.zeros_like(theta)
    tp[active] = tA
    kp = weighted_lasso_kkt(ds, f, tp, lambda2, gamma)
    if kp > max(kkt, 1e-12):
        return theta, kkt
    return tp, kp


def fit_weighted_lasso(ds: Dataset, f_hat, lambda2: float, loadings, sigma_hat=None,
                       tol: float = 1e-9, max_cycles: int = 10_000) -> WeightedLassoFit:
    """Lasso stage only: ``theta_tilde`` is set to ``theta_hat``."""
    gamma = loadings.gamma if isinstance(loadings, LoadingsVector) else np.asarray(loadings, float)
    if np.any(gamma <= 0):
        raise DegenerateLoadingError("penalty loadings must be positive")
    f = np.asarray(f_hat, dtype=float)
    w = f**2
    X = ds.X
    pen = _penalties(ds, lambda2, gamma)
    h = (X * X).T @ w / ds.n
    theta = np.zeros(ds.p)
    resw = w * ds.d
    inner = 1e-10
    cycles = 0
    kkt = math.inf
    while cycles < max_cycles:
        used, _ = cd_lasso(X, w, resw, theta, pen, h, inner, max_cycles - cycles)
        cycles += max(int(used), 1)
        kkt = weighted_lasso_kkt(ds, f, theta, lambda2, gamma)
        if kkt <= tol:
            break
        if inner <= 1e-16:
            break
        inner *= 1e-2
        # refresh the running residual to shed accumulated rounding
        resw = w * (ds.d - X @ theta)
    if kkt > tol:
        raise NonConvergenceError(f"weighted lasso did not reach KKT tolerance ({kkt:.3g})",
                                  last_iterate=theta, kkt_violation=kkt)
    theta, kkt = _polish(ds, f, theta, pen, kkt, lambda2, gamma)
    support = tuple(int(j) for j in np.flatnonzero(theta))
    v = f * (ds.d - X @ theta)
    sig = w if sigma_hat is None else np.asarray(sigma_hat, dtype=float)
    return WeightedLassoFit(theta_hat=theta, theta_tilde=theta.copy(), support=support,
                            lambda2=float(lambda2), v_hat=v, z_hat=v / np.sqrt(sig),
                            loadings=loadings if isinstance(loadings, LoadingsVector) else None,
                            kkt_violation=kkt, mode="lasso")


def post_lasso(ds: Dataset, f_hat, support) -> tuple[np.ndarray, tuple[int, ...]]:
    """Weighted least squares of d on X[:, support] with pivoted collinearity screening.

    Columns whose pivoted-QR diagonal falls below ``sqrt(COLLINEAR_TOL)``
    times the leading one (that is, Gram-matrix tolerance ``COLLINEAR_TOL``)
    are dropped; their indices are returned.
    """
    theta = np.zeros(ds.p)
    cols = np.asarray(sorted(support), dtype=int)
    if cols.size == 0:
        return theta, ()
    f = np.asarray(f_hat, dtype=float)
    A = f[:, None] * ds.X[:, cols]
    b = f * ds.d
    Q, R, piv = qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > math.sqrt(COLLINEAR_TOL) * diag[0])) if diag[0] > 0 else 0
    coef = solve_triangular(R[:rank, :rank], Q[:, :rank].T @ b)
    theta[cols[piv[:rank]]] = coef
    dropped = tuple(sorted(int(j) for j in cols[piv[rank:]]))
    if dropped:
        log.warning("post-lasso dropped collinear columns %s", list(dropped))
    return theta, dropped


def run_step2(ds: Dataset, f_hat, sigma_hat=None, mode: str = "post_lasso",
              lambda2: float | None = None) -> WeightedLassoFit:
    """Two-stage loadings algorithm followed by the final (Post-)Lasso.

    initial loadings -> Lasso -> Post-Lasso -> refined loadings from its
    residuals -> final Lasso -> refit on the final support when
    ``mode == "post_lasso"``. In ``"lasso_only"`` mode the Lasso
    coefficients are kept as they are.
    """
    if mode not in ("post_lasso", "lasso_only"):
        raise ValueError(f"unknown step-2 mode {mode!r}")
    f = np.asarray(f_hat, dtype=float)
    sig = f**2 if sigma_hat is None else np.asarray(sigma_hat, dtype=float)
    if lambda2 is None:
        lambda2 = penalty_lambda2(ds.n, ds.p)

    gamma0 = compute_loadings(f, ds)
    first = fit_weighted_lasso(ds, f, lambda2, gamma0)
    theta0, _ = post_lasso(ds, f, first.support)
    gamma1 = compute_loadings(f, ds, residuals=f * (ds.d - ds.X @ theta0))
    final = fit_weighted_lasso(ds, f, lambda2, gamma1)

    dropped: tuple[int, ...] = ()
    if mode == "post_lasso":
        theta_tilde, dropped = post_lasso(ds, f, final.support)
    else:
        theta_tilde = final.theta_hat.copy()
    v = f * (ds.d - ds.X @ theta_tilde)
    return WeightedLassoFit(
        theta_hat=final.theta_hat, theta_tilde=theta_tilde, support=final.support,
        lambda2=float(lambda2), v_hat=v, z_hat=v / np.sqrt(sig), loadings=gamma1,
        kkt_violation=final.kkt_violation, mode=mode, dropped=dropped,
        initial_support=first.support)
