"""Step-3 estimators of the treatment coefficient.

Every public fitting function takes the *standardised* dataset and the
Step-1 / Step-2 outputs computed on it, and reports ``alpha_check`` and
the variances on the raw scale of ``d`` (divide by ``ds.d_scale`` once
for the coefficient, twice for variances). The criterion profile is
likewise expressed on the raw scale.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import EstimationError, WeakInstrumentError
from .numeric import expit, expit_deriv
from .pen_logistic import (
    Step1Result,
    fit_logistic_refit,
    penalty_hoeffding,
    penalty_lambda1,
    run_step1,
)
from .weighted_lasso import WeightedLassoFit, penalty_lambda2, run_step2

log = logging.getLogger(__name__)

WEAK_JACOBIAN = 1e-10
MIN_DENOMINATOR = 1e-14
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

METHODS = ("naive", "optimal_iv", "double_selection", "one_step", "suboptimal_iv")


@dataclass(frozen=True)
class PipelineConfig:
    """Tuning constants shared by every estimator.

    ``search_constant`` is the C in the search interval
    ``|alpha - alpha_tilde| <= C / log n`` (standardised scale).
    """

    penalty_rule: str = "caption"
    gamma: float = 0.05
    penalize_treatment: bool = True
    search_constant: float = 10.0
    h0_mode: bool = False
    grid_points: int = 401

    def __post_init__(self):
        if self.penalty_rule not in ("caption", "hoeffding"):
            raise ValueError(f"unknown penalty rule {self.penalty_rule!r}")
        if self.search_constant <= 0:
            raise ValueError("search constant must be positive")
        if self.grid_points < 3:
            raise ValueError("need at least 3 grid points")

    def lambda1(self, n: int, p: int) -> float:
        p = max(p, 1)  # with no controls the treatment is the only penalised coefficient
        if self.penalty_rule == "hoeffding":
            return penalty_hoeffding(n, p, self.gamma)
        return penalty_lambda1(n, p, self.gamma)

    def lambda2(self, n: int, p: int) -> float:
        return penalty_lambda2(n, max(p, 1), self.gamma)


@dataclass(frozen=True, eq=False)
class InstrumentSet:
    z_hat: np.ndarray
    w_hat: np.ndarray
    kind: str  # optimal | suboptimal | implicit_double_selection


@dataclass(frozen=True, eq=False)
class InferenceResult:
    alpha_check: float
    sigma1_sq: float
    sigma2_sq: float
    sigma_used: float
    method: str
    n_used: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def std_err(self) -> float:
        return math.sqrt(self.sigma_used / self.n_used)


@dataclass(frozen=True, eq=False)
class CriterionProfile:
    """L_n over the search interval, with the data needed to re-evaluate it anywhere."""

    search_interval: tuple[float, float]
    alphas: np.ndarray
    values: np.ndarray
    minimizer: float
    y: np.ndarray = field(repr=False)
    d: np.ndarray = field(repr=False)
    offset: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def evaluations(self):
        return list(zip(self.alphas.tolist(), self.values.tolist()))

    def contains(self, alpha: float) -> bool:
        lo, hi = self.search_interval
        return lo <= alpha <= hi

    def criterion(self, alpha: float) -> float:
        return _ratio(self.y, self.d * alpha + self.offset, self.z)

    def score(self, alpha: float) -> float:
        return float(np.mean((self.y - expit(self.d * alpha + self.offset)) * self.z))


def _ratio(y, eta, z) -> float:
    rz = (y - expit(eta)) * z
    num = rz.mean() ** 2
    den = float(np.mean(rz * rz))
    if den < MIN_DENOMINATOR:
        raise WeakInstrumentError(f"degenerate instrument: criterion denominator {den:.3g}")
    return float(num / den)


def criterion_Ln(ds: Dataset, beta_tilde, z_hat, alpha: float) -> float:
    """|E_n[(y - G(d a + x'b)) z]|^2 / E_n[(y - G(d a + x'b))^2 z^2] on ``ds``'s own scale."""
    offset = ds.X @ np.asarray(beta_tilde, dtype=float) if ds.p else np.zeros(ds.n)
    return _ratio(ds.y, ds.d * alpha + offset, np.asarray(z_hat, dtype=float))


def _criterion_grid(y, d, offset, z, alphas):
    eta = alphas[:, None] * d[None, :] + offset[None, :]
    rz = (y[None, :] - expit(eta)) * z[None, :]
    score = rz.mean(axis=1)
    den = np.mean(rz * rz, axis=1)
    if np.any(den < MIN_DENOMINATOR):
        raise WeakInstrumentError("degenerate instrument: criterion denominator vanishes")
    return score**2 / den, score


def _golden(fun, lo, hi, tol=1e-10):
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    e = a + _GOLDEN * (b - a)
    fc, fe = fun(c), fun(e)
    while b - a > tol:
        if fc <= fe:
            b, e, fe = e, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, e, fe
            e = a + _GOLDEN * (b - a)
            fe = fun(e)
    return 0.5 * (a + b)


def _bisect_root(fun, lo, hi, flo, tol=1e-12):
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _raw_alpha(ds: Dataset, a: float) -> float:
    return float(a) / ds.d_scale


def _fit_iv(ds: Dataset, step1: Step1Result, z: np.ndarray, C: float, grid_points: int):
    """Minimise L_n over the search interval; returns (alpha, profile, diagnostics)."""
    n = ds.n
    offset = ds.X @ step1.refit.beta_tilde
    center = step1.refit.alpha_tilde
    half = C / math.log(n)
    lo, hi = center - half, center + half
    grid = np.linspace(lo, hi, grid_points)
    values, score = _criterion_grid(ds.y, ds.d, offset, z, grid)
    k = int(np.argmin(values))

    def crit(a):
        return _ratio(ds.y, ds.d * a + offset, z)

    a_lo, a_hi = grid[max(k - 1, 0)], grid[min(k + 1, grid_points - 1)]
    alpha = _golden(crit, a_lo, a_hi)
    if crit(grid[k]) < crit(alpha):
        alpha = float(grid[k])
    spacing = grid[1] - grid[0]
    diag = {"grid_spacing": spacing / ds.d_scale}
    boundary = alpha - lo < spacing or hi - alpha < spacing
    if boundary:
        diag["boundary_warning"] = True
        log.debug("criterion minimiser at the edge of the search interval")

    # cross-check: sign change of the score on the grid
    flips = np.flatnonzero(np.sign(score[:-1]) != np.sign(score[1:]))
    if flips.size:
        i = int(flips[np.argmin(np.abs(grid[flips] - alpha))])

        def sc(a):
            return float(np.mean((ds.y - expit(ds.d * a + offset)) * z))

        root = _bisect_root(sc, grid[i], grid[i + 1], score[i])
        diag["score_root"] = root / ds.d_scale
        diag["root_gap"] = abs(root - alpha) / ds.d_scale
        # the root zeroes L_n, so it can only sharpen the golden-section point
        if a_lo <= root <= a_hi and crit(root) <= crit(alpha):
            alpha = float(root)
    s = ds.d_scale
    profile = CriterionProfile(
        search_interval=(lo / s, hi / s), alphas=grid / s, values=values,
        minimizer=alpha / s, y=ds.y, d=ds.d * s, offset=offset, z=z)
    return alpha, profile, diag


def _sandwich(ds: Dataset, eta, w, z):
    jac = float(np.mean(w * ds.d * z))
    if abs(jac) < WEAK_JACOBIAN:
        raise WeakInstrumentError(f"weak instrument: |E_n[w d z]| = {abs(jac):.3g}")
    resid = ds.y - expit(eta)
    return float(np.mean(resid**2 * z**2)) / jac**2, jac


def fit_iv(ds: Dataset, step1: Step1Result, instrument: InstrumentSet,
           search_constant: float = 10.0, grid_points: int = 401, v_hat=None,
           method: str = "optimal_iv"):
    """Instrumental logistic regression with a given instrument.

    ``sigma2_sq`` is ``1 / E_n[v^2]`` when the residuals ``v_hat`` of the
    optimal instrument are supplied, otherwise the model-based
    ``E_n[w z^2] / E_n[w d z]^2``.
    """
    z = np.asarray(instrument.z_hat, dtype=float)
    w = step1.weights.w_hat
    jac = float(np.mean(w * ds.d * z))
    if abs(jac) < WEAK_JACOBIAN:
        raise WeakInstrumentError(f"weak instrument: |E_n[w d z]| = {abs(jac):.3g}")
    alpha, profile, diag = _fit_iv(ds, step1, z, search_constant, grid_points)
    eta = ds.d * alpha + profile.offset
    sigma1, _ = _sandwich(ds, eta, w, z)
    if v_hat is not None:
        sigma2 = 1.0 / float(np.mean(np.asarray(v_hat) ** 2))
    else:
        sigma2 = float(np.mean(w * z**2)) / jac**2
    s2 = ds.d_scale**2
    diag.update(jacobian=jac, d_scale=ds.d_scale, instrument=instrument.kind,
                support_step1=len(step1.support))
    result = InferenceResult(
        alpha_check=_raw_alpha(ds, alpha), sigma1_sq=sigma1 / s2, sigma2_sq=sigma2 / s2,
        sigma_used=max(sigma1, sigma2) / s2, method=method, n_used=ds.n, diagnostics=diag)
    return result, profile


def fit_optimal_iv(ds: Dataset, step1: Step1Result, step2: WeightedLassoFit,
                   search_constant: float = 10.0, grid_points: int = 401):
    """Optimal-instrument estimator: returns ``(InferenceResult, CriterionProfile)``."""
    inst = InstrumentSet(z_hat=step2.z_hat, w_hat=step1.weights.w_hat, kind="optimal")
    result, profile = fit_iv(ds, step1, inst, search_constant, grid_points,
                             v_hat=step2.v_hat, method="optimal_iv")
    result.diagnostics["support_step2"] = len(step2.support)
    return result, profile


def fit_double_selection(ds: Dataset, step1: Step1Result, step2: WeightedLassoFit) -> InferenceResult:
    """Logistic refit of y on d and the union of the Step-1 and Step-2 selections."""
    union = set(step1.lasso.support) | set(step2.support)
    if ds.intercept is not None:
        union.add(ds.intercept)
    refit = fit_logistic_refit(ds, union)
    eta = ds.d * refit.alpha_tilde + ds.X @ refit.beta_tilde
    w = expit_deriv(eta)
    degenerate = w < 1e-12
    w = np.where(degenerate, 0.0, w)
    diag = {"support_step1": len(step1.support), "support_step2": len(step2.support),
            "support_union": len(refit.support), "foc_norm": refit.gradient_norm,
            "d_scale": ds.d_scale}
    if degenerate.mean() > 0.10:
        diag["degenerate_weights_warning"] = float(degenerate.mean())
    sigma1, jac = _sandwich(ds, eta, w, step2.z_hat)
    sigma2 = refit.inverse_fisher_11
    s2 = ds.d_scale**2
    diag["jacobian"] = jac
    return InferenceResult(
        alpha_check=_raw_alpha(ds, refit.alpha_tilde), sigma1_sq=sigma1 / s2,
        sigma2_sq=sigma2 / s2, sigma_used=max(sigma1, sigma2) / s2,
        method="double_selection", n_used=ds.n, diagnostics=diag)


def fit_naive_post_selection(ds: Dataset, step1: Step1Result | None = None,
                             config: PipelineConfig | None = None) -> InferenceResult:
    """Step 1 only: the refit coefficient with its inverse-Fisher standard error."""
    if step1 is None:
        config = config or PipelineConfig()
        ds = ds.standardized()
        step1 = run_step1(ds, config.lambda1(ds.n, ds.p), config.penalize_treatment)
    sigma = step1.refit.inverse_fisher_11 / ds.d_scale**2
    return InferenceResult(
        alpha_check=_raw_alpha(ds, step1.refit.alpha_tilde), sigma1_sq=sigma, sigma2_sq=sigma,
        sigma_used=sigma, method="naive", n_used=ds.n,
        diagnostics={"support_step1": len(step1.support), "d_scale": ds.d_scale})


def one_step_estimator(ds: Dataset, step1: Step1Result, instrument: InstrumentSet,
                       jacobian: str = "step1") -> float:
    """alpha_hat + J^-1 E_n[(y - G(d alpha_hat + x'beta_hat)) z] from the penalised fit.

    ``jacobian="step1"`` uses J = E_n[w d z] with the Step-1 weights of
    the instrument; ``"start"`` evaluates the weights at the penalised
    index instead, which makes the update an exact Newton step.
    """
    if jacobian not in ("step1", "start"):
        raise ValueError(f"unknown jacobian {jacobian!r}")
    z = np.asarray(instrument.z_hat, dtype=float)
    a = step1.lasso.alpha_hat
    eta = ds.d * a + ds.X @ step1.lasso.beta_hat
    w = np.asarray(instrument.w_hat, dtype=float) if jacobian == "step1" else expit_deriv(eta)
    jac = float(np.mean(w * ds.d * z))
    if abs(jac) < WEAK_JACOBIAN:
        raise WeakInstrumentError(f"weak instrument: |E_n[w d z]| = {abs(jac):.3g}")
    correction = float(np.mean((ds.y - expit(eta)) * z)) / jac
    return _raw_alpha(ds, a + correction)


def suboptimal_instrument(ds: Dataset, w_hat, lambda2: float | None = None) -> InstrumentSet:
    """(d - x'theta_d) / w from an unweighted Lasso/Post-Lasso of d on x."""
    ones = np.ones(ds.n)
    fit = run_step2(ds, ones, sigma_hat=ones, mode="post_lasso", lambda2=lambda2)
    w = np.asarray(w_hat, dtype=float)
    return InstrumentSet(z_hat=fit.v_hat / w, w_hat=w, kind="suboptimal")


def lasso_only_view(ds: Dataset, step2: WeightedLassoFit, f_hat, sigma_hat) -> WeightedLassoFit:
    """The Lasso-only Step-2 fit implied by a Post-Lasso run (same final Lasso)."""
    v = np.asarray(f_hat) * (ds.d - ds.X @ step2.theta_hat)
    return WeightedLassoFit(
        theta_hat=step2.theta_hat, theta_tilde=step2.theta_hat.copy(), support=step2.support,
        lambda2=step2.lambda2, v_hat=v, z_hat=v / np.sqrt(sigma_hat), loadings=step2.loadings,
        kkt_violation=step2.kkt_violation, mode="lasso_only",
        initial_support=step2.initial_support)


@dataclass(eq=False)
class Estimates:
    """Outputs of :func:`estimate` keyed by method name."""

    dataset: Dataset
    step1: Step1Result | None = None
    step2: WeightedLassoFit | None = None
    results: dict = field(default_factory=dict)
    profiles: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)


def estimate(dataset: Dataset, methods=("naive", "optimal_iv", "double_selection"),
             config: PipelineConfig | None = None) -> Estimates:
    """Run the shared Steps 1-2 once and every requested Step-3 estimator.

    Per-method :class:`EstimationError` failures are collected in
    ``failures`` rather than raised.
    """
    config = config or PipelineConfig()
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ValueError(f"unknown methods: {sorted(unknown)}")
    ds = dataset.standardized()
    out = Estimates(dataset=ds)
    try:
        step1 = run_step1(ds, config.lambda1(ds.n, ds.p), config.penalize_treatment,
                          h0_mode=config.h0_mode)
    except EstimationError as exc:
        out.failures = {m: exc for m in methods}
        return out
    out.step1 = step1
    wts = step1.weights

    if "naive" in methods:
        out.results["naive"] = fit_naive_post_selection(ds, step1)

    needs_step2 = {"optimal_iv", "double_selection", "one_step"} & set(methods)
    step2 = None
    if needs_step2:
        try:
            step2 = run_step2(ds, wts.f_hat, wts.sigma_hat, mode="post_lasso",
                              lambda2=config.lambda2(ds.n, ds.p))
            out.step2 = step2
        except EstimationError as exc:
            for m in needs_step2:
                out.failures[m] = exc

    if step2 is not None:
        if "optimal_iv" in methods:
            try:
                res, prof = fit_optimal_iv(ds, step1, step2, config.search_constant,
                                           config.grid_points)
                out.results["optimal_iv"], out.profiles["optimal_iv"] = res, prof
            except EstimationError as exc:
                out.failures["optimal_iv"] = exc
        if "double_selection" in methods:
            try:
                view = lasso_only_view(ds, step2, wts.f_hat, wts.sigma_hat)
                out.results["double_selection"] = fit_double_selection(ds, step1, view)
            except EstimationError as exc:
                out.failures["double_selection"] = exc
        if "one_step" in methods:
            try:
                inst = InstrumentSet(z_hat=step2.z_hat, w_hat=wts.w_hat, kind="optimal")
                a = one_step_estimator(ds, step1, inst)
                base = out.results.get("optimal_iv")
                s1 = base.sigma1_sq if base else 1.0 / float(np.mean(step2.v_hat**2)) / ds.d_scale**2
                s2 = 1.0 / float(np.mean(step2.v_hat**2)) / ds.d_scale**2
                out.results["one_step"] = InferenceResult(
                    alpha_check=a, sigma1_sq=s1, sigma2_sq=s2, sigma_used=max(s1, s2),
                    method="one_step", n_used=ds.n, diagnostics={"d_scale": ds.d_scale})
            except EstimationError as exc:
                out.failures["one_step"] = exc

    if "suboptimal_iv" in methods:
        try:
            inst = suboptimal_instrument(ds, wts.w_hat, config.lambda2(ds.n, ds.p))
            res, prof = fit_iv(ds, step1, inst, config.search_constant, config.grid_points,
                               method="suboptimal_iv")
            out.results["suboptimal_iv"], out.profiles["suboptimal_iv"] = res, prof
        except EstimationError as exc:
            out.failures["suboptimal_iv"] = exc
    return out
