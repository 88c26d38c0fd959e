"""Simulation designs and the Monte Carlo harness.

Design: ``x = (1, z')'`` with ``z ~ N(0, Theta)``, ``Theta_ij = rho^|i-j|``,

    d = c_d x'nu_d + v,            v ~ N(0, 1)
    P(y = 1 | d, x) = G(alpha0 d + c_y x'nu_y)

The coefficient patterns start at the first random covariate; the
intercept carries coefficient zero. ``c_d`` and ``c_y`` are calibrated so
that Var(signal) / (Var(signal) + 1) hits the requested R^2 in each
equation.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import cholesky, toeplitz

from .data import Dataset
from .errors import EstimationError
from .estimators import PipelineConfig, estimate
from .inference import build_region
from .numeric import RngStream, expit

log = logging.getLogger(__name__)

DESIGNS = ("sparse_decline", "approx_quadratic")
FAILURE_LIMIT = 0.20

# row label -> (estimator, confidence-region kind)
METHOD_ROWS = {
    "naive": ("naive", "naive"),
    "optimal-iv": ("optimal_iv", "CR_D"),
    "optimal-iv-cri": ("optimal_iv", "CR_I"),
    "double-selection": ("double_selection", "CR_DS"),
    "one-step": ("one_step", "CR_D"),
    "suboptimal-iv": ("suboptimal_iv", "CR_D"),
}
DEFAULT_METHODS = ("naive", "optimal-iv", "double-selection")


def coefficient_pattern(design: str, p: int) -> tuple[np.ndarray, np.ndarray]:
    """(nu_y, nu_d) over the p - 1 random covariates."""
    k = p - 1
    j = np.arange(1, k + 1, dtype=float)
    if design == "sparse_decline":
        nu_y = np.zeros(k)
        nu_d = np.zeros(k)
        head = 1.0 / np.arange(1, 6)
        nu_y[:min(5, k)] = head[:min(5, k)]
        if k > 10:
            nu_y[10:min(15, k)] = head[:min(5, k - 10)]
        nu_d[:min(10, k)] = 1.0 / j[:min(10, k)]
        return nu_y, nu_d
    if design == "approx_quadratic":
        return 1.0 / j**2, 1.0 / j**2
    raise ValueError(f"unknown design {design!r}; expected one of {DESIGNS}")


@lru_cache(maxsize=16)
def _toeplitz(k: int, rho: float) -> np.ndarray:
    return toeplitz(rho ** np.arange(k))


@lru_cache(maxsize=16)
def _cholesky(k: int, rho: float) -> np.ndarray:
    try:
        return cholesky(_toeplitz(k, rho), lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"Toeplitz covariance with rho={rho} is not "
                                    "numerically positive definite") from exc


def signal_variance(nu: np.ndarray, rho: float) -> float:
    """nu' Theta nu for the Toeplitz covariance of the random covariates."""
    return float(nu @ _toeplitz(len(nu), rho) @ nu)


def calibrate_signal(design: str, rho: float, r2_target: float, equation: str,
                     p: int = 250) -> float:
    """Scale c with c^2 q / (c^2 q + 1) = r2_target, q = nu' Theta nu."""
    if not (0.0 <= r2_target < 1.0):
        raise ValueError("R^2 target must lie in [0, 1)")
    nu_y, nu_d = coefficient_pattern(design, p)
    nu = {"y": nu_y, "d": nu_d}[equation]
    if r2_target == 0.0:
        return 0.0
    return math.sqrt(r2_target / ((1.0 - r2_target) * signal_variance(nu, rho)))


@dataclass(frozen=True, eq=False)
class DgpSpec:
    n: int = 200
    p: int = 250
    alpha0: float = 0.2
    rho: float = 0.5
    design: str = "sparse_decline"
    r2_d: float = 0.75
    r2_y: float = 0.75
    c_d: float = field(init=False)
    c_y: float = field(init=False)
    nu_y: np.ndarray = field(init=False, repr=False)
    nu_d: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 2 or self.p < 2:
            raise ValueError("need n >= 2 and p >= 2")
        if not (-1.0 < self.rho < 1.0):
            raise ValueError("rho must lie in (-1, 1)")
        nu_y, nu_d = coefficient_pattern(self.design, self.p)
        object.__setattr__(self, "nu_y", nu_y)
        object.__setattr__(self, "nu_d", nu_d)
        object.__setattr__(self, "c_d", calibrate_signal(self.design, self.rho, self.r2_d, "d", self.p))
        object.__setattr__(self, "c_y", calibrate_signal(self.design, self.rho, self.r2_y, "y", self.p))

    def params(self) -> dict:
        return {"design": self.design, "n": self.n, "p": self.p, "alpha0": self.alpha0,
                "rho": self.rho, "r2d": self.r2_d, "r2y": self.r2_y,
                "c_d": self.c_d, "c_y": self.c_y}


@dataclass(frozen=True, eq=False)
class Truth:
    index: np.ndarray
    prob: np.ndarray
    nu_y: np.ndarray
    nu_d: np.ndarray
    c_y: float
    c_d: float


def draw_dataset(spec: DgpSpec, stream: RngStream) -> tuple[Dataset, Truth]:
    rng = stream.generator()
    k = spec.p - 1
    L = _cholesky(k, spec.rho)
    z = rng.standard_normal((spec.n, k)) @ L.T
    v = rng.standard_normal(spec.n)
    u = rng.random(spec.n)
    d = spec.c_d * (z @ spec.nu_d) + v
    index = spec.alpha0 * d + spec.c_y * (z @ spec.nu_y)
    prob = expit(index)
    y = (u < prob).astype(float)
    X = np.column_stack([np.ones(spec.n), z])
    ds = Dataset(y=y, d=d, X=X, intercept=0)
    return ds, Truth(index, prob, spec.nu_y, spec.nu_d, spec.c_y, spec.c_d)


@dataclass
class ReplicationRecord:
    rep: int
    estimates: dict
    rejections: dict
    n_ln_alpha0: float = math.nan
    failures: dict = field(default_factory=dict)


def run_replication(spec: DgpSpec, rep: int, seed: int, methods=DEFAULT_METHODS,
                    xi: float = 0.05, config: PipelineConfig | None = None) -> ReplicationRecord:
    """Draw one dataset from ``RngStream(seed, rep)`` and run every requested estimator."""
    ds, _ = draw_dataset(spec, RngStream(seed, rep))
    needed = tuple(dict.fromkeys(METHOD_ROWS[m][0] for m in methods))
    est = estimate(ds, methods=needed, config=config)
    record = ReplicationRecord(rep=rep, estimates={}, rejections={},
                               failures={k: type(v).__name__ for k, v in est.failures.items()})
    for name in needed:
        res = est.results.get(name)
        record.estimates[name] = res.alpha_check if res is not None else math.nan
    for label in methods:
        name, kind = METHOD_ROWS[label]
        res = est.results.get(name)
        if res is None:
            record.rejections[label] = None
            continue
        try:
            region = build_region(res, est.profiles.get(name), kind, xi)
            record.rejections[label] = not region.covers(spec.alpha0)
        except EstimationError as exc:
            record.rejections[label] = None
            record.failures[label] = type(exc).__name__
    prof = est.profiles.get("optimal_iv")
    if prof is not None:
        try:
            record.n_ln_alpha0 = prof.n * prof.criterion(spec.alpha0)
        except EstimationError:
            pass
    return record


def _run_chunk(args):
    spec, reps, seed, methods, xi, config = args
    return [run_replication(spec, r, seed, methods, xi, config) for r in reps]


def default_parallelism() -> int:
    cap = os.environ.get("HDLOGIT_THREADS")
    cpus = os.cpu_count() or 1
    if cap:
        try:
            return max(1, min(int(cap), cpus))
        except ValueError:
            log.warning("ignoring non-integer HDLOGIT_THREADS=%r", cap)
    return cpus


def run_replications(spec: DgpSpec, reps: int, seed: int = 0, methods=DEFAULT_METHODS,
                     xi: float = 0.05, config: PipelineConfig | None = None,
                     parallelism: int | None = None) -> list[ReplicationRecord]:
    """Replications ``0 .. reps-1``, returned in replication order.

    Each replication owns its own random stream, so the records do not
    depend on how they are split across worker processes.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    unknown = set(methods) - set(METHOD_ROWS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}; choose from {sorted(METHOD_ROWS)}")
    config = config or PipelineConfig()
    workers = parallelism or default_parallelism()
    cap = os.environ.get("HDLOGIT_THREADS")
    if cap and cap.isdigit():
        workers = min(workers, max(1, int(cap)))
    workers = max(1, min(workers, reps))
    if workers == 1:
        return _run_chunk((spec, range(reps), seed, tuple(methods), xi, config))
    bounds = np.linspace(0, reps, 4 * workers + 1).astype(int)
    chunks = [(spec, range(a, b), seed, tuple(methods), xi, config)
              for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, chunks))
    return [rec for part in parts for rec in part]


@dataclass(frozen=True)
class MethodSummary:
    method: str
    reps: int
    n_ok: int
    failure_rate: float
    bias: float
    variance: float
    rmse: float
    rp: float
    mc_se: dict
    mc_se_defined: bool

    @property
    def valid(self) -> bool:
        return self.failure_rate <= FAILURE_LIMIT


def summarize_method(label: str, records, alpha0: float) -> MethodSummary:
    name, _ = METHOD_ROWS[label]
    reps = len(records)
    ok = [r for r in records
          if r.rejections.get(label) is not None and math.isfinite(r.estimates.get(name, math.nan))]
    m = len(ok)
    nan = math.nan
    if m == 0:
        return MethodSummary(label, reps, 0, 1.0, nan, nan, nan, nan, {}, False)
    a = np.array([r.estimates[name] for r in ok])
    rej = np.array([r.rejections[label] for r in ok], dtype=float)
    err = a - alpha0
    bias = float(np.mean(err))
    variance = float(np.mean((a - np.mean(a)) ** 2))
    mse = float(np.mean(err**2))
    rmse = math.sqrt(mse)
    rp = float(np.mean(rej))
    defined = m > 1
    if defined:
        sd = float(np.std(a))
        m4 = float(np.mean((a - np.mean(a)) ** 4))
        se = {"bias": sd / math.sqrt(m),
              "variance": math.sqrt(max(m4 - variance**2, 0.0) / m),
              "rmse": float(np.std(err**2)) / (2.0 * rmse * math.sqrt(m)) if rmse > 0 else nan,
              "rp": math.sqrt(rp * (1.0 - rp) / m)}
    else:
        se = {k: nan for k in ("bias", "variance", "rmse", "rp")}
    return MethodSummary(label, reps, m, 1.0 - m / reps, bias, variance, rmse, rp, se, defined)


@dataclass(frozen=True, eq=False)
class McSummary:
    spec: DgpSpec
    reps: int
    seed: int
    xi: float
    methods: dict
    records: tuple = field(default=(), repr=False)

    @property
    def valid(self) -> bool:
        return all(s.valid for s in self.methods.values())

    def rows(self) -> list[dict]:
        out = []
        for label, s in self.methods.items():
            out.append({"design": self.spec.design, "n": self.spec.n, "p": self.spec.p,
                        "alpha0": self.spec.alpha0, "r2d": self.spec.r2_d, "r2y": self.spec.r2_y,
                        "method": label, "reps": self.reps, "bias": s.bias,
                        "variance": s.variance, "rmse": s.rmse, "rp": s.rp,
                        "failure_rate": s.failure_rate, "seed": self.seed})
        return out


def summarize(spec: DgpSpec, records, seed: int, xi: float, methods=DEFAULT_METHODS,
              keep_records: bool = False) -> McSummary:
    per = {label: summarize_method(label, records, spec.alpha0) for label in methods}
    for label, s in per.items():
        if not s.valid:
            log.warning("%s: failure rate %.1f%% exceeds %.0f%%; summary flagged invalid",
                        label, 100 * s.failure_rate, 100 * FAILURE_LIMIT)
    return McSummary(spec=spec, reps=len(records), seed=seed, xi=xi, methods=per,
                     records=tuple(records) if keep_records else ())


def run_monte_carlo(spec: DgpSpec, methods=DEFAULT_METHODS, reps: int = 1000,
                    xi: float = 0.05, seed: int = 0, parallelism: int | None = None,
                    config: PipelineConfig | None = None,
                    keep_records: bool = False) -> McSummary:
    records = run_replications(spec, reps, seed, methods, xi, config, parallelism)
    return summarize(spec, records, seed, xi, methods, keep_records)


def r2_values(lo: float, hi: float, step: float) -> list[float]:
    """Inclusive arithmetic grid, rounded to kill accumulation error."""
    if step <= 0 or hi < lo:
        raise ValueError("need step > 0 and hi >= lo")
    k = int(math.floor((hi - lo) / step + 1e-9))
    return [round(lo + i * step, 10) for i in range(k + 1)]


def grid_cells(alpha0_list, r2_grid, r2y_grid=None):
    r2y_grid = r2_grid if r2y_grid is None else r2y_grid
    return [(a, rd, ry) for a in alpha0_list for rd in r2_grid for ry in r2y_grid]


def run_grid(alpha0_list, r2_grid, design: str = "sparse_decline", reps: int = 1000,
             seed: int = 0, n: int = 200, p: int = 250, rho: float = 0.5,
             methods=DEFAULT_METHODS, xi: float = 0.05, parallelism: int | None = None,
             config: PipelineConfig | None = None, r2y_grid=None, skip=(),
             on_cell=None) -> list[McSummary]:
    """Monte Carlo over the Cartesian product alpha0 x R^2_d x R^2_y.

    Every cell reuses ``seed`` (common random numbers across cells), so a
    one-cell grid reproduces :func:`run_monte_carlo` exactly. Cells listed
    in ``skip`` are not run; ``on_cell`` is called after each finished cell.
    """
    cells = grid_cells(alpha0_list, r2_grid, r2y_grid)
    if not cells:
        raise ValueError("empty grid")
    skip = set(skip)
    out = []
    for cell in cells:
        if cell in skip:
            continue
        a0, rd, ry = cell
        spec = DgpSpec(n=n, p=p, alpha0=a0, rho=rho, design=design, r2_d=rd, r2_y=ry)
        summary = run_monte_carlo(spec, methods, reps, xi, seed, parallelism, config)
        out.append(summary)
        if on_cell is not None:
            on_cell(cell, summary)
    return out


def spec_asdict(spec: DgpSpec) -> dict:
    d = {k: v for k, v in asdict(spec).items() if not isinstance(v, np.ndarray)}
    return d
