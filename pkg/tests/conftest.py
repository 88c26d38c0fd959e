import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hdlogit.data import Dataset
from hdlogit.numeric import RngStream
from hdlogit.simulate import DgpSpec, draw_dataset

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria (slow Monte Carlo)")


@pytest.fixture(scope="session")
def fig1_spec():
    return DgpSpec(n=200, p=250, alpha0=0.2, rho=0.5, r2_d=0.75, r2_y=0.75)


@pytest.fixture(scope="session")
def fig1_data(fig1_spec):
    ds, truth = draw_dataset(fig1_spec, RngStream(2024, 0))
    return ds


@pytest.fixture(scope="session")
def fig1_std(fig1_data):
    return fig1_data.standardized()


def make_logistic(n, p, seed, alpha=0.5, beta=None, intercept=True):
    """Small non-separable logistic dataset for oracle comparisons."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, p))
    d = rng.standard_normal(n)
    beta = np.zeros(p) if beta is None else np.asarray(beta, dtype=float)
    eta = alpha * d + z @ beta
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    if intercept:
        return Dataset(y=y, d=d, X=np.column_stack([np.ones(n), z]), intercept=0)
    return Dataset(y=y, d=d, X=z)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the full-scale Monte Carlo checks (tens of minutes)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="full-scale Monte Carlo; pass --runslow (or `make full`)")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
