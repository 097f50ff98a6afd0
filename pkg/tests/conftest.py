from pathlib import Path

import numpy as np
import pytest

from magscan import kernels
from magscan.design import Dataset

FIXTURES = Path(__file__).parent / "fixtures"


def random_dataset(seed: int, h: int = 4, n: int = 100, family: str = "gaussian",
                   kx: int = 0, p_carry=(0.15, 0.5)) -> Dataset:
    """Carrier matrix with per-allele frequencies, modest signal on allele 0 or 1."""
    rng = np.random.default_rng(seed)
    freq = rng.uniform(*p_carry, size=h)
    C = rng.random((n, h)) < freq
    X = rng.standard_normal((n, kx)) if kx else None
    eta = 0.6 * (C[:, 0] | C[:, min(1, h - 1)]) - 0.4 * C[:, h - 1]
    if kx:
        eta = eta + X @ rng.normal(0, 0.5, size=kx)
    if family == "gaussian":
        y = eta + rng.standard_normal(n)
    elif family == "binomial":
        y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    else:
        y = rng.poisson(np.exp(0.3 + 0.5 * eta)).astype(float)
    return Dataset.from_arrays([f"a{i}" for i in range(h)], C, y, covariates=X)


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request):
    return kernels.available_backends()[request.param]


# Acceptance summary lines, printed once at the end of the run.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
