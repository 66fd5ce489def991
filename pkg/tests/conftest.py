import itertools
from pathlib import Path

import numpy as np
import pytest

from schmm_lmpc.presets import reference_model
from schmm_lmpc.schmm import DEFAULT_MASK, SchmmModel

DATA = Path(__file__).resolve().parents[1] / "src" / "schmm_lmpc" / "data"


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def ref_model():
    return reference_model()


def random_model(rng, n_states, n_gauss, mask=DEFAULT_MASK, spread=(20.0, 80.0)):
    """Random valid model with ``n_gauss`` Gaussians plus the dropout component."""
    m = n_gauss + 1
    return SchmmModel(
        pi=rng.dirichlet(np.ones(n_states)),
        trans=rng.dirichlet(np.ones(n_states), size=n_states),
        mix=rng.dirichlet(np.ones(m), size=n_states),
        mu=np.r_[np.sort(rng.uniform(*spread, n_gauss)), mask],
        sigma=np.r_[rng.uniform(0.5, 5.0, n_gauss), 1e-4],
        mask=mask)


def brute_force_paths(model, taus, bin_width=1.0):
    """(log P(trace), posterior marginals) by enumerating every state path."""
    from schmm_lmpc.schmm import component_loglik
    b = np.exp(component_loglik(model, taus, bin_width)) @ model.mix.T  # (T, N)
    T, N = b.shape
    total = 0.0
    marg = np.zeros((T, N))
    for path in itertools.product(range(N), repeat=T):
        p = model.pi[path[0]] * b[0, path[0]]
        for t in range(1, T):
            p *= model.trans[path[t - 1], path[t]] * b[t, path[t]]
        total += p
        marg[np.arange(T), path] += p
    return np.log(total), marg / total


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
