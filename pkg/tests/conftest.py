import numpy as np
import pytest

from puad.autodiff import ParameterSet
from puad.data import GenConfig, gen_toy2d
from puad.losses import LossKind
from puad.models import SvddModel, init_mlp, make_ae, make_classifier


def random_svdd(rng, d, hidden=(4,), k=2):
    params = ParameterSet()
    widths = [d, *hidden, k]
    init_mlp(params, "enc", widths, rng, bias=False)
    return SvddModel(widths, params, rng.normal(size=k))


def random_model(kind: LossKind, rng, d=3, hidden=(4,), latent=2, sigma=0.1):
    if kind.model_kind == "svdd":
        return random_svdd(rng, d, hidden, latent)
    if kind.model_kind == "classifier":
        return make_classifier(d, hidden, rng)
    return make_ae(d, hidden, latent, rng, sigma if kind.tag == "DAE" else 0.0)


def random_kind(tag, rng):
    return LossKind(tag, float(rng.uniform(0.05, 0.9)) if tag.startswith("PU") else None)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_gen():
    return GenConfig(n_unlabeled_normal=180, n_unlabeled_seen=20, n_labeled_seen=20, test_normal=100, test_seen=50, test_unseen=50)


@pytest.fixture(scope="session")
def toy_small(small_gen):
    return gen_toy2d(small_gen)


# ---------------------------------------------------------- acceptance lines

ACCEPTANCE_RESULTS = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion; printed at session end."""

    def record(criterion, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        ACCEPTANCE_RESULTS.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
