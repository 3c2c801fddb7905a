import numpy as np
import pytest

from pcattack import zoo as zoo_mod
from pcattack.models import Classifier, ModelSpec


class LinearModel:
    """Logits = x.flat @ W + b. Teaching stub with analytic gradients."""

    def __init__(self, w, b=None, input_shape=None):
        self.w = np.asarray(w, dtype=np.float64)
        self.b = np.zeros(self.w.shape[1]) if b is None else np.asarray(b, dtype=np.float64)
        self.input_shape = tuple(input_shape or (self.w.shape[0],))
        self.class_count = self.w.shape[1]

    def forward(self, x, tape=None):
        from pcattack import autodiff as ad

        return ad.dense(ad.reshape(x, (x.shape[0], -1)), self.w, self.b)

    def logits(self, x):
        return Classifier.logits(self, x)


@pytest.fixture(scope="session")
def zoo():
    z = zoo_mod.Zoo()
    missing = [r for r in zoo_mod.ROSTER if r not in z.refs()]
    if missing:
        pytest.skip(f"checkpoints missing: {missing}; run pcattack train or zoo.ensure_zoo()")
    return z


@pytest.fixture(scope="session")
def splits():
    return zoo_mod.corpus()


@pytest.fixture(scope="session")
def test_set(splits):
    return splits[1]


@pytest.fixture(scope="session")
def small_cnn():
    return Classifier(ModelSpec("cnn-small", init_seed=3))


@pytest.fixture(scope="session")
def small_mlp():
    return Classifier(ModelSpec("mlp-2", init_seed=3))


@pytest.fixture
def linear2():
    # class 0 weights zero, class 1 weights (1, -2): d/dx of the class-1 logit is (1, -2)
    return LinearModel(np.array([[0.0, 1.0], [0.0, -2.0]]))


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
