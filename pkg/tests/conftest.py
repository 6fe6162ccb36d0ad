import pytest

from stackamr import synthetic
from stackamr.model import ParserConfig
from stackamr.train import OptimConfig, build_network, prepare_examples, train_mle

SMALL = dict(word_dim=16, input_dim=16, hidden_dim=16, action_dim=8, label_dim=8, tag_dim=4)


@pytest.fixture(scope="session")
def small_config():
    return ParserConfig(**SMALL)


@pytest.fixture(scope="session")
def toy_examples():
    return prepare_examples(synthetic.generate(20, seed=3))


@pytest.fixture(scope="session")
def heldout_examples():
    return prepare_examples(synthetic.generate(20, seed=4))


@pytest.fixture(scope="session")
def memorized(tmp_path_factory, toy_examples, small_config):
    """The MLE run of the memorization criterion, shared with later checks."""
    import time
    net = build_network(toy_examples, small_config, seed=0)
    path = str(tmp_path_factory.mktemp("ckpt") / "mle.npz")
    t0 = time.perf_counter()
    res = train_mle(net, toy_examples, dev=toy_examples, epochs=50,
                    optim=OptimConfig("sgd", 0.1, 0.0, 5.0), seed=0, target=0.95, checkpoint=path)
    return {"net": net, "result": res, "path": path, "seconds": time.perf_counter() - t0}


_ACCEPTANCE = {}


@pytest.fixture
def accept():
    """Record one acceptance criterion's outcome, then assert it."""
    def record(n, ok, detail):
        _ACCEPTANCE[n] = (bool(ok), detail)
        assert ok, f"criterion {n}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
