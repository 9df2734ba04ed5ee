import pytest

from agconv.config import TrainConfig


@pytest.fixture
def tiny_cfg():
    """A classification run small enough to train in a couple of seconds."""
    return TrainConfig(
        epochs=2, batch_size=4, k=6, hidden=6, widths=(6, 6, 8, 8), emb=16, head=(8,),
        n_train=8, n_test=6, n_points=32, seed=3,
    )


@pytest.fixture
def tiny_seg_cfg():
    return TrainConfig(
        task="seg", shapes=("cube",), epochs=1, batch_size=4, k=4, hidden=4, widths=(4, 4, 6, 6, 8),
        head=(8,), n_train=4, n_test=3, n_points=64, seed=1,
    )


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
