import pytest

from prepack.model import ModelConfig, init_model

# Filled by tests/test_acceptance.py, printed at the end of the run.
CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def toy_weights():
    return init_model(ModelConfig(vocab_size=256, d_model=64, n_heads=4, n_layers=2, rng_seed=0))


@pytest.fixture(scope="session")
def tiny_weights():
    return init_model(ModelConfig(vocab_size=32, d_model=16, n_heads=2, n_layers=2, rng_seed=3))


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
