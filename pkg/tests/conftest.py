import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from idmk.envsim import generate_dataset, make_reference
from idmk.idm import TrainConfig, WindowSpec, train

settings.register_profile("idmk", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("idmk")


@pytest.fixture(scope="session")
def crossroads_refs():
    return [make_reference(n) for n in ("crossroads-left", "crossroads-right", "crossroads-mid")]


@pytest.fixture(scope="session")
def small_model():
    """Briefly trained 10P-10F model; good enough to drive rollouts, not to follow well."""
    data = generate_dataset(["crossroads-left", "winding-0"], 3, 0)
    model, _ = train(data, WindowSpec(10, 10, 1), TrainConfig(epochs=3, updates_per_epoch=40), hidden=16)
    return model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str) -> bool:
        ACCEPTANCE[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
