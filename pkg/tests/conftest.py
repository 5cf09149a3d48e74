import numpy as np
import pytest

from irisim.imager import derive_seed
from irisim.layout import fig12_like_plan, synthesize_layout
from irisim.optics import OpticalConfig

# 512 px across at exactly 1.67 um/px
DIE_512 = 512 * 1.67


@pytest.fixture(scope="session")
def fig12_512():
    return synthesize_layout((DIE_512, DIE_512), fig12_like_plan(DIE_512), texture_seed=derive_seed(1, "synth"))


@pytest.fixture(scope="session")
def small_layout():
    """A 200 um die with every block kind, fast to render."""
    return synthesize_layout((200.0, 200.0), fig12_like_plan(200.0), texture_seed=7)


@pytest.fixture
def quiet_config():
    return OpticalConfig().replace(noise=OpticalConfig().noise.__class__(enabled=False))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
