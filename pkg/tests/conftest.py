import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def layout():
    from qccdsim.trap_model import default_layout
    return default_layout()


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running physics checks")


@pytest.fixture(scope="session")
def char_cache(tmp_path_factory):
    """Fresh characterization cache shared by the whole session."""
    return tmp_path_factory.mktemp("characterizations")


@pytest.fixture(scope="session")
def near_lib(layout, char_cache):
    from qccdsim.compiler import PrimitiveLibrary
    return PrimitiveLibrary("near-adiabatic", layout, char_cache)


@pytest.fixture(scope="session")
def noisy_lib(layout, char_cache):
    from qccdsim.compiler import PrimitiveLibrary
    return PrimitiveLibrary("noisy", layout, char_cache)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
