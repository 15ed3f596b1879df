import numpy as np
import pytest

from misopos.model import SystemConfig, generate_pilots, los_path


@pytest.fixture
def default_config():
    return SystemConfig()


@pytest.fixture
def small_config():
    # N >= N_BS and G >= N_BS so every estimator is applicable
    return SystemConfig(n_subcarriers=8, n_transmissions=4, n_bs_antennas=4)


@pytest.fixture
def small_pilots(small_config):
    return generate_pilots(small_config, 11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def los_channel(config, position=(30.0, 20.0), phase=0.3):
    from misopos.model import ChannelRealization

    return ChannelRealization(los_path(config, position, phase), (), tuple(position))


# --------------------------------------------------------------------------
# Acceptance verdict lines

VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Print and collect one PASS/FAIL line, then assert it."""

    def record(criterion, ok, detail):
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config.stash[VERDICTS].append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
