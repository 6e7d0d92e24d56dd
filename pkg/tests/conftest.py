import logging

import numpy as np
import pytest

from mmsounder.beamforming import build_codebook
from mmsounder.calibration import identity_response
from mmsounder.waveform import MultitoneSpec, optimize_phases

# (criterion number, passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE_RESULTS = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(autouse=True)
def _quiet_clipping_log(caplog):
    # noise peaks at the top AGC step occasionally touch full scale; the
    # snapshot flag is what tests check, not the log line
    caplog.set_level(logging.ERROR, logger="mmsounder.sounder")


@pytest.fixture(scope="session")
def spec():
    """The default 801-tone grid with optimized phases."""
    return optimize_phases(MultitoneSpec.sounder_default())


@pytest.fixture(scope="session")
def small_spec():
    """A short grid that keeps simulations cheap: 41 tones at 10 MHz, fs 1 GHz."""
    return optimize_phases(MultitoneSpec(41, 10e6, 10e6, 1e9, np.zeros(41)))


@pytest.fixture(scope="session")
def codebook():
    return build_codebook()


@pytest.fixture(scope="session")
def identity_cal(spec):
    return identity_response(spec.tone_frequencies_hz)
