import numpy as np
import pytest
from hypothesis import settings

from pcgseg.signal_io import SynthConfig, synth_pcg

settings.register_profile("pcgseg", deadline=None, max_examples=40)
settings.load_profile("pcgseg")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def rec60():
    """Clean 60 BPM synthetic recording, 20 s at 4 kHz."""
    return synth_pcg(SynthConfig(bpm=60.0, duration_s=20.0, rng_seed=5), rec_id="rec60")


@pytest.fixture(scope="session")
def rec60_noisy():
    return synth_pcg(SynthConfig(bpm=60.0, duration_s=20.0, noise_snr_db=15.0, rng_seed=5),
                     rec_id="rec60n")


_ACCEPTANCE: list = []


@pytest.fixture(scope="session")
def report_criterion():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number, ok, detail=""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        _ACCEPTANCE.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE, key=lambda t: t[0]):
            terminalreporter.write_line(line)
