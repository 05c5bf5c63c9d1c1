import numpy as np
import pytest

from grfkit.signal import GRF, SAC_ACC, SAC_GYR, SH_ACC, SH_GYR, STEP_LENGTH, Step

STEP_CHANNELS = SAC_ACC + SAC_GYR + SH_ACC + SH_GYR + GRF


def fft_amplitude(x, rate, freq):
    """Amplitude of the `freq` component, assuming an integer number of cycles in x."""
    x = np.asarray(x, dtype=float)
    spec = np.fft.rfft(x)
    k = int(round(freq * len(x) / rate))
    return 2 * np.abs(spec[k]) / len(x)


def random_step(rng, side="left", body_weight=700.0, step_id="s0"):
    data = rng.normal(size=(STEP_LENGTH, len(STEP_CHANNELS)))
    return Step(STEP_CHANNELS, data, side=side, body_weight=body_weight, step_id=step_id)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Two athletes, two collections, two speeds; generated and preprocessed once."""
    from grfkit.preprocess import preprocess_dataset
    from grfkit.synth import synth_generate

    root = tmp_path_factory.mktemp("synth")
    index = synth_generate(root, seed=7, n_athletes=2, collections_per_athlete=2)
    return root, index, preprocess_dataset(index)


# -- acceptance bookkeeping --------------------------------------------------

ACCEPTANCE = []


@pytest.fixture
def verdict():
    """Record one acceptance line. Call as ``verdict(name, ok, detail, seconds, budget)``.

    A criterion passes only if ``ok`` holds and, when ``budget`` is given,
    it finished within that many seconds. Returns ``(passed, line)``.
    """

    def record(name, ok, detail, seconds, budget=None):
        timely = budget is None or seconds < budget
        passed = bool(ok) and timely
        limit = "" if budget is None else f" (budget {budget:g} s)"
        line = f"{'PASS' if passed else 'FAIL'} {name}: {detail}; {seconds:.2f} s{limit}"
        ACCEPTANCE.append(line)
        print(line)
        return passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
