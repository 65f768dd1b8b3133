import numpy as np
import pytest

from dpnet.correlator import SpectralConfig
from dpnet.simnet import RunSpec, SensorConfig, StationConfig, default_sensors, default_stations, generate_run


def small_spec(duration=20.0, seed=0, noise_asd=15e-15, common_mode_asd=5e-15, n_suzhou=13, n_harbin=2, **kw):
    return RunSpec(
        duration=duration,
        seed=seed,
        stations=default_stations(common_mode_asd),
        sensors=default_sensors(noise_asd, n_suzhou, n_harbin),
        **kw,
    )


def two_sensor_spec(duration=20.0, seed=0, noise_asd=15e-15, **kw):
    stations = (StationConfig("a", common_mode_asd=0.0), StationConfig("b", common_mode_asd=0.0))
    sensors = (SensorConfig("A1", "a", noise_asd), SensorConfig("B1", "b", noise_asd))
    return RunSpec(duration=duration, seed=seed, stations=stations, sensors=sensors, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def short_cfg():
    return SpectralConfig(segment_length=2000)


@pytest.fixture(scope="session")
def short_run():
    return generate_run(small_spec())


# filled by test_acceptance; printed once at the end of the session
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
