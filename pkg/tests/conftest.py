import pytest
from hypothesis import HealthCheck, settings

from anchorvid.denoiser import DenoiserArch, init_denoiser
from anchorvid.sampler import NoiseSchedule, SamplerConfig, generate_t2i_trace

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def arch():
    return DenoiserArch()


@pytest.fixture(scope="session")
def params0():
    return init_denoiser(0)


@pytest.fixture(scope="session")
def schedule50():
    return NoiseSchedule.linear(50)


@pytest.fixture(scope="session")
def config1():
    return SamplerConfig(frames=1)


@pytest.fixture(scope="session")
def trace_red(params0, schedule50, config1):
    return generate_t2i_trace("a red cube", 11, config1, params0, schedule50)


@pytest.fixture(scope="session")
def trace_blue(params0, schedule50, config1):
    return generate_t2i_trace("a blue sphere", 12, config1, params0, schedule50)
