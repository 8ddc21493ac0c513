import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sdfree.instances import reference_domain, reference_instance
from sdfree.normalform import NormalizationConfig, normalize
from sdfree.series import FrequencyData, PhaseSpace, TruncationOrders

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# large enough that no product in the algebra tests reaches the frontier
WIDE = TruncationOrders(k=40, pq=40, x=40, ri=40)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def space11():
    return PhaseSpace(FrequencyData(1.0, (0.3,), (0.2,)))


@pytest.fixture(scope="session")
def ref_instance():
    return reference_instance(N=4)


@pytest.fixture(scope="session")
def ref_run(ref_instance):
    """The N = 4 reference normalization, shared by several modules."""
    return normalize(ref_instance.H0, ref_instance.f, ref_instance.domain, NormalizationConfig(N=4))


@pytest.fixture(scope="session")
def unit_domain():
    return reference_domain()


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
