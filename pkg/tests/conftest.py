import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from reggelab.harness.catalog import base_complex, catalog

settings.register_profile(
    "reggelab", deadline=None, derandomize=True, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("reggelab")


@pytest.fixture(scope="session")
def sphere():
    return catalog("round_sphere", {})


@pytest.fixture(scope="session")
def bump():
    return catalog("bump_torus2", {"a": 0.3, "k": 1})


@pytest.fixture(scope="session")
def torus3():
    return catalog("conformal_torus3", {"a": 0.1, "k": 1})


@pytest.fixture(scope="session")
def flat2():
    return catalog("flat_torus", {"n": 2})


@pytest.fixture(scope="session")
def sphere_base(sphere):
    return base_complex(sphere, "octahedron")


@pytest.fixture(scope="session")
def bump_base(bump):
    return base_complex(bump, "torus_grid", {"cells": 6})


@pytest.fixture(scope="session")
def sphere_poly(sphere, sphere_base):
    from reggelab.complex import build_approximation
    return {E: build_approximation(sphere, *sphere_base, E) for E in (1, 2, 4)}


@pytest.fixture(scope="session")
def bump_poly(bump, bump_base):
    from reggelab.complex import build_approximation
    return build_approximation(bump, *bump_base, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("tests.test_acceptance") or sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
