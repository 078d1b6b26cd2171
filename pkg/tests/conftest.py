import functools

import pytest
from hypothesis import HealthCheck, settings

from ncvem.analysis import run_convergence
from ncvem.generators import generate_mesh

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ACCEPTANCE_RESULTS: dict[int, tuple[str, bool, str]] = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[number] = (title, passed, detail)


@functools.lru_cache(maxsize=None)
def cached_mesh(kind: str, resolution: int, seed: int = 0):
    return generate_mesh(kind, resolution, seed)


@pytest.fixture
def mesh_cache():
    return cached_mesh


@functools.lru_cache(maxsize=None)
def cached_convergence(problem: str, kind: str, k: int, resolutions: tuple[int, ...], stab: str, best_fit: bool = False):
    """Convergence runs are the slowest part of the suite; share them across modules."""
    return run_convergence(problem, kind, k, list(resolutions), stab, best_fit=best_fit)


@pytest.fixture
def convergence_cache():
    return cached_convergence


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}")
