import numpy as np
import pytest

from nfps import PipelineConfig, make_fixture, reconstruct, render


@pytest.fixture(scope="session")
def rendered():
    """Cache of noiseless fixture renders keyed by (name, size, lights, seed)."""
    cache = {}

    def get(name, size=64, lights=10, seed=0):
        key = (name, size, lights, seed)
        if key not in cache:
            cache[key] = render(make_fixture(name, size, lights, seed))
        return cache[key]

    return get


@pytest.fixture(scope="session")
def reconstructed(rendered):
    """Cache of pipeline runs keyed by fixture and ablation mode."""
    cache = {}

    def get(name, size=256, mode="per_pixel", seed=0):
        key = (name, size, mode, seed)
        if key not in cache:
            stack, depth, normals = rendered(name, size, 10, seed)
            result = reconstruct(stack, stack.lights, stack.K, PipelineConfig(ablation_mode=mode))
            cache[key] = (result, depth, normals)
        return cache[key]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: dict[tuple[int, str], str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def report(number: int, title: str, ok: bool, detail: str):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        _ACCEPTANCE[number, title] = line
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[key])
