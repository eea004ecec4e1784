import numpy as np
import pytest
from hypothesis import settings

from speckle_forge.synthetic import PhantomConfig, make_template

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def phantom():
    """(video, mesh, labels) of the default phantom, seed 0."""
    return make_template(PhantomConfig(), seed=0, sequence_id="fixture")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rect_mesh_frame(l=4, r=3, x0=0.0, z0=0.0, dx=1.0, dz=1.0):
    """Axis-aligned grid: i along x, j along z."""
    i, j = np.meshgrid(np.arange(l), np.arange(r), indexing="ij")
    return np.stack([x0 + dx * i, z0 + dz * j], axis=-1).astype(float)


@pytest.fixture(scope="session")
def phantom_set(tmp_path_factory):
    """Three phantom templates on disk; returns the templates manifest path."""
    from speckle_forge.synthetic import write_phantom_set

    return write_phantom_set(tmp_path_factory.mktemp("phantoms"), 3, seed=0)


ACCEPTANCE_LINES: list[str] = []


def acceptance_line(number: int, ok: bool, detail: str) -> None:
    """Print and record one pass/fail line for an acceptance criterion."""
    line = f"ACCEPTANCE {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
