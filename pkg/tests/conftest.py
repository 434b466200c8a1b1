import numpy as np
import pytest

from splatinit.geometry import Camera, look_at

ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def _report(number, name, ok, detail=""):
        ACCEPTANCE.append(f"[{number:>2}] {'PASS' if ok else 'FAIL'}  {name}  {detail}")
        print(ACCEPTANCE[-1])
        return ok

    return _report


def make_camera(cid, center, target=(0.0, 0.0, 0.0), f=100.0, width=100, height=80):
    R, t = look_at(center, target)
    K = np.array([[f, 0, (width - 1) / 2], [0, f, (height - 1) / 2], [0, 0, 1.0]])
    return Camera(id=cid, K=K, R=R, t=t, width=width, height=height)


@pytest.fixture
def ring_cameras():
    centers = [(5 * np.cos(a), 5 * np.sin(a), 3.0) for a in np.linspace(-0.6, 0.6, 4)]
    return [make_camera(i, c) for i, c in enumerate(centers)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
