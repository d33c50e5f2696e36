import numpy as np
import pytest

from tcmicp.geometry import PointCloud, RigidTransform, orthonormality_error


def random_cloud(n: int, seed: int = 0, scale: float = 1.0, id: str = "") -> PointCloud:
    return PointCloud(np.random.default_rng(seed).uniform(-scale, scale, (n, 3)), id)


def assert_rigid(t: RigidTransform) -> None:
    assert np.linalg.det(t.rotation) == pytest.approx(1.0, abs=1e-9)
    assert orthonormality_error(t.rotation) <= 1e-9


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
