import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def haar_rotations(n, rng):
    """Random rotations via QR of Gaussian matrices (independent of the package's sampler)."""
    A = rng.standard_normal((n, 3, 3))
    Q, R = np.linalg.qr(A)
    Q = Q * np.sign(np.diagonal(R, axis1=-2, axis2=-1))[:, None, :]
    Q[np.linalg.det(Q) < 0, :, 2] *= -1
    return Q


def naive_fk(joints, parents, offsets, rotations):
    """Position of each joint by walking its root path and summing rotated offsets."""
    out = []
    for j in range(len(joints)):
        p = np.zeros(3)
        k = j
        while parents[k] >= 0:
            p = p + rotations[parents[k]] @ offsets[k]
            k = parents[k]
        out.append(p)
    return np.array(out)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
