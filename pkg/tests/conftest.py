import numpy as np
import pytest
from hypothesis import strategies as st

from spatialchain.geometry import LinkPose, canonical_quat


def random_quat(rng):
    return canonical_quat(rng.normal(size=4))


def random_pose(rng, scale=1.0):
    return LinkPose(rng.uniform(-scale, scale, 3), random_quat(rng))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


finite = st.floats(-5.0, 5.0, allow_nan=False)
quat_components = st.lists(st.floats(-1.0, 1.0, allow_nan=False), min_size=4, max_size=4).filter(
    lambda q: np.linalg.norm(q) > 1e-3
)


@st.composite
def poses(draw):
    p = np.array(draw(st.lists(finite, min_size=3, max_size=3)))
    q = canonical_quat(np.array(draw(quat_components)))
    return LinkPose(p, q)


def central_diff(f, x0, h=1e-6):
    """Columns of the Jacobian of ``f`` at ``x0`` by central differences."""
    x0 = np.asarray(x0, dtype=float)
    cols = []
    for i in range(len(x0)):
        e = np.zeros_like(x0)
        e[i] = h
        cols.append((np.asarray(f(x0 + e)) - np.asarray(f(x0 - e))) / (2 * h))
    return np.array(cols).T


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))
