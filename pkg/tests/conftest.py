import numpy as np
import pytest

from vcr.tensor import Rng


@pytest.fixture
def rng():
    return Rng(1234)


def loop_matvec(m, v):
    """Scalar double-loop product, the independent oracle for matvec."""
    rows, cols = len(m), len(m[0])
    out = [0.0] * rows
    for i in range(rows):
        acc = 0.0
        for j in range(cols):
            acc += m[i][j] * v[j]
        out[i] = acc
    return np.array(out)
