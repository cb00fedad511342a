import numpy as np
import pytest

from tenfactor import CpModel, DenseTensor


def orthonormal(rng, n, r):
    """Random ``n x r`` matrix with orthonormal columns."""
    q, _ = np.linalg.qr(rng.standard_normal((n, r)))
    return q


def aligned_l2(est, truth):
    """Distance between two vectors after flipping ``est`` toward ``truth``."""
    s = -1.0 if est @ truth < 0 else 1.0
    return float(np.linalg.norm(s * est - truth))


def exact_rank_model(rng, shape, scales):
    """CP model with orthonormal modes and the given scales."""
    r = len(scales)
    return CpModel(tuple(orthonormal(rng, n, r) for n in shape), np.asarray(scales, float))


def brute_reconstruct(model):
    """Entry-by-entry sum over components, independent of any unfolding."""
    out = np.zeros(model.shape)
    for idx in np.ndindex(*model.shape):
        out[idx] = sum(
            model.scales[r] * np.prod([m[i, r] for m, i in zip(model.modes, idx)])
            for r in range(model.rank)
        )
    return out


# 3 x 4 x 2 tensor whose frontal slices hold 1..12 and 13..24 column by column
EXAMPLE1 = DenseTensor((3, 4, 2), np.arange(1, 25))
EXAMPLE1_UNFOLDINGS = [
    np.array([
        [1, 4, 7, 10, 13, 16, 19, 22],
        [2, 5, 8, 11, 14, 17, 20, 23],
        [3, 6, 9, 12, 15, 18, 21, 24],
    ]),
    np.array([
        [1, 2, 3, 13, 14, 15],
        [4, 5, 6, 16, 17, 18],
        [7, 8, 9, 19, 20, 21],
        [10, 11, 12, 22, 23, 24],
    ]),
    np.array([list(range(1, 13)), list(range(13, 25))]),
]

# 3 x 3 x 3 tensor with entries 1..27 in storage order
EXAMPLE2 = DenseTensor((3, 3, 3), np.arange(1, 28))
EXAMPLE2_UNFOLDINGS = [
    np.array([
        [1, 4, 7, 10, 13, 16, 19, 22, 25],
        [2, 5, 8, 11, 14, 17, 20, 23, 26],
        [3, 6, 9, 12, 15, 18, 21, 24, 27],
    ]),
    np.array([
        [1, 2, 3, 10, 11, 12, 19, 20, 21],
        [4, 5, 6, 13, 14, 15, 22, 23, 24],
        [7, 8, 9, 16, 17, 18, 25, 26, 27],
    ]),
    np.array([list(range(1, 10)), list(range(10, 19)), list(range(19, 28))]),
]


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
