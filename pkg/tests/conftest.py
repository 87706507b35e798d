import numpy as np
import pytest

from tempalign.core import EmbeddingSequence, SegmentMap, SegmentedPair


def basis(i: int, dim: int) -> np.ndarray:
    v = np.zeros(dim)
    v[i] = 1.0
    return v


def seq(vectors, sid="s") -> EmbeddingSequence:
    return EmbeddingSequence(sid, np.asarray(vectors, dtype=float))


def make_pair(captions, clips, segments, pid="p0") -> SegmentedPair:
    return SegmentedPair(
        id=pid,
        anchor=seq(captions, f"{pid}-captions"),
        positive=seq(clips, f"{pid}-clips"),
        segments=SegmentMap(tuple(segments)),
    )


def check_path(path, shape, measure: str) -> None:
    """Structural warping-path invariants for either measure."""
    n, m = shape
    assert len(path) >= 1
    for (i0, j0), (i1, j1) in zip(path, path[1:]):
        assert (i1 - i0, j1 - j0) in ((1, 1), (1, 0), (0, 1))
    rows = {i for i, _ in path}
    cols = {j for _, j in path}
    assert rows == set(range(n)), "every anchor row must be matched"
    if measure == "dtw":
        assert path[0] == (0, 0) and path[-1] == (n - 1, m - 1)
        assert cols == set(range(m)), "every column must be matched under dtw"
    else:
        assert path[0][0] == 0 and path[-1][0] == n - 1
        j0, j1 = path[0][1], path[-1][1]
        assert j0 <= j1
        assert cols == set(range(j0, j1 + 1))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
