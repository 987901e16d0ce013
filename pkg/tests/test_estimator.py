import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from resalign import ResidualAligner
from resalign.field import Volume
from resalign.scenes import random_blobs, render_blobs


@pytest.fixture(scope="module")
def pair():
    dims = (24, 24, 24)
    blobs = random_blobs(dims, seed=4)
    return render_blobs(dims, blobs), render_blobs(dims, blobs.shifted((0, 2, -3)))


def test_params_roundtrip():
    est = ResidualAligner(n_levels=2, heads=1, sigma=2.0)
    assert clone(est).get_params() == est.get_params()
    assert est.set_params(lam=0.3).lam == 0.3


def test_fit_transform_volume(pair):
    src, tgt = pair
    est = ResidualAligner().fit(src, tgt)
    assert est.ddf_.dims == src.dims and est.dims_ == src.dims
    assert len(est.objective_trace_) == 3
    moved = est.transform(src)
    assert isinstance(moved, Volume)
    inner = (slice(6, -6),) * 3
    before = np.abs(src.array[inner] - tgt.array[inner]).mean()
    after = np.abs(moved.array[inner] - tgt.array[inner]).mean()
    assert after < 0.2 * before


def test_array_in_array_out(pair):
    src, tgt = pair
    est = ResidualAligner(n_levels=2, ma_depth=2).fit(src.array, tgt.array)
    out = est.transform(src.array)
    assert isinstance(out, np.ndarray) and out.shape == src.dims
    assert est.score(src.array, tgt.array) > est.score(src.array, src.array[::-1].copy())


def test_transform_labels(pair):
    src, tgt = pair
    est = ResidualAligner(n_levels=2, ma_depth=2).fit(src, tgt)
    lab = (src.array > 0.3).astype(int)
    assert set(np.unique(est.transform_labels(lab))) <= {0, 1}


def test_explicit_levels_and_theory_mode(pair):
    src, tgt = pair
    est = ResidualAligner(levels=[(2, (1,)), (1, (1,))], theory_mode=True).fit(src, tgt)
    assert est.params_.field_order == 0
    assert [lv.pool_size for lv in est.config_.levels] == [2, 1]


def test_errors(pair):
    src, _ = pair
    with pytest.raises(NotFittedError):
        ResidualAligner().transform(src)
    est = ResidualAligner(n_levels=1, ma_depth=1).fit(src, src)
    with pytest.raises(ValueError):
        est.transform(np.zeros((4, 4, 4)))
    with pytest.raises(ValueError):
        ResidualAligner().fit(np.zeros((4, 4)), np.zeros((4, 4)))
    bad = src.array.copy()
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        ResidualAligner().fit(bad, src.array)
