"""Property-based invariants."""

from fractions import Fraction

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from resalign.accumulator import confidence_weights, multi_head_masks, score_attributes
from resalign.analysis import (
    ArchitectureConfig,
    LevelConfig,
    capture_range,
    ma_config,
    profile_area,
    separability_profile,
)
from resalign.field import DisplacementField, Volume, compose, identity_field, warp
from resalign.metrics import dice, motion_pair_pdf

dims_st = st.tuples(*[st.integers(2, 6)] * 3)
finite = st.floats(-3, 3, allow_nan=False, width=64)


@st.composite
def field_st(draw, dims=None):
    dims = dims or draw(dims_st)
    return DisplacementField(draw(arrays(np.float64, (3,) + dims, elements=finite)))


@st.composite
def level_list(draw):
    pools = sorted(draw(st.lists(st.sampled_from([1, 2, 4, 8]), min_size=1, max_size=4)), reverse=True)
    dil = [tuple(draw(st.lists(st.integers(1, 4), min_size=1, max_size=3))) for _ in pools]
    return ArchitectureConfig(tuple(LevelConfig(p, r) for p, r in zip(pools, dil)))


settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


@given(field_st())
def test_compose_with_identity_is_neutral(f):
    z = identity_field(f.dims)
    np.testing.assert_allclose(compose(f, z).data, f.data, atol=1e-12)
    np.testing.assert_allclose(compose(z, f).data, f.data, atol=1e-12)


@given(dims_st.flatmap(lambda d: arrays(np.float64, d, elements=finite)))
def test_zero_field_warp_is_identity(arr):
    out = warp(Volume(arr), identity_field(arr.shape))
    np.testing.assert_array_equal(out.array, arr)


@given(dims_st.flatmap(lambda d: arrays(np.float64, d, elements=finite)), st.integers(0, 2))
def test_warp_output_within_input_range(arr, seed):
    f = DisplacementField(np.random.default_rng(seed).uniform(-4, 4, (3,) + arr.shape))
    out = warp(Volume(arr), f).array
    assert out.min() >= arr.min() - 1e-12 and out.max() <= arr.max() + 1e-12


@given(dims_st.flatmap(lambda d: st.tuples(
    arrays(np.int64, d, elements=st.integers(0, 2)), arrays(np.int64, d, elements=st.integers(0, 2)))))
def test_dice_symmetric_and_bounded(pair):
    a, b = pair
    for label in (1, 2):
        d = dice(a, b, label)
        assert 0.0 <= d <= 1.0
        assert d == dice(b, a, label)
        assert dice(a, a, label) == 1.0


@given(st.integers(1, 4), st.integers(2, 6).flatmap(
    lambda n: arrays(np.float64, (n, 2, 2, 2), elements=st.floats(-1, 1))), st.floats(0.01, 2))
def test_softmax_masks_partition_unity(_, attr, temperature):
    masks = multi_head_masks(attr, temperature)
    assert np.all(masks >= 0)
    np.testing.assert_allclose(masks.sum(axis=0), 1.0, atol=1e-12)


@given(arrays(np.float64, (2, 3, 3, 3), elements=st.floats(-1, 1)), st.floats(-1, 1), st.floats(0.01, 1))
def test_confidence_in_unit_interval(attr, mu, tau):
    c = confidence_weights(attr, mu, tau)
    assert np.all((c >= 0) & (c <= 1))


@given(arrays(np.float64, (20,), elements=st.floats(-1, 1)))
def test_score_attributes_order_preserving(s):
    z = score_attributes(s)
    assert np.all(np.isfinite(z))
    order = np.argsort(s, kind="stable")
    assert np.all(np.diff(z[order]) >= 0)


@given(level_list())
def test_profile_nondecreasing_and_plateau(cfg):
    prof = separability_profile(cfg)
    assert list(prof.breakpoints) == sorted(prof.breakpoints)
    assert all(b >= a for a, b in zip(prof.values, prof.values[1:]))
    assert prof.plateau == 2 * sum(capture_range(lv) for lv in cfg.levels)
    assert prof(Fraction(1, 2) if prof.breakpoints[0] > Fraction(1, 2) else 0) == 0


@given(level_list(), st.integers(1, 60), st.integers(1, 60))
def test_area_monotone_in_limit(cfg, a, b):
    prof = separability_profile(cfg)
    lo, hi = sorted((a, b))
    assert profile_area(prof, lo) <= profile_area(prof, hi)
    assert profile_area(prof, hi) <= prof.plateau * hi


@given(st.integers(1, 5).flatmap(lambda K: st.tuples(st.just(K), st.integers(0, K))))
def test_motion_aware_levels_share_finest_pool(kq):
    K, q = kq
    cfg = ma_config(K, q)
    pools = [lv.pool_size for lv in cfg.levels]
    assert len(set(pools[:q])) <= 1
    assert pools[-1] == 1 and pools == sorted(pools, reverse=True)
    if q:
        assert pools[0] == 2 ** (K - q)


@given(st.integers(0, 5), st.floats(0, 3))
@settings(max_examples=20, deadline=None)
def test_motion_pair_pdf_normalised(seed, amp):
    rng = np.random.default_rng(seed)
    lab = rng.integers(0, 3, (5, 5, 5))
    f = DisplacementField(rng.uniform(-amp, amp, (3, 5, 5, 5)))
    pdf = motion_pair_pdf(f, lab, lab, bins=4, sigma=0.5)
    if pdf.empty:
        assert pdf.density.sum() == 0
    else:
        np.testing.assert_allclose([pdf.density.sum(), pdf.raw.sum()], 1.0)
        assert pdf.n_pairs == pdf.n_correct * (pdf.n_correct - 1) // 2
