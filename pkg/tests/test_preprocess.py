import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdtrace.errors import BalancingError, NumericError
from pdtrace.preprocess import (
    FeatureSeries,
    SegmentationPlan,
    build_patch_set,
    load_patch_set,
    minmax_normalize,
    patch_count,
    plan_balanced_strides,
    prepare_training_patches,
    save_patch_set,
    segment,
    velocity_features,
)


def series(values, label="HC", sid="s"):
    v = np.atleast_2d(np.asarray(values, dtype=float))
    return FeatureSeries(sid, label, v, tuple(f"c{i}" for i in range(len(v))), sid)


def test_velocity_direct(seq_factory):
    f = velocity_features(seq_factory([0, 1, 3], [0, 0, 0], [0, 0.5, 1.0]))
    assert f.channels.tolist() == [[2.0, 4.0], [0.0, 0.0]]
    assert f.channel_names == ("vx", "vy")


def test_velocity_stationary_pen(seq_factory):
    t = np.cumsum(np.random.default_rng(0).uniform(0.001, 0.01, 50))
    f = velocity_features(seq_factory(np.full(50, 3.0), np.full(50, -2.0), t))
    assert np.all(f.channels == 0)


def test_velocity_one_step_at_240hz(seq_factory):
    f = velocity_features(seq_factory([0, 1], [0, 0], [0, 1 / 240]))
    assert f.channels[0, 0] == pytest.approx(240.0, rel=1e-12)


def test_velocity_passthrough_and_length(seq_factory):
    n = 9
    p = np.linspace(1, 2, n)
    f = velocity_features(seq_factory(np.arange(n), np.arange(n), np.arange(n), p=p), ("vx", "p"))
    assert f.channels.shape == (2, n - 1)
    assert np.array_equal(f.channels[1], p[1:])


def test_velocity_rejects_zero_dt(seq_factory):
    with pytest.raises(NumericError):
        velocity_features(seq_factory([0, 1, 2], [0, 0, 0], [0, 1, 1]))


@pytest.mark.parametrize(
    "values, expected",
    [([1, 2, 3], [0, 0.5, 1]), ([5, 5, 5], [0, 0, 0]), ([-2, 0, 2], [0, 0.5, 1])],
)
def test_minmax(values, expected):
    assert minmax_normalize(series(values)).channels[0].tolist() == expected


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40))
@settings(max_examples=100, deadline=None)
def test_minmax_idempotent_and_bounded(values):
    once = minmax_normalize(series(values)).channels
    twice = minmax_normalize(series(once)).channels
    assert np.all((once >= 0) & (once <= 1))
    np.testing.assert_allclose(twice, once, rtol=1e-12, atol=1e-12)


def test_segment_offsets():
    patches = segment(series(np.arange(10.0)), 4, 2)
    assert [p.source_offset for p in patches] == [0, 2, 4, 6]


def test_segment_exact_fit_and_short():
    assert [p.source_offset for p in segment(series(np.zeros(128)), 128, 7)] == [0]
    assert segment(series(np.zeros(5)), 8, 1) == []


@given(st.integers(1, 300), st.integers(1, 300), st.integers(1, 50))
@settings(max_examples=200, deadline=None)
def test_segment_count_and_slices(length, w, s):
    data = np.random.default_rng(length).normal(size=(2, length))
    patches = segment(series(data), w, s)
    expected = (length - w) // s + 1 if length >= w else 0
    assert len(patches) == expected
    for p in patches:
        assert np.array_equal(p.data, data[:, p.source_offset : p.source_offset + w])


def brute_min_stride(length, w, target, base):
    # Smallest stride >= base whose patch count fits under target.
    return next(s for s in range(base, length + 2) if patch_count(length, w, s) <= target)


def test_balancing_symmetric_classes():
    a = [series(np.zeros(300), "HC", f"h{i}") for i in range(3)]
    b = [series(np.zeros(300), "PD", f"p{i}") for i in range(3)]
    plans = plan_balanced_strides(a + b, 128, 8)
    assert all(p.stride == 8 for p in plans)


def test_balancing_two_sequence_example():
    plans = plan_balanced_strides([series(np.zeros(256), "HC"), series(np.zeros(512), "PD")], 128, 8)
    assert plans[0] == SegmentationPlan(8, 17)
    expected = brute_min_stride(512, 128, 17, 8)
    assert expected == 23
    assert plans[1].stride == expected and plans[1].expected_count == 17


@given(
    st.lists(st.integers(130, 1500), min_size=1, max_size=8),
    st.lists(st.integers(130, 1500), min_size=1, max_size=8),
    st.integers(1, 16),
)
@settings(max_examples=100, deadline=None)
def test_balancing_properties(hc_lengths, pd_lengths, base):
    s = [series(np.zeros(n), "HC", f"h{i}") for i, n in enumerate(hc_lengths)]
    s += [series(np.zeros(n), "PD", f"p{i}") for i, n in enumerate(pd_lengths)]
    try:
        plans = plan_balanced_strides(s, 128, base)
    except BalancingError:
        return
    tot = {"HC": 0, "PD": 0}
    for ser, plan in zip(s, plans):
        assert plan.stride >= base
        assert plan.expected_count == patch_count(len(ser), 128, plan.stride)
        tot[ser.label] += plan.expected_count
    base_tot = {
        lab: sum(patch_count(len(x), 128, base) for x in s if x.label == lab) for lab in tot
    }
    minority = min(("HC", "PD"), key=lambda k: (base_tot[k], k != "HC"))
    for ser, plan in zip(s, plans):
        if ser.label == minority:
            assert plan.stride == base
    assert tot[minority] == base_tot[minority]
    assert tot[minority] >= max(tot.values()) or tot["HC"] == tot["PD"]


def test_balancing_unreachable():
    s = [series(np.zeros(130), "HC")] + [series(np.zeros(130), "PD", f"p{i}") for i in range(5)]
    with pytest.raises(BalancingError, match="base_stride"):
        plan_balanced_strides(s, 128, 100)


def test_balancing_needs_each_class():
    with pytest.raises(BalancingError):
        plan_balanced_strides([series(np.zeros(50), "HC"), series(np.zeros(500), "PD")], 128, 8)


def test_patch_set_roundtrip(tmp_path, small_corpus):
    train, _ = small_corpus
    ps = prepare_training_patches(train, window=32, base_stride=8)
    save_patch_set(ps, tmp_path / "p")
    back = load_patch_set(tmp_path / "p")
    assert np.array_equal(back.X, ps.X)
    assert np.array_equal(back.y, ps.y)
    assert back.sequence_ids == ps.sequence_ids
    assert back.strides == ps.strides
    assert np.all((ps.X >= 0) & (ps.X <= 1))


def test_build_patch_set_order():
    s1, s2 = series(np.arange(20.0), "HC", "a"), series(np.arange(12.0), "PD", "b")
    ps = build_patch_set([s1, s2], 8, [4, 2], ("c0",))
    assert ps.sequence_ids == ["a"] * 4 + ["b"] * 3
    assert ps.offsets.tolist() == [0, 4, 8, 12, 0, 2, 4]
