import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from dzl.disarrange import (
    DisarrangeRecord,
    apply_disarrangement,
    lemma_residual,
    make_disarrangement,
    order_indicators,
    reorder_difficulty,
    sequence_intensity,
    shuffle_count,
)
from dzl.video_io import VideoClip


class TableModel:
    """Next-frame model that returns a fixed score row per context length."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=float)

    def next_frame_scores(self, clip, context):
        return self.table[len(context)]


class PerfectModel:
    def next_frame_scores(self, clip, context):
        s = np.zeros(len(clip))
        s[len(context)] = 1.0
        return s


class UniformModel:
    def next_frame_scores(self, clip, context):
        return np.ones(len(clip))


def clip_of(T):
    return VideoClip(np.linspace(0, 1, T)[:, None, None] * np.ones((T, 8, 8)))


def test_shuffle_count_round_half_up():
    assert shuffle_count(3, 0.5) == 2
    assert shuffle_count(5, 0.5) == 3
    assert shuffle_count(24, 0.5) == 12
    assert shuffle_count(10, 0.25) == 3


def test_t3_swap():
    rec = make_disarrangement(3, 0.5, seed=0)
    assert rec.labels.sum() == 2
    a, b = rec.selected
    assert rec.permutation[a] == b and rec.permutation[b] == a


def test_first_and_third_exchanged():
    rec = DisarrangeRecord.from_permutation([2, 1, 0])
    assert rec.labels.tolist() == [1, 0, 1]


def test_swap_0_2_output_order():
    rec = DisarrangeRecord.from_permutation([2, 1, 0, 3])
    frames = np.arange(4)[:, None, None] * np.ones((4, 8, 8)) / 4
    out = apply_disarrangement(VideoClip(frames), rec)
    assert [round(f[0, 0] * 4) for f in out.frames] == [2, 1, 0, 3]


def test_too_few_selected():
    with pytest.raises(ValueError):
        make_disarrangement(4, 0.1, 0)
    with pytest.raises(ValueError):
        make_disarrangement(4, 0.0, 0)


@settings(max_examples=100, deadline=None)
@given(T=st.integers(4, 40), theta=st.floats(0.3, 1.0), seed=st.integers(0, 2**31))
def test_record_invariants(T, theta, seed):
    assume(shuffle_count(T, theta) >= 2)
    rec = make_disarrangement(T, theta, seed)
    perm = np.asarray(rec.permutation)
    assert sorted(perm.tolist()) == list(range(T))
    sel = np.asarray(rec.selected)
    assert len(sel) == shuffle_count(T, theta)
    assert np.all(perm[sel] != sel)
    rest = np.setdiff1d(np.arange(T), sel)
    assert np.all(perm[rest] == rest)
    assert rec.labels.sum() == len(sel) and rec.alpha == T - len(sel)
    assert rec == make_disarrangement(T, theta, seed)
    assert DisarrangeRecord.from_json(rec.to_json()) == rec


@settings(max_examples=30, deadline=None)
@given(T=st.integers(4, 12), seed=st.integers(0, 2**31))
def test_apply_then_inverse_restores(T, seed):
    rec = make_disarrangement(T, 0.5, seed)
    clip = VideoClip(np.random.default_rng(seed).random((T, 8, 8)))
    out = apply_disarrangement(clip, rec)
    assert out != clip
    assert apply_disarrangement(out, rec.inverse()) == clip


def test_apply_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        apply_disarrangement(clip_of(5), make_disarrangement(6, 0.5, 0))


def test_selected_subset_is_uniform():
    counts = np.zeros(6)
    for s in range(3000):
        counts[list(make_disarrangement(6, 0.5, s).selected)] += 1
    assert np.all(np.abs(counts / 3000 - 0.5) < 0.05)


def test_sequence_intensity_cases():
    clip = clip_of(6)
    assert sequence_intensity(PerfectModel(), clip) == 5
    assert sequence_intensity(UniformModel(), clip) == 0
    adversarial = TableModel(np.eye(6)[[1, 2, 3, 4, 5, 0]])
    assert sequence_intensity(adversarial, clip) == 0


def test_reorder_difficulty_follows_shuffle():
    rec = DisarrangeRecord.from_permutation([2, 1, 0, 3, 5, 4])
    clip = clip_of(6)
    follower = TableModel(np.eye(6)[rec.order])
    assert reorder_difficulty(follower, clip, rec, positions=rec.selected) == 4
    tindex, findex = order_indicators(PerfectModel(), clip, rec)
    unshuffled = [1, 3]
    assert np.array_equal(tindex[unshuffled], findex[unshuffled])


def test_third_frame_gives_residual_one():
    rec = DisarrangeRecord.from_permutation([2, 1, 0, 3])
    table = np.eye(4)
    table[2] = [0, 0, 0, 1]  # at shuffled position 2 pick frame 3: neither 2 nor 0
    assert lemma_residual(TableModel(table), clip_of(4), rec) == 1
    assert lemma_residual(PerfectModel(), clip_of(4), rec) == 0


def test_ties_score_zero():
    rec = DisarrangeRecord.from_permutation([1, 0, 2, 3])
    tindex, findex = order_indicators(UniformModel(), clip_of(4), rec)
    assert not tindex.any() and not findex.any()
    assert lemma_residual(UniformModel(), clip_of(4), rec) == 2


def test_negative_scores_rejected():
    with pytest.raises(ValueError):
        sequence_intensity(TableModel(-np.ones((4, 4))), clip_of(4))


@settings(max_examples=60, deadline=None)
@given(T=st.integers(4, 12), seed=st.integers(0, 2**31), two=st.booleans())
def test_lemma_properties(T, seed, two):
    rng = np.random.default_rng(seed)
    rec = make_disarrangement(T, 0.5, seed)
    table = rng.random((T, T))
    if two:
        order = rec.order
        for t in range(T):
            keep = {t, int(order[t])}
            for j in range(T):
                if j not in keep:
                    table[t, j] = 0.0
            if len(keep) == 2:
                a, b = sorted(keep)
                table[t, a] = rng.random() + (0.5 if rng.random() < 0.5 else 0.0) + 0.01
                table[t, b] = table[t, a] + 0.25 if rng.random() < 0.5 else table[t, a] / 2
    model = TableModel(table)
    clip = clip_of(T)
    tindex, findex = order_indicators(model, clip, rec)
    sel = list(rec.selected)
    assert not np.any(tindex[sel] * findex[sel])
    r = lemma_residual(model, clip, rec)
    assert r >= 0
    if two:
        assert r == 0
