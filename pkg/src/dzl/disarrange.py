"""Frame shuffling with automatic displacement labels, plus order diagnostics.

A disarrangement selects ``round(theta*T)`` positions (half rounded up) and
deranges them: every selected position receives a frame from a different
selected position, every other position keeps its frame. The label of a
position is 1 exactly when its frame moved.

The diagnostics count, for a next-frame model, how often its most probable
successor is the true frame (sequence intensity) or the frame the shuffle
put there (reorder difficulty).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Protocol, Sequence

import numpy as np

from .video_io import VideoClip


def shuffle_count(T, theta):
    """``round(theta * T)`` with halves rounded up, computed in decimal."""
    return int((Decimal(repr(float(theta))) * T).quantize(Decimal(1), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class DisarrangeRecord:
    """``permutation[t]`` is where the frame at position ``t`` is moved to."""

    T: int
    theta: float
    seed: int
    selected: tuple
    permutation: tuple

    @property
    def labels(self):
        perm = np.asarray(self.permutation)
        return (perm != np.arange(self.T)).astype(np.int64)

    @property
    def alpha(self):
        return int(self.T - int(self.labels.sum()))

    @property
    def order(self):
        """Source index of the frame shown at each output position."""
        return np.argsort(np.asarray(self.permutation), kind="stable")

    def inverse(self):
        return DisarrangeRecord(self.T, self.theta, self.seed, self.selected, tuple(self.order.tolist()))

    def to_dict(self):
        return {
            "T": self.T,
            "theta": self.theta,
            "seed": self.seed,
            "selected": list(self.selected),
            "permutation": list(self.permutation),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        return cls.from_permutation(d["permutation"], theta=d.get("theta", 0.5), seed=d.get("seed", 0))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_permutation(cls, permutation, theta=0.5, seed=0):
        perm = np.asarray(permutation, dtype=np.int64)
        T = perm.size
        if sorted(perm.tolist()) != list(range(T)):
            raise ValueError("permutation must be a bijection on 0..T-1")
        selected = tuple(int(t) for t in np.flatnonzero(perm != np.arange(T)))
        return cls(T, float(theta), int(seed), selected, tuple(int(p) for p in perm))


def make_disarrangement(T, theta=0.5, seed=0):
    """Seeded random disarrangement of ``T`` positions.

    The selected subset is uniform among subsets of size ``round(theta*T)``;
    the shuffle on it is a uniform derangement drawn by rejection.
    """
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0, 1], got {theta}")
    n = shuffle_count(T, theta)
    if n < 2:
        raise ValueError(f"round(theta*T) = {n} < 2: no derangement exists")
    rng = np.random.default_rng(seed)
    selected = np.sort(rng.choice(T, size=n, replace=False))
    while True:
        p = rng.permutation(n)
        if not np.any(p == np.arange(n)):
            break
    perm = np.arange(T)
    perm[selected] = selected[p]
    return DisarrangeRecord(int(T), float(theta), int(seed), tuple(selected.tolist()), tuple(perm.tolist()))


def apply_disarrangement(clip, rec):
    """Move the frame at position ``t`` to position ``rec.permutation[t]``."""
    frames = clip.frames if isinstance(clip, VideoClip) else np.asarray(clip)
    if len(frames) != rec.T:
        raise ValueError(f"length mismatch: clip has {len(frames)} frames, record expects {rec.T}")
    if isinstance(clip, VideoClip):
        return clip.reordered(rec.order)
    return frames[rec.order]


class NextFrameModel(Protocol):
    """Scores every frame of ``clip`` as the successor of ``context``.

    ``context`` lists the original indices of the frames seen so far. The
    result is a nonnegative array of length ``T``; only its argmax matters,
    so it need not be normalised.
    """

    def next_frame_scores(self, clip, context: Sequence[int]) -> np.ndarray: ...


def _strict_argmax(scores):
    scores = np.asarray(scores, dtype=np.float64)
    if np.any(scores < 0) or not np.all(np.isfinite(scores)):
        raise ValueError("next-frame scores must be finite and nonnegative")
    best = int(np.argmax(scores))
    if np.count_nonzero(scores == scores[best]) > 1:
        return -1
    return best


def order_indicators(model, clip, rec=None):
    """Per-position (Tindex, Findex) indicator arrays of length T.

    At position ``t`` the model sees the frames before ``t`` in the
    (possibly shuffled) video. Tindex is 1 when its strict argmax is
    original frame ``t``; Findex when it is the frame actually shown at
    ``t``. Ties score 0 for both.
    """
    T = len(clip)
    order = np.arange(T) if rec is None else rec.order
    tindex = np.zeros(T, dtype=np.int64)
    findex = np.zeros(T, dtype=np.int64)
    for t in range(T):
        pick = _strict_argmax(model.next_frame_scores(clip, order[:t].tolist()))
        tindex[t] = pick == t
        findex[t] = pick == order[t]
    return tindex, findex


def _positions(T, positions):
    return np.arange(1, T) if positions is None else np.asarray(positions, dtype=np.int64)


def sequence_intensity(model, clip, rec=None, positions=None):
    """Count of positions whose true next frame is the model's strict argmax.

    Without ``rec`` the model reads the clip in time order; positions
    default to ``1..T-1``.
    """
    tindex, _ = order_indicators(model, clip, rec)
    return int(tindex[_positions(len(clip), positions)].sum())


def reorder_difficulty(model, clip, rec, positions=None):
    _, findex = order_indicators(model, clip, rec)
    return int(findex[_positions(len(clip), positions)].sum())


def lemma_residual(model, clip, rec):
    """``T - alpha - reorder_difficulty - sequence_intensity`` over shuffled positions.

    Zero when the model's choice at every shuffled position is either the
    true or the shuffled successor; positive by the number of positions
    where it picks some third frame or ties.
    """
    if len(clip) != rec.T:
        raise ValueError(f"length mismatch: clip has {len(clip)} frames, record expects {rec.T}")
    tindex, findex = order_indicators(model, clip, rec)
    sel = np.asarray(rec.selected, dtype=np.int64)
    return int(rec.T - rec.alpha - findex[sel].sum() - tindex[sel].sum())
