"""Effective-zone selection and per-step flow features.

The zone is the set of pixels whose flow magnitude varies most over time
(variance above a nearest-rank percentile). A seeded random subset of
``k`` of them is tracked; each flow step becomes the vector
``[dx(p1..pk), dy(p1..pk)]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_flow_stack

STD_FLOOR = 1e-9


class ZoneSelectionError(ValueError):
    """No pixel exceeds the variance threshold (e.g. a static clip)."""


@dataclass(frozen=True)
class ZoneSpec:
    points: tuple  # ((x, y), ...)
    seed: int
    percentile: float
    eligible_count: int
    threshold: float = 0.0
    requested_k: int = 0

    @property
    def k(self):
        return len(self.points)

    @property
    def shortfall(self):
        return max(0, self.requested_k - self.k)

    def to_dict(self):
        return {
            "points": [list(p) for p in self.points],
            "seed": self.seed,
            "percentile": self.percentile,
            "eligible_count": self.eligible_count,
            "threshold": self.threshold,
            "requested_k": self.requested_k,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(
            points=tuple((int(x), int(y)) for x, y in d["points"]),
            seed=int(d["seed"]),
            percentile=float(d["percentile"]),
            eligible_count=int(d["eligible_count"]),
            threshold=float(d.get("threshold", 0.0)),
            requested_k=int(d.get("requested_k", len(d["points"]))),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class FeatureSequence:
    steps: np.ndarray  # (S, 2k)
    zone: ZoneSpec
    mean: np.ndarray = field(default=None)
    std: np.ndarray = field(default=None)

    def __len__(self):
        return self.steps.shape[0]


def magnitude_variance_map(flows):
    """Per-pixel population variance of flow magnitude across the fields."""
    stack = check_flow_stack(flows, min_count=2)
    mag = np.hypot(stack[..., 0], stack[..., 1])
    return mag.var(axis=0)


def nearest_rank(values, percentile):
    """Nearest-rank percentile: the ``ceil(p/100 * n)``-th smallest value."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    rank = max(1, math.ceil(percentile / 100.0 * v.size))
    return v[rank - 1]


def select_effective_points(vmap, percentile=80.0, k=100, seed=0):
    """Draw ``k`` distinct pixels whose variance is strictly above the percentile.

    Fewer than ``k`` eligible pixels means all of them are taken; the
    returned spec records the shortfall.
    """
    vmap = np.asarray(vmap, dtype=np.float64)
    if vmap.ndim != 2:
        raise ValueError(f"variance map must be 2-D, got {vmap.shape}")
    if not 0.0 < percentile < 100.0:
        raise ValueError(f"percentile must lie in (0, 100), got {percentile}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    threshold = nearest_rank(vmap, percentile)
    eligible = np.flatnonzero(vmap.ravel() > threshold)
    if eligible.size == 0:
        raise ZoneSelectionError("no pixel exceeds the flow-variance threshold; the clip looks static")
    rng = np.random.default_rng(seed)
    take = min(k, eligible.size)
    chosen = rng.choice(eligible, size=take, replace=False)
    rows, cols = np.divmod(chosen, vmap.shape[1])
    return ZoneSpec(
        points=tuple(zip(cols.tolist(), rows.tolist())),
        seed=int(seed),
        percentile=float(percentile),
        eligible_count=int(eligible.size),
        threshold=float(threshold),
        requested_k=int(k),
    )


def standardize_columns(steps):
    mean = steps.mean(axis=0)
    std = steps.std(axis=0)
    live = std >= STD_FLOOR
    out = np.zeros_like(steps)
    out[:, live] = (steps[:, live] - mean[live]) / std[live]
    return out, mean, std


def extract_features(flows, zone, standardize=True):
    """Read ``[dx..., dy...]`` at the zone points for every flow step."""
    stack = check_flow_stack(flows, min_count=1)
    h, w = stack.shape[1:3]
    pts = np.asarray(zone.points, dtype=np.int64).reshape(-1, 2)
    xs, ys = pts[:, 0], pts[:, 1]
    if np.any((xs < 0) | (xs >= w) | (ys < 0) | (ys >= h)):
        raise ValueError(f"zone point out of bounds for {w}x{h} flow fields")
    sampled = stack[:, ys, xs, :]  # (S, k, 2)
    steps = np.concatenate([sampled[..., 0], sampled[..., 1]], axis=1)
    if not standardize:
        return FeatureSequence(steps, zone)
    steps, mean, std = standardize_columns(steps)
    return FeatureSequence(steps, zone, mean, std)


class EffectiveZone(TransformerMixin, BaseEstimator):
    """Fit a zone on one clip's flows, then turn flow stacks into features.

    ``fit`` takes the (T-1, H, W, 2) flows of the reference (time-ordered)
    clip; ``transform`` takes flows from any ordering of the same clip.
    """

    def __init__(self, percentile=80.0, k=100, random_state=0, standardize=True):
        self.percentile = percentile
        self.k = k
        self.random_state = random_state
        self.standardize = standardize

    def fit(self, flows, y=None):
        self.variance_map_ = magnitude_variance_map(flows)
        self.zone_ = select_effective_points(self.variance_map_, self.percentile, self.k, self.random_state)
        self.n_features_out_ = 2 * self.zone_.k
        return self

    def extract(self, flows):
        check_is_fitted(self, "zone_")
        return extract_features(flows, self.zone_, self.standardize)

    def transform(self, flows):
        return self.extract(flows).steps
