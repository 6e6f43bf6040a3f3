"""The DZL pipeline as an estimator: shuffle, flow, zone, GRU, accuracy.

``DZLScorer.fit`` trains the encoder-decoder on disarranged copies of the
given clips; no stenosis labels are needed. ``score_samples`` returns, per
clip, the mean accuracy with which the trained model recovers which frames
were displaced, over ``n_repeats`` seeded shuffles. Low scores point to a
stenosis; ``predict`` thresholds them (1 = abnormal).

Within one clip the zone is chosen from the flows of the time-ordered
frames, and features are read at those points from the flows of the
shuffled frame order. Flow step ``s`` (frame ``s`` -> ``s+1`` of the
shuffled clip) is labelled with the displacement bit of frame ``s+1``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .disarrange import make_disarrangement
from .flow import ClipFlowCache, FlowParams
from .metrics import youden_threshold
from .model import SequenceGRUClassifier, forward, load_checkpoint, save_checkpoint
from .video_io import VideoClip
from .zone import ZoneSelectionError, extract_features, magnitude_variance_map, select_effective_points

log = logging.getLogger(__name__)

TRAIN_STREAM = 1
SCORE_STREAM = 2


class ScoringError(RuntimeError):
    pass


def derive_seed(*keys):
    """Deterministic 32-bit seed from a tuple of nonnegative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@dataclass(frozen=True)
class DzlScore:
    clip_id: str
    score: float
    accuracies: tuple
    seed: int
    seeds: tuple

    @property
    def n_repeats(self):
        return len(self.accuracies)


@dataclass(frozen=True)
class StenosisCall:
    score: float
    threshold: float
    call: str


def classify(score, threshold=0.8):
    """``abnormal`` iff ``score < threshold`` (a score equal to it is normal)."""
    value = score.score if isinstance(score, DzlScore) else float(score)
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return StenosisCall(value, float(threshold), "abnormal" if value < threshold else "normal")


def score_report(score, call):
    return {
        "clip": score.clip_id,
        "score": score.score,
        "repeats": list(score.accuracies),
        "call": call.call,
        "threshold": call.threshold,
        "seeds": list(score.seeds),
        "seed": score.seed,
    }


@dataclass
class PreparedClip:
    clip_id: str
    flows: ClipFlowCache
    zone: object
    T: int


class DZLScorer(BaseEstimator):
    """Label-free stenosis scorer for grayscale angiography-like clips.

    Parameters
    ----------
    working_size : int or None
        Frames are resized to ``working_size x working_size`` before flow
        estimation; ``None`` keeps the native size.
    flow_params : FlowParams or None
        Farnebäck settings; ``None`` uses the defaults.
    percentile, zone_k, standardize
        Effective-zone threshold, number of tracked points, and whether
        features are standardised per clip.
    theta : float
        Fraction of frame positions shuffled.
    n_train_shuffles : int
        Disarranged copies of each training clip.
    n_repeats : int
        Shuffles averaged into one score.
    hidden_size, n_layers, learning_rate, epochs, clip_norm, init_scale
        Encoder-decoder GRU and optimiser settings.
    shuffle_points : bool
        Reorder the zone points by a fresh random permutation on every
        training visit (the same one for the dx and dy blocks).
    threshold : float or None
        Call threshold. ``None`` means: calibrate by Youden's J when ``fit``
        receives labels, else 0.5.
    random_state : int
        Master seed; every shuffle, zone and initialisation derives from it.
    """

    def __init__(
        self,
        working_size=512,
        flow_params=None,
        percentile=80.0,
        zone_k=100,
        standardize=True,
        theta=0.5,
        n_train_shuffles=4,
        n_repeats=8,
        hidden_size=64,
        n_layers=2,
        learning_rate=1e-3,
        epochs=100,
        clip_norm=5.0,
        init_scale=0.1,
        shuffle_points=False,
        threshold=None,
        random_state=0,
    ):
        self.working_size = working_size
        self.flow_params = flow_params
        self.percentile = percentile
        self.zone_k = zone_k
        self.standardize = standardize
        self.theta = theta
        self.n_train_shuffles = n_train_shuffles
        self.n_repeats = n_repeats
        self.hidden_size = hidden_size
        self.n_layers = n_layers
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.clip_norm = clip_norm
        self.init_scale = init_scale
        self.shuffle_points = shuffle_points
        self.threshold = threshold
        self.random_state = random_state

    # -- feature preparation ---------------------------------------------------

    def _flow_params(self):
        return self.flow_params if self.flow_params is not None else FlowParams()

    def prepare(self, clip):
        """Resize, build the flow cache and pick the zone from time-ordered flows."""
        if not isinstance(clip, VideoClip):
            clip = VideoClip(np.asarray(clip))
        if self.working_size:
            clip = clip.resized(self.working_size, self.working_size)
        cache = ClipFlowCache(clip, self._flow_params())
        vmap = magnitude_variance_map(cache.sequence())
        try:
            zone = select_effective_points(vmap, self.percentile, self.zone_k, self.random_state)
        except ZoneSelectionError as exc:
            raise ScoringError(f"{clip.source_id or 'clip'}: {exc}") from exc
        if zone.shortfall:
            log.warning("%s: only %d effective points (wanted %d)", clip.source_id, zone.k, self.zone_k)
        return PreparedClip(clip.source_id, cache, zone, len(clip))

    def _zone_padded(self, prepared, features):
        """Pad feature rows with zero columns up to ``2*zone_k`` when a zone came up short."""
        width = 2 * self.zone_k
        if features.shape[1] == width:
            return features
        k = prepared.zone.k
        out = np.zeros((features.shape[0], width))
        out[:, :k] = features[:, :k]
        out[:, self.zone_k : self.zone_k + k] = features[:, k:]
        return out

    def examples(self, prepared, seeds):
        """(features, labels) for one disarrangement of ``prepared`` per seed."""
        out = []
        for s in seeds:
            rec = make_disarrangement(prepared.T, self.theta, s)
            flows = prepared.flows.sequence(rec.order)
            feats = extract_features(flows, prepared.zone, self.standardize).steps
            out.append((self._zone_padded(prepared, feats), rec.labels[1:].copy()))
        return out

    def train_seeds(self, clip_index):
        return [derive_seed(self.random_state, TRAIN_STREAM, clip_index, j) for j in range(self.n_train_shuffles)]

    def repeat_seeds(self, seed=None):
        seed = self.random_state if seed is None else seed
        return [derive_seed(seed, SCORE_STREAM, r) for r in range(self.n_repeats)]

    def training_examples(self, clips):
        per_clip = []
        for i, clip in enumerate(clips):
            prepared = self.prepare(clip)
            per_clip.append(self.examples(prepared, self.train_seeds(i)))
            log.info("prepared training clip %d/%d", i + 1, len(clips))
        return per_clip

    def scoring_examples(self, clip, seed=None):
        prepared = self.prepare(clip)
        return prepared.clip_id, self.examples(prepared, self.repeat_seeds(seed))

    # -- estimator API -----------------------------------------------------------

    def _classifier(self):
        return SequenceGRUClassifier(
            hidden_size=self.hidden_size,
            n_layers=self.n_layers,
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            clip_norm=self.clip_norm,
            init_scale=self.init_scale,
            point_blocks=2 if self.shuffle_points else 0,
            random_state=self.random_state,
        )

    def fit(self, X, y=None, callback=None):
        """Train on disarranged copies of the clips in ``X``.

        ``y`` (1 = abnormal) is optional and only used to calibrate the call
        threshold from the per-clip accuracies on the training shuffles.
        """
        clips = list(X)
        if not clips:
            raise ValueError("empty training set")
        per_clip = self.training_examples(clips)
        return self.fit_examples(per_clip, y, callback=callback)

    def fit_examples(self, per_clip, y=None, callback=None):
        """Train from precomputed ``training_examples`` output."""
        flat = [ex for group in per_clip for ex in group]
        model = self._classifier()
        model.fit([f for f, _ in flat], [l for _, l in flat], callback=callback)
        self.model_ = model
        self.history_ = model.history_
        self.n_features_in_ = 2 * self.zone_k
        if self.threshold is not None:
            self.threshold_ = float(self.threshold)
        elif y is not None:
            train_scores = [self.score_examples(group)[0] for group in per_clip]
            self.threshold_ = youden_threshold(np.asarray(y), train_scores)
        else:
            self.threshold_ = 0.5
        return self

    def score_examples(self, examples, params=None):
        """Mean accuracy over ``examples``; also returns the per-example accuracies."""
        if params is None:
            check_is_fitted(self, "model_")
            params = self.model_.params_
        accs = [float(np.mean(forward(f, params).labels == l)) for f, l in examples]
        return float(np.mean(accs)), accs

    def dzl_score(self, clip, seed=None):
        check_is_fitted(self, "model_")
        seed = self.random_state if seed is None else seed
        clip_id, examples = self.scoring_examples(clip, seed)
        score, accs = self.score_examples(examples)
        return DzlScore(clip_id, score, tuple(accs), int(seed), tuple(self.repeat_seeds(seed)))

    def score_samples(self, X):
        return np.array([self.dzl_score(clip).score for clip in X])

    def predict(self, X):
        check_is_fitted(self, "threshold_")
        return (self.score_samples(X) < self.threshold_).astype(np.int64)

    # -- persistence ----------------------------------------------------------------

    def config_dict(self):
        params = self.get_params()
        params["flow_params"] = self._flow_params().to_dict()
        return params

    def save(self, path, extra=None):
        check_is_fitted(self, "model_")
        header = {"scorer": self.config_dict(), "threshold_": self.threshold_, "history": self.history_}
        if extra:
            header.update(extra)
        save_checkpoint(path, self.model_.params_, header)

    @classmethod
    def load(cls, path):
        params, header = load_checkpoint(path)
        cfg = dict(header["scorer"])
        cfg["flow_params"] = FlowParams.from_dict(cfg["flow_params"])
        scorer = cls(**cfg)
        if params.input_dim != 2 * scorer.zone_k:
            raise ScoringError(
                f"dimension mismatch: checkpoint has {params.input_dim} inputs, zone_k={scorer.zone_k} needs {2 * scorer.zone_k}"
            )
        model = scorer._classifier()
        model.params_ = params
        model.classes_ = np.arange(2)
        model.n_features_in_ = params.input_dim
        model.history_ = header.get("history", [])
        scorer.model_ = model
        scorer.history_ = model.history_
        scorer.threshold_ = float(header.get("threshold_", 0.5))
        scorer.n_features_in_ = params.input_dim
        return scorer, header

    def to_json(self):
        return json.dumps(self.config_dict(), sort_keys=True)
