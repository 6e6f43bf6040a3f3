"""Encoder-decoder GRU for per-step "was this frame displaced?" prediction.

Everything is plain numpy in float64 with hand-written backpropagation
through time. One sequence is processed at a time, so sequences of any
length can be mixed without padding.

Architecture (``L`` layers, hidden size ``H``, feature size ``D``):

* encoder: stacked GRU from zero state over the features; the context
  ``C`` is the final hidden state of each layer, shape ``(L, H)``;
* decoder: stacked GRU started from ``C``; its first layer reads
  ``concat(x_t, C[-1])`` at every step;
* head: ``logits_t = W_out @ h_t + b_out`` on the top decoder state,
  softmax over (not displaced, displaced).

GRU step::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    hc = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * hc

Parameter order (used for initialisation and checkpoints): encoder layers
bottom-up, then decoder layers bottom-up, each as ``W (3, H, in)``,
``U (3, H, H)``, ``b (3, H)`` with gates stacked ``z, r, h``; then
``W_out (2, H)`` and ``b_out (2,)``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_labels, check_positive, check_sequence

N_CLASSES = 2


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


@dataclass
class GruLayerParams:
    W: np.ndarray  # (3, H, D)
    U: np.ndarray  # (3, H, H)
    b: np.ndarray  # (3, H)

    @property
    def input_dim(self):
        return self.W.shape[2]

    @property
    def hidden_dim(self):
        return self.W.shape[1]

    W_z = property(lambda self: self.W[0])
    W_r = property(lambda self: self.W[1])
    W_h = property(lambda self: self.W[2])
    U_z = property(lambda self: self.U[0])
    U_r = property(lambda self: self.U[1])
    U_h = property(lambda self: self.U[2])
    b_z = property(lambda self: self.b[0])
    b_r = property(lambda self: self.b[1])
    b_h = property(lambda self: self.b[2])

    @classmethod
    def zeros(cls, input_dim, hidden_dim):
        return cls(
            np.zeros((3, hidden_dim, input_dim)),
            np.zeros((3, hidden_dim, hidden_dim)),
            np.zeros((3, hidden_dim)),
        )

    def arrays(self):
        return [self.W, self.U, self.b]


@dataclass
class EncoderDecoderParams:
    encoder: list
    decoder: list
    W_out: np.ndarray
    b_out: np.ndarray

    @property
    def n_layers(self):
        return len(self.encoder)

    @property
    def hidden_dim(self):
        return self.encoder[0].hidden_dim

    @property
    def input_dim(self):
        return self.encoder[0].input_dim

    @classmethod
    def zeros(cls, input_dim, hidden_dim, n_layers=1):
        if n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        enc = [GruLayerParams.zeros(input_dim if l == 0 else hidden_dim, hidden_dim) for l in range(n_layers)]
        dec = [GruLayerParams.zeros(input_dim + hidden_dim if l == 0 else hidden_dim, hidden_dim) for l in range(n_layers)]
        return cls(enc, dec, np.zeros((N_CLASSES, hidden_dim)), np.zeros(N_CLASSES))

    @classmethod
    def init_uniform(cls, input_dim, hidden_dim, n_layers=1, scale=0.1, seed=0):
        p = cls.zeros(input_dim, hidden_dim, n_layers)
        rng = np.random.default_rng(seed)
        for a in p.arrays():
            a[...] = rng.uniform(-scale, scale, size=a.shape)
        return p

    def arrays(self):
        out = []
        for layer in self.encoder + self.decoder:
            out.extend(layer.arrays())
        out.extend([self.W_out, self.b_out])
        return out

    def named_arrays(self):
        names = []
        for part, layers in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i in range(len(layers)):
                names += [f"{part}.{i}.W", f"{part}.{i}.U", f"{part}.{i}.b"]
        names += ["W_out", "b_out"]
        return list(zip(names, self.arrays()))

    def copy(self):
        return self.from_flat(self.flat(), self.input_dim, self.hidden_dim, self.n_layers)

    def zeros_like(self):
        return EncoderDecoderParams.zeros(self.input_dim, self.hidden_dim, self.n_layers)

    def flat(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, vec, input_dim, hidden_dim, n_layers):
        p = cls.zeros(input_dim, hidden_dim, n_layers)
        vec = np.asarray(vec, dtype=np.float64)
        sizes = [a.size for a in p.arrays()]
        if vec.size != sum(sizes):
            raise CheckpointError(f"expected {sum(sizes)} parameters, got {vec.size}")
        i = 0
        for a in p.arrays():
            a[...] = vec[i : i + a.size].reshape(a.shape)
            i += a.size
        return p


def gru_cell(x, h_prev, p):
    """One GRU step for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x.shape != (p.input_dim,) or h_prev.shape != (p.hidden_dim,):
        raise ValueError(
            f"dimension mismatch: x {x.shape}, h {h_prev.shape} for layer ({p.input_dim} -> {p.hidden_dim})"
        )
    z = _sigmoid(p.W_z @ x + p.U_z @ h_prev + p.b_z)
    r = _sigmoid(p.W_r @ x + p.U_r @ h_prev + p.b_r)
    hc = np.tanh(p.W_h @ x + p.U_h @ (r * h_prev) + p.b_h)
    return (1.0 - z) * h_prev + z * hc


def _layer_forward(p, X, h0):
    S = X.shape[0]
    H = p.hidden_dim
    ax = X @ p.W.reshape(3 * H, -1).T + p.b.reshape(-1)
    U_zr = p.U[:2].reshape(2 * H, H)
    U_h = p.U[2]
    hs = np.empty((S, H))
    zs, rs, hcs, hps, rhs = (np.empty((S, H)) for _ in range(5))
    h = h0
    for t in range(S):
        zr = _sigmoid(ax[t, : 2 * H] + U_zr @ h)
        z, r = zr[:H], zr[H:]
        rh = r * h
        hc = np.tanh(ax[t, 2 * H :] + U_h @ rh)
        hps[t] = h
        h = h + z * (hc - h)
        zs[t], rs[t], hcs[t], rhs[t], hs[t] = z, r, hc, rh, h
    return hs, (X, zs, rs, hcs, hps, rhs)


def _layer_backward(p, cache, dhs, dh_last):
    X, zs, rs, hcs, hps, rhs = cache
    S, H = zs.shape
    U_zr_T = p.U[:2].reshape(2 * H, H).T
    U_h_T = p.U[2].T
    da = np.empty((S, 3 * H))
    dh_next = dh_last.copy()
    for t in range(S - 1, -1, -1):
        dh = dhs[t] + dh_next
        z, r, hc, hp = zs[t], rs[t], hcs[t], hps[t]
        da_h = dh * z * (1.0 - hc * hc)
        d_rh = U_h_T @ da_h
        da_z = dh * (hc - hp) * z * (1.0 - z)
        da_r = d_rh * hp * r * (1.0 - r)
        da[t, :H], da[t, H : 2 * H], da[t, 2 * H :] = da_z, da_r, da_h
        dh_next = dh * (1.0 - z) + d_rh * r + U_zr_T @ da[t, : 2 * H]
    grad = GruLayerParams(
        (da.T @ X).reshape(3, H, -1),
        np.concatenate([(da[:, : 2 * H].T @ hps).reshape(2, H, H), (da[:, 2 * H :].T @ rhs)[None]]),
        da.sum(axis=0).reshape(3, H),
    )
    dX = da @ p.W.reshape(3 * H, -1)
    return grad, dX, dh_next


def _encode(X, p):
    caches, context = [], []
    inp = X
    for layer in p.encoder:
        hs, cache = _layer_forward(layer, inp, np.zeros(layer.hidden_dim))
        caches.append(cache)
        context.append(hs[-1])
        inp = hs
    return inp, np.stack(context), caches


def _decode(X, C, p):
    S = X.shape[0]
    inp = np.concatenate([X, np.broadcast_to(C[-1], (S, C.shape[1]))], axis=1)
    caches = []
    for l, layer in enumerate(p.decoder):
        inp, cache = _layer_forward(layer, inp, C[l])
        caches.append(cache)
    logits = inp @ p.W_out.T + p.b_out
    return logits, inp, caches


def _check_dims(X, p):
    if X.shape[1] != p.input_dim:
        raise ValueError(f"dimension mismatch: features have {X.shape[1]} dims, model expects {p.input_dim}")


def _steps(seq):
    return check_sequence(getattr(seq, "steps", seq))


def encode(seq, p):
    """Run the encoder; returns per-step top-layer outputs and the (L, H) context."""
    X = _steps(seq)
    _check_dims(X, p)
    outputs, C, _ = _encode(X, p)
    return outputs, C


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class StepPrediction:
    """Per-step logits with their softmax and argmax, shape (S, 2) / (S,)."""

    logits: np.ndarray
    proba: np.ndarray = field(init=False)
    labels: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "proba", softmax(self.logits))
        object.__setattr__(self, "labels", np.argmax(self.logits, axis=-1))

    @property
    def p_displaced(self):
        return self.proba[:, 1]

    def __len__(self):
        return self.logits.shape[0]


def decode(seq, C, p):
    X = _steps(seq)
    _check_dims(X, p)
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (p.n_layers, p.hidden_dim):
        raise ValueError(f"dimension mismatch: context {C.shape}, expected {(p.n_layers, p.hidden_dim)}")
    logits, _, _ = _decode(X, C, p)
    return StepPrediction(logits)


def forward(seq, p):
    X = _steps(seq)
    _check_dims(X, p)
    _, C, _ = _encode(X, p)
    return StepPrediction(_decode(X, C, p)[0])


def loss(preds, labels):
    """Mean softmax cross-entropy over steps."""
    logits = preds.logits if isinstance(preds, StepPrediction) else np.asarray(preds, dtype=np.float64)
    y = check_labels(labels, logits.shape[0])
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(y)), y].mean())


def loss_and_gradients(seq, labels, p):
    """Loss and exact gradients (an ``EncoderDecoderParams`` of the same shapes)."""
    value, g, _ = _loss_grad_logits(seq, labels, p)
    return value, g


def _loss_grad_logits(seq, labels, p):
    X = _steps(seq)
    _check_dims(X, p)
    y = check_labels(labels, X.shape[0])
    S = X.shape[0]
    _, C, enc_caches = _encode(X, p)
    logits, top, dec_caches = _decode(X, C, p)
    proba = softmax(logits)
    value = float(-np.log(np.maximum(proba[np.arange(S), y], 1e-300)).mean())

    g = p.zeros_like()
    dlogits = proba.copy()
    dlogits[np.arange(S), y] -= 1.0
    dlogits /= S
    g.W_out[...] = dlogits.T @ top
    g.b_out[...] = dlogits.sum(axis=0)

    L, H, D = p.n_layers, p.hidden_dim, p.input_dim
    dC = np.zeros((L, H))
    dhs = dlogits @ p.W_out
    for l in range(L - 1, -1, -1):
        grad, dX, dh0 = _layer_backward(p.decoder[l], dec_caches[l], dhs, np.zeros(H))
        g.decoder[l] = grad
        dC[l] += dh0
        dhs = dX
    dC[-1] += dhs[:, D:].sum(axis=0)

    dhs = np.zeros((S, H))
    for l in range(L - 1, -1, -1):
        grad, dX, _ = _layer_backward(p.encoder[l], enc_caches[l], dhs, dC[l])
        g.encoder[l] = grad
        dhs = dX
    return value, g, logits


def gradients(seq, labels, p):
    return loss_and_gradients(seq, labels, p)[1]


def predict_accuracy(p, seq, labels):
    """Fraction of steps whose argmax class equals the label."""
    pred = forward(seq, p)
    y = check_labels(labels, len(pred))
    return float(np.mean(pred.labels == y))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    hidden_size: int = 64
    n_layers: int = 2
    gradient_clip_norm: float = 5.0
    init_scale: float = 0.1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # if > 0, features are this many blocks of equal width (dx block, dy block)
    # and each visit reorders the columns of every block by one shared random
    # permutation, so the model cannot key on a fixed point order
    point_blocks: int = 0


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in params.arrays()]
        self.v = [np.zeros_like(a) for a in params.arrays()]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for a, g, m, v in zip(params.arrays(), grads.arrays(), self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            a -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_gradients(grads, max_norm):
    arrays = grads.arrays()
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in arrays)))
    if max_norm and norm > max_norm:
        for g in arrays:
            g *= max_norm / norm
    return norm


def train(dataset, cfg=None, params=None, callback=None):
    """Fit encoder-decoder parameters by per-sequence Adam.

    ``dataset`` is a list of ``(sequence, labels)`` pairs. Each epoch visits
    the sequences in an order drawn from the seeded generator. Returns the
    parameters and a list of per-epoch ``{"epoch", "loss", "accuracy"}``
    records (accuracy pooled over all steps, measured during the epoch).
    ``callback(epoch, params, record)`` runs after every epoch.
    """
    cfg = cfg or TrainConfig()
    data = [(_steps(s), np.asarray(y)) for s, y in dataset]
    if not data:
        raise ValueError("empty dataset")
    D = data[0][0].shape[1]
    for X, y in data:
        if X.shape[1] != D:
            raise ValueError("all sequences must share the feature dimension")
        check_labels(y, X.shape[0])
    if params is None:
        params = EncoderDecoderParams.init_uniform(D, cfg.hidden_size, cfg.n_layers, cfg.init_scale, cfg.seed)
    if cfg.point_blocks and D % cfg.point_blocks:
        raise ValueError(f"feature dim {D} is not divisible into {cfg.point_blocks} blocks")
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    aug_rng = np.random.default_rng([cfg.seed, 1])
    history = []
    for epoch in range(1, cfg.epochs + 1):
        total, correct, steps = 0.0, 0, 0
        for i in rng.permutation(len(data)):
            X, y = data[i]
            if cfg.point_blocks:
                k = D // cfg.point_blocks
                perm = aug_rng.permutation(k)
                X = X[:, np.concatenate([perm + b * k for b in range(cfg.point_blocks)])]
            value, grads, logits = _loss_grad_logits(X, y, params)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, sequence {i}")
            clip_gradients(grads, cfg.gradient_clip_norm)
            opt.step(params, grads)
            total += value
            correct += int(np.sum(np.argmax(logits, axis=1) == y))
            steps += len(y)
        record = {"epoch": epoch, "loss": total / len(data), "accuracy": correct / steps}
        history.append(record)
        if callback is not None:
            callback(epoch, params, record)
    return params, history


# -- checkpoints ---------------------------------------------------------------

CKPT_MAGIC = b"DZLC"
CKPT_VERSION = 1
_CKPT_PREFIX = struct.Struct("<4sII")


def save_checkpoint(path, params, header=None):
    """Write ``DZLC | u32 version | u32 header length | JSON header | <f8 payload``."""
    meta = dict(header or {})
    meta.update(
        {
            "input_dim": params.input_dim,
            "hidden_dim": params.hidden_dim,
            "n_layers": params.n_layers,
            "arrays": [[name, list(a.shape)] for name, a in params.named_arrays()],
        }
    )
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_PREFIX.pack(CKPT_MAGIC, CKPT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(params.flat().astype("<f8").tobytes())


def load_checkpoint(path, input_dim=None):
    """Read a checkpoint; returns ``(params, header)``.

    Raises ``CheckpointError`` on a malformed file or when ``input_dim`` is
    given and differs from the stored feature dimension.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _CKPT_PREFIX.size:
        raise CheckpointError(f"{path} is not a checkpoint")
    magic, version, n = _CKPT_PREFIX.unpack_from(data)
    if magic != CKPT_MAGIC or version != CKPT_VERSION:
        raise CheckpointError(f"{path} is not a version-{CKPT_VERSION} checkpoint")
    try:
        header = json.loads(data[_CKPT_PREFIX.size : _CKPT_PREFIX.size + n].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}") from exc
    payload = np.frombuffer(data, dtype="<f8", offset=_CKPT_PREFIX.size + n).astype(np.float64)
    D, H, L = header["input_dim"], header["hidden_dim"], header["n_layers"]
    if input_dim is not None and input_dim != D:
        raise CheckpointError(f"dimension mismatch: checkpoint expects {D} features, got {input_dim}")
    return EncoderDecoderParams.from_flat(payload, D, H, L), header


class SequenceGRUClassifier(ClassifierMixin, BaseEstimator):
    """Estimator wrapper: ``X`` is a list of (S_i, D) arrays, ``y`` a list of label arrays."""

    def __init__(
        self,
        hidden_size=64,
        n_layers=2,
        learning_rate=1e-3,
        epochs=100,
        clip_norm=5.0,
        init_scale=0.1,
        point_blocks=0,
        random_state=0,
    ):
        self.hidden_size = hidden_size
        self.n_layers = n_layers
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.clip_norm = clip_norm
        self.init_scale = init_scale
        self.point_blocks = point_blocks
        self.random_state = random_state

    def train_config(self):
        check_positive(self.hidden_size, "hidden_size", integer=True)
        check_positive(self.n_layers, "n_layers", integer=True)
        if self.learning_rate < 0 or self.epochs < 0:
            raise ValueError("learning_rate and epochs must be nonnegative")
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            hidden_size=self.hidden_size,
            n_layers=self.n_layers,
            gradient_clip_norm=self.clip_norm,
            init_scale=self.init_scale,
            point_blocks=self.point_blocks,
            seed=self.random_state,
        )

    def fit(self, X, y, callback=None):
        X = list(X)
        y = list(y)
        if len(X) != len(y):
            raise ValueError(f"{len(X)} sequences but {len(y)} label arrays")
        self.params_, self.history_ = train(list(zip(X, y)), self.train_config(), callback=callback)
        self.classes_ = np.arange(N_CLASSES)
        self.n_features_in_ = self.params_.input_dim
        return self

    def _forward(self, X):
        check_is_fitted(self, "params_")
        return [forward(x, self.params_) for x in X]

    def predict_proba(self, X):
        return [p.proba for p in self._forward(X)]

    def predict(self, X):
        return [p.labels for p in self._forward(X)]

    def sequence_accuracy(self, X, y):
        check_is_fitted(self, "params_")
        return np.array([predict_accuracy(self.params_, x, labels) for x, labels in zip(X, y)])

    def score(self, X, y, sample_weight=None):
        """Mean over sequences of the per-step accuracy."""
        return float(np.average(self.sequence_accuracy(X, y), weights=sample_weight))
