"""Dense optical flow by polynomial expansion (Farnebäck).

Each pixel neighbourhood is approximated by a quadratic
``f(p) ~ p^T A p + b^T p + c`` fitted by Gaussian-weighted least squares.
If the second frame is the first moved by ``d`` (``f2(p) = f1(p - d)``)
then ``A2 = A1`` and ``b2 = b1 - 2 A1 d``, so ``A d = -(b2 - b1) / 2``.
Averaging ``A^T A`` and ``A^T db`` over a window gives a 2x2 system per
pixel, solved coarse to fine over an image pyramid.

Flow vectors point from a pixel in ``prev`` to where its content sits in
``next``: content moving right gives positive ``dx``. Arrays are indexed
``[row, col]`` and the last flow axis is ``(dx, dy)`` = ``(col, row)``.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_flow, check_frame, check_odd, check_positive, check_same_shape
from .video_io import VideoClip, resize_array, to_uint8, write_pgm

SINGULAR_DET = 1e-9


@dataclass(frozen=True)
class FlowParams:
    pyramid_levels: int = 3
    pyramid_scale: float = 0.5
    window_size: int = 15
    iterations: int = 3
    poly_n: int = 7
    poly_sigma: float = 1.5

    def __post_init__(self):
        check_positive(self.pyramid_levels, "pyramid_levels", integer=True)
        check_positive(self.iterations, "iterations", integer=True)
        check_odd(self.window_size, "window_size")
        check_odd(self.poly_n, "poly_n", minimum=3)
        check_positive(self.poly_sigma, "poly_sigma")
        if not 0.0 < self.pyramid_scale < 1.0:
            raise ValueError(f"pyramid_scale must lie in (0, 1), got {self.pyramid_scale}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass(frozen=True)
class PolyExpansion:
    """Per-pixel quadratic coefficients, stored as an (H, W, 6) array.

    Channel order is ``c, b_x, b_y, a_xx, a_yy, a_xy`` where
    ``A = [[a_xx, a_xy], [a_xy, a_yy]]`` (``a_xy`` is the symmetric
    off-diagonal entry, half the cross-term coefficient).
    """

    coeffs: np.ndarray

    @property
    def shape(self):
        return self.coeffs.shape[:2]

    @property
    def c(self):
        return self.coeffs[..., 0]

    @property
    def b(self):
        return self.coeffs[..., 1:3]

    @property
    def A(self):
        axx, ayy, axy = self.coeffs[..., 3], self.coeffs[..., 4], self.coeffs[..., 5]
        return np.stack([np.stack([axx, axy], -1), np.stack([axy, ayy], -1)], -2)


def _gaussian_taps(poly_n, poly_sigma):
    r = poly_n // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * poly_sigma**2))
    return x, g / g.sum()


def _expansion_operator(poly_n, poly_sigma):
    """Inverse Gram matrix of the weighted basis ``1, x, y, x^2, y^2, xy``."""
    x, g = _gaussian_taps(poly_n, poly_sigma)
    yy, xx = np.meshgrid(x, x, indexing="ij")
    w = np.outer(g, g)
    basis = np.stack([np.ones_like(xx), xx, yy, xx**2, yy**2, xx * yy]).reshape(6, -1)
    gram = (basis * w.ravel()) @ basis.T
    return np.linalg.inv(gram)


def poly_expand(frame, poly_n=7, poly_sigma=1.5):
    """Fit a local quadratic at every pixel of ``frame``.

    The fit minimises the Gaussian-weighted squared residual over a
    ``poly_n x poly_n`` neighbourhood, using separable correlations and a
    fixed 6x6 normal-equation inverse. Borders use reflected padding, so
    the fit is exact only at pixels whose neighbourhood lies inside the
    frame.
    """
    img = check_frame(frame, bounded=False)
    check_odd(poly_n, "poly_n", minimum=3)
    x, g = _gaussian_taps(poly_n, poly_sigma)
    kernels = (g, g * x, g * x * x)

    def corr(a, k, axis):
        return ndimage.correlate1d(a, k, axis=axis, mode="reflect")

    # rows pass along x (axis 1), then columns along y (axis 0)
    rx = [corr(img, k, 1) for k in kernels]
    moments = np.stack(
        [
            corr(rx[0], kernels[0], 0),  # 1
            corr(rx[1], kernels[0], 0),  # x
            corr(rx[0], kernels[1], 0),  # y
            corr(rx[2], kernels[0], 0),  # x^2
            corr(rx[0], kernels[2], 0),  # y^2
            corr(rx[1], kernels[1], 0),  # xy
        ],
        axis=-1,
    )
    coeffs = moments @ _expansion_operator(poly_n, poly_sigma).T
    coeffs[..., 5] *= 0.5  # cross term -> symmetric off-diagonal
    return PolyExpansion(coeffs)


def _warp_channels(coeffs, flow):
    """Bilinearly sample ``coeffs`` at ``p + flow`` (clamped at the border)."""
    h, w, n = coeffs.shape
    y = np.clip(np.arange(h, dtype=np.float64)[:, None] + flow[..., 1], 0.0, h - 1.0)
    x = np.clip(np.arange(w, dtype=np.float64)[None, :] + flow[..., 0], 0.0, w - 1.0)
    y0 = np.minimum(y.astype(np.int64), h - 2)
    x0 = np.minimum(x.astype(np.int64), w - 2)
    fy = (y - y0)[..., None]
    fx = (x - x0)[..., None]
    flat = coeffs.reshape(-1, n)
    i00 = y0 * w + x0
    top = flat[i00] * (1.0 - fx) + flat[i00 + 1] * fx
    bottom = flat[i00 + w] * (1.0 - fx) + flat[i00 + w + 1] * fx
    return top * (1.0 - fy) + bottom * fy


def displacement_step(e1, e2, prior, window_size=15):
    """One refinement of ``prior`` from two expansions.

    ``e2`` is sampled at positions displaced by ``prior``. Per pixel,
    ``A = (A1 + A2)/2`` and ``db = -(b2 - b1)/2``; the window averages of
    ``A^T A`` and ``A^T db`` form ``G`` and ``h`` and the increment is
    ``G^-1 h``. Pixels where ``det G < 1e-9`` keep the prior.
    """
    c1, c2 = e1.coeffs, e2.coeffs
    check_same_shape(c1, c2, "expansions")
    prior = check_flow(prior, "prior")
    if prior.shape[:2] != c1.shape[:2]:
        raise ValueError(f"dimension mismatch: prior {prior.shape[:2]} vs expansion {c1.shape[:2]}")
    check_odd(window_size, "window_size")

    sl = slice(1, 6)
    if np.any(prior):
        c2w = _warp_channels(c2[..., sl], prior)
    else:
        c2w = c2[..., sl]
    b1, b2 = c1[..., 1:3], c2w[..., 0:2]
    axx = 0.5 * (c1[..., 3] + c2w[..., 2])
    ayy = 0.5 * (c1[..., 4] + c2w[..., 3])
    axy = 0.5 * (c1[..., 5] + c2w[..., 4])
    dbx = -0.5 * (b2[..., 0] - b1[..., 0])
    dby = -0.5 * (b2[..., 1] - b1[..., 1])

    terms = np.stack(
        [
            axx * axx + axy * axy,  # G11
            axy * (axx + ayy),  # G12
            axy * axy + ayy * ayy,  # G22
            axx * dbx + axy * dby,  # h1
            axy * dbx + ayy * dby,  # h2
        ]
    )
    g11, g12, g22, h1, h2 = ndimage.uniform_filter(terms, size=(1, window_size, window_size), mode="reflect")
    det = g11 * g22 - g12 * g12
    ok = det >= SINGULAR_DET
    safe = np.where(ok, det, 1.0)
    inc = np.stack([(g22 * h1 - g12 * h2) / safe, (g11 * h2 - g12 * h1) / safe], axis=-1)
    inc[~ok] = 0.0
    return prior + inc


def _level_shapes(shape, params):
    h, w = shape
    shapes = [(h, w)]
    min_side = 2 * params.poly_n
    for level in range(1, params.pyramid_levels):
        s = params.pyramid_scale**level
        lh, lw = int(round(h * s)), int(round(w * s))
        if min(lh, lw) < min_side:
            break
        shapes.append((lh, lw))
    return shapes


def expand_pyramid(frame, params=None):
    """Polynomial expansions of ``frame`` at every pyramid level, finest first."""
    params = params or FlowParams()
    img = check_frame(frame, bounded=False)
    out = []
    for level, (lh, lw) in enumerate(_level_shapes(img.shape, params)):
        if level == 0:
            scaled = img
        else:
            sigma = (1.0 / params.pyramid_scale**level - 1.0) * 0.5
            scaled = resize_array(ndimage.gaussian_filter(img, sigma, mode="reflect"), lw, lh)
        out.append(poly_expand(scaled, params.poly_n, params.poly_sigma))
    return out


def _upsample_flow(flow, shape):
    h0, w0 = flow.shape[:2]
    h1, w1 = shape
    sx = (w1 - 1) / (w0 - 1)
    sy = (h1 - 1) / (h0 - 1)
    return np.stack([resize_array(flow[..., 0], w1, h1) * sx, resize_array(flow[..., 1], w1, h1) * sy], axis=-1)


def flow_from_pyramids(pyr1, pyr2, params=None):
    """Coarse-to-fine flow between two precomputed expansion pyramids."""
    params = params or FlowParams()
    if len(pyr1) != len(pyr2) or pyr1[0].shape != pyr2[0].shape:
        raise ValueError("dimension mismatch between expansion pyramids")
    flow = None
    for e1, e2 in zip(reversed(pyr1), reversed(pyr2)):
        if flow is None:
            flow = np.zeros(e1.shape + (2,))
        else:
            flow = _upsample_flow(flow, e1.shape)
        for _ in range(params.iterations):
            flow = displacement_step(e1, e2, flow, params.window_size)
    return flow


def compute_flow(prev, next, params=None):
    """Dense flow field of shape (H, W, 2) from ``prev`` to ``next``."""
    params = params or FlowParams()
    a = check_frame(prev, "prev", bounded=False)
    b = check_frame(next, "next", bounded=False)
    check_same_shape(a, b, "frames")
    if np.array_equal(a, b):
        return np.zeros(a.shape + (2,))
    return flow_from_pyramids(expand_pyramid(a, params), expand_pyramid(b, params), params)


class ClipFlowCache:
    """Flow between arbitrary frame pairs of one clip, with memoisation.

    Expansion pyramids are built once per frame and flows once per ordered
    pair, so flows of reordered versions of the clip reuse earlier work.
    """

    def __init__(self, clip, params=None):
        self.frames = clip.frames if isinstance(clip, VideoClip) else np.asarray(clip, dtype=np.float64)
        self.params = params or FlowParams()
        self._pyramids = {}
        self._flows = {}

    def pyramid(self, i):
        if i not in self._pyramids:
            self._pyramids[i] = expand_pyramid(self.frames[i], self.params)
        return self._pyramids[i]

    def pair(self, i, j):
        key = (int(i), int(j))
        if key not in self._flows:
            if np.array_equal(self.frames[i], self.frames[j]):
                flow = np.zeros(self.frames.shape[1:] + (2,))
            else:
                flow = flow_from_pyramids(self.pyramid(i), self.pyramid(j), self.params)
            flow.setflags(write=False)
            self._flows[key] = flow
        return self._flows[key]

    def sequence(self, order=None):
        """Stacked flows (len(order)-1, H, W, 2) along ``order`` (default: time order)."""
        order = np.arange(len(self.frames)) if order is None else np.asarray(order)
        return np.stack([self.pair(order[s], order[s + 1]) for s in range(len(order) - 1)])


def clip_flow_sequence(clip, params=None):
    """Flows between consecutive frames: an array of shape (T-1, H, W, 2)."""
    frames = clip.frames if isinstance(clip, VideoClip) else np.asarray(clip, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[0] < 2:
        raise ValueError("need a clip with at least 2 frames")
    return ClipFlowCache(frames, params).sequence()


class FarnebackFlow(TransformerMixin, BaseEstimator):
    """Transformer from clips (or (T, H, W) arrays) to stacked flow fields.

    Stateless: ``fit`` only validates the hyperparameters.
    """

    def __init__(self, pyramid_levels=3, pyramid_scale=0.5, window_size=15, iterations=3, poly_n=7, poly_sigma=1.5):
        self.pyramid_levels = pyramid_levels
        self.pyramid_scale = pyramid_scale
        self.window_size = window_size
        self.iterations = iterations
        self.poly_n = poly_n
        self.poly_sigma = poly_sigma

    def flow_params(self):
        return FlowParams(**self.get_params())

    def fit(self, X=None, y=None):
        self.params_ = self.flow_params()
        return self

    def transform(self, X):
        params = self.flow_params()
        if isinstance(X, (VideoClip, np.ndarray)):
            return clip_flow_sequence(X, params)
        return [clip_flow_sequence(clip, params) for clip in X]


def flow_magnitude(flow):
    flow = np.asarray(flow)
    return np.hypot(flow[..., 0], flow[..., 1])


def write_flow_debug(flow, pgm_path, csv_path, stride=8):
    """Dump a flow field as a magnitude PGM (max -> 255) plus an ``x,y,dx,dy`` CSV."""
    flow = check_flow(flow)
    mag = flow_magnitude(flow)
    peak = mag.max()
    write_pgm(pgm_path, mag / peak if peak > 0 else np.zeros_like(mag))
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "dx", "dy"])
        for y in range(0, flow.shape[0], stride):
            for x in range(0, flow.shape[1], stride):
                writer.writerow([x, y, repr(float(flow[y, x, 0])), repr(float(flow[y, x, 1]))])
    return to_uint8(mag / peak if peak > 0 else np.zeros_like(mag))
