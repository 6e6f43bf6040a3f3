"""Synthetic contrast-injection clips.

A bright ridge fills a smooth random curve from one end at constant speed.
In a normal clip the front reaches the end; in an occluded clip it halts at
fraction ``rho`` of the curve. The front is a logistic ramp along the arc
(width ``front_width`` as a curve fraction), so that consecutive frames
differ by a moving intensity gradient that optical flow can follow rather
than by pixels switching on. Underneath, a low-frequency background drifts
periodically (a stand-in for spine and cardiac motion), and pixel noise is
added on top.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .video_io import VideoClip, save_dzlv

SAMPLE_SPACING = 0.5


@dataclass(frozen=True)
class SynthConfig:
    width: int = 512
    height: int = 512
    T: int = 40
    rho: float = 1.0
    speed: float | None = None  # curve fraction per frame; default reaches the end on the last frame
    front_width: float = 0.3  # curve fraction over which the front ramps up; 0 gives a hard edge
    n_control: tuple = (3, 5)
    vessel_sigma: float | None = None  # ridge width in px; default scales with size
    vessel_peak: float = 0.55
    background_level: float = 0.2
    background_contrast: float = 0.05
    drift_amplitude: float = 1.5
    drift_period: float = 16.0
    noise_sigma: float = 0.01
    truth_threshold: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.T < 4:
            raise ValueError(f"T must be >= 4, got {self.T}")
        if min(self.width, self.height) < 16:
            raise ValueError("synthetic frames must be at least 16x16")
        if self.front_width < 0:
            raise ValueError(f"front_width must be >= 0, got {self.front_width}")

    @property
    def front_speed(self):
        return self.speed if self.speed is not None else 1.0 / (self.T - 1)

    @property
    def ridge_sigma(self):
        return self.vessel_sigma if self.vessel_sigma is not None else max(1.0, min(self.width, self.height) / 40.0)

    @property
    def truth(self):
        return "abnormal" if self.rho < self.truth_threshold else "normal"

    def to_dict(self):
        d = asdict(self)
        d["n_control"] = list(self.n_control)
        return d


def _vessel_curve(rng, cfg):
    n = int(rng.integers(cfg.n_control[0], cfg.n_control[1] + 1))
    w, h = cfg.width, cfg.height
    # march roughly left-to-right so the curve does not fold back on itself
    xs = np.sort(rng.uniform(0.12, 0.88, size=n))
    xs = np.linspace(0.12, 0.88, n) * 0.5 + xs * 0.5
    ys = rng.uniform(0.15, 0.85, size=n)
    if rng.random() < 0.5:
        xs, ys = ys, xs
    pts = np.column_stack([xs * (w - 1), ys * (h - 1)])
    chord = np.r_[0.0, np.cumsum(np.hypot(*np.diff(pts, axis=0).T))]
    spline = CubicSpline(chord, pts, bc_type="natural")
    dense = spline(np.linspace(0.0, chord[-1], 4000))
    arc = np.r_[0.0, np.cumsum(np.hypot(*np.diff(dense, axis=0).T))]
    samples = np.arange(0.0, arc[-1], SAMPLE_SPACING)
    curve = np.column_stack([np.interp(samples, arc, dense[:, 0]), np.interp(samples, arc, dense[:, 1])])
    curve[:, 0] = np.clip(curve[:, 0], 0, w - 1)
    curve[:, 1] = np.clip(curve[:, 1], 0, h - 1)
    return curve


def _background(rng, cfg):
    comps = []
    for _ in range(3):
        comps.append((rng.uniform(0.3, 1.0), rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0, 2 * np.pi)))
    phase = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0 : cfg.height, 0 : cfg.width].astype(np.float64)

    def frame(t):
        dx = cfg.drift_amplitude * np.sin(2 * np.pi * t / cfg.drift_period + phase)
        dy = 0.5 * cfg.drift_amplitude * np.cos(2 * np.pi * t / cfg.drift_period + phase)
        b = np.zeros_like(xx)
        for amp, fx, fy, ph in comps:
            b += amp * np.sin(2 * np.pi * (fx * (xx - dx) / cfg.width + fy * (yy - dy) / cfg.height) + ph)
        return cfg.background_level + cfg.background_contrast * b / len(comps)

    return frame


def _vessel_maps(curve, cfg):
    """Per-pixel ridge profile and arc position (0..1) of the nearest curve sample."""
    yy, xx = np.mgrid[0 : cfg.height, 0 : cfg.width]
    dist, idx = cKDTree(curve).query(np.column_stack([xx.ravel(), yy.ravel()]))
    sigma = cfg.ridge_sigma
    profile = np.exp(-(dist**2) / (2 * sigma * sigma)).reshape(cfg.height, cfg.width)
    arc = (idx / max(len(curve) - 1, 1)).reshape(cfg.height, cfg.width)
    return profile, arc


def _front(arc, fill, width):
    if width == 0:
        return (arc <= fill).astype(np.float64)
    # logistic ramp; 4/width puts the 12%..88% rise within one front width
    return 1.0 / (1.0 + np.exp(-(fill - arc) * (4.0 / width)))


def generate_clip(cfg=None, seed=0, source_id=None):
    """Render one clip. Returns ``(clip, truth, manifest_entry)``."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(seed)
    curve = _vessel_curve(rng, cfg)
    background = _background(rng, cfg)
    profile, arc = _vessel_maps(curve, cfg)
    frames = np.empty((cfg.T, cfg.height, cfg.width))
    for t in range(cfg.T):
        fill = min(t * cfg.front_speed, cfg.rho)
        img = background(t) + cfg.vessel_peak * profile * _front(arc, fill, cfg.front_width)
        if cfg.noise_sigma > 0:
            img = img + rng.normal(0.0, cfg.noise_sigma, size=img.shape)
        frames[t] = np.clip(img, 0.0, 1.0)
    sid = source_id or f"synth_{seed}"
    entry = {"file": sid, "truth": cfg.truth, "rho": float(cfg.rho), "seed": int(seed)}
    return VideoClip(frames, source_id=sid), cfg.truth, entry


def derive_seeds(seed, n):
    """``n`` child seeds of ``seed`` (distinct with overwhelming probability)."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def generate_corpus(n_normal, n_abnormal, out_dir, severity=(0.2, 0.5), seed=0, cfg=None):
    """Write ``n_normal + n_abnormal`` DZLV clips and ``manifest.json`` into ``out_dir``.

    Abnormal clips draw ``rho`` uniformly from ``severity``. Returns the
    manifest (a list of ``{file, truth, rho, seed}`` with file paths
    relative to ``out_dir``).
    """
    if n_normal < 1 or n_abnormal < 1:
        raise ValueError("need at least one normal and one abnormal clip")
    lo, hi = severity
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError(f"severity range must satisfy 0 <= lo <= hi <= 1, got {severity}")
    cfg = cfg or SynthConfig()
    os.makedirs(out_dir, exist_ok=True)
    total = n_normal + n_abnormal
    seeds = derive_seeds(seed, total + 1)
    rho_rng = np.random.default_rng(seeds[-1])
    rhos = [1.0] * n_normal + rho_rng.uniform(lo, hi, size=n_abnormal).tolist()
    digits = max(4, len(str(total)))
    manifest = []
    for i, (rho, clip_seed) in enumerate(zip(rhos, seeds)):
        name = f"clip_{i:0{digits}d}.dzlv"
        clip, truth, entry = generate_clip(replace(cfg, rho=rho), clip_seed, source_id=name)
        save_dzlv(clip, os.path.join(out_dir, name))
        entry["truth_threshold"] = cfg.truth_threshold
        manifest.append(entry)
    write_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest


def write_manifest(manifest, path):
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_manifest(path):
    """Load a manifest and resolve each ``file`` against the manifest's directory."""
    with open(path) as fh:
        entries = json.load(fh)
    if not isinstance(entries, list) or not entries:
        raise ValueError(f"{path}: manifest must be a non-empty JSON list")
    base = os.path.dirname(os.path.abspath(path))
    out = []
    for e in entries:
        if not isinstance(e, dict) or "file" not in e:
            raise ValueError(f"{path}: every manifest entry needs a 'file'")
        e = dict(e)
        e["path"] = e["file"] if os.path.isabs(e["file"]) else os.path.join(base, e["file"])
        out.append(e)
    return out
