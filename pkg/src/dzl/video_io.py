"""Grayscale clip containers and frame-sequence file formats.

Two on-disk layouts are supported:

``pgm_dir``
    A directory of binary (P5) 8-bit PGM files, read in lexicographic
    filename order. Zero-padded names keep that order equal to time order.
``dzlv``
    One packed little-endian file: ``b"DZLV"``, then four ``u32`` values
    (version=1, width, height, frame_count), then ``frame_count*height*width``
    bytes of luminance, frame-major and row-major.

Frames are held as float64 arrays scaled to [0, 1].
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import MIN_SIDE, check_frame

DZLV_MAGIC = b"DZLV"
DZLV_VERSION = 1
_DZLV_HEADER = struct.Struct("<4sIIII")
MIN_FRAMES = 4


class ClipFormatError(ValueError):
    """Raised for malformed or inconsistent clip files."""


@dataclass(frozen=True)
class VideoClip:
    """An ordered stack of equally sized grayscale frames.

    ``frames`` has shape ``(T, height, width)``. The array is made read-only
    on construction so a clip can be shared between workers.
    """

    frames: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64, copy=True)
        if frames.ndim != 3:
            raise ValueError(f"frames must have shape (T, H, W), got {frames.shape}")
        if frames.shape[0] < MIN_FRAMES:
            raise ValueError(f"a clip needs at least {MIN_FRAMES} frames, got {frames.shape[0]}")
        for t in range(frames.shape[0]):
            check_frame(frames[t], name=f"frame {t}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def frame_count(self):
        return self.frames.shape[0]

    T = frame_count

    @property
    def height(self):
        return self.frames.shape[1]

    @property
    def width(self):
        return self.frames.shape[2]

    def __len__(self):
        return self.frames.shape[0]

    def __getitem__(self, t):
        return self.frames[t]

    def reordered(self, order, source_id=None):
        """Clip whose position ``t`` holds frame ``order[t]`` of this clip."""
        order = np.asarray(order, dtype=np.int64)
        return VideoClip(self.frames[order], source_id=self.source_id if source_id is None else source_id)

    def resized(self, width, height):
        if (width, height) == (self.width, self.height):
            return self
        frames = np.stack([resize_frame(f, width, height) for f in self.frames])
        return VideoClip(frames, source_id=self.source_id)

    def __eq__(self, other):
        if not isinstance(other, VideoClip):
            return NotImplemented
        return self.source_id == other.source_id and np.array_equal(self.frames, other.frames)

    __hash__ = None


def _interp_matrix(n_out, n_in):
    """Row-stochastic (n_out, n_in) matrix of align-corners linear weights."""
    m = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m
    src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(src).astype(np.int64), n_in - 2)
    frac = src - lo
    rows = np.arange(n_out)
    m[rows, lo] = 1.0 - frac
    m[rows, lo + 1] += frac
    return m


def resize_array(img, width, height):
    """Bilinear (align-corners) resize of a 2-D array to ``height x width``."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape == (height, width):
        return img.copy()
    return _interp_matrix(height, img.shape[0]) @ img @ _interp_matrix(width, img.shape[1]).T


def resize_frame(frame, w, h):
    """Resize a [0, 1] frame to ``w x h`` pixels with bilinear interpolation.

    Corner pixels map onto corner pixels, so a two-column frame resized to
    four columns ramps linearly across them. Output stays in [0, 1].
    """
    if min(w, h) < MIN_SIDE:
        raise ValueError(f"target size must be at least {MIN_SIDE}x{MIN_SIDE}, got {w}x{h}")
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise ValueError(f"frame must be 2-D, got shape {frame.shape}")
    out = resize_array(frame, w, h)
    return np.clip(out, 0.0, 1.0)


# -- PGM ---------------------------------------------------------------------

def _pgm_tokens(data, count):
    """Read ``count`` whitespace-separated header tokens; return them and the payload offset."""
    tokens = []
    i = 0
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace() and data[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise ClipFormatError("malformed header: PGM header ended early")
        tokens.append(data[start:i])
    # exactly one whitespace byte separates the header from the raster
    if i >= n or not data[i : i + 1].isspace():
        raise ClipFormatError("malformed header: missing separator before PGM raster")
    return tokens, i + 1


def read_pgm(path):
    """Read an 8-bit binary PGM; returns a float64 array scaled by 1/255."""
    data = Path(path).read_bytes()
    tokens, offset = _pgm_tokens(data, 4)
    if tokens[0] != b"P5":
        raise ClipFormatError(f"malformed header: {path} is not a binary (P5) PGM")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ClipFormatError(f"malformed header in {path}") from exc
    if width < 1 or height < 1 or not 0 < maxval <= 255:
        raise ClipFormatError(f"malformed header in {path}: {width}x{height}, maxval {maxval}")
    if len(data) - offset < width * height:
        raise ClipFormatError(f"truncated payload in {path}")
    raster = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=offset)
    return raster.reshape(height, width).astype(np.float64) / 255.0


def to_uint8(frame):
    return np.round(np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path, frame):
    img = to_uint8(frame)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(img.tobytes())


# -- DZLV --------------------------------------------------------------------

def read_dzlv(path):
    data = Path(path).read_bytes()
    if len(data) < _DZLV_HEADER.size:
        raise ClipFormatError(f"malformed header: {path} is shorter than a DZLV header")
    magic, version, width, height, count = _DZLV_HEADER.unpack_from(data)
    if magic != DZLV_MAGIC:
        raise ClipFormatError(f"malformed header: bad magic {magic!r} in {path}")
    if version != DZLV_VERSION:
        raise ClipFormatError(f"malformed header: unsupported DZLV version {version}")
    expected = width * height * count
    payload = len(data) - _DZLV_HEADER.size
    if payload < expected:
        raise ClipFormatError(f"truncated payload in {path}: {payload} of {expected} bytes")
    frames = np.frombuffer(data, dtype=np.uint8, count=expected, offset=_DZLV_HEADER.size)
    return frames.reshape(count, height, width).astype(np.float64) / 255.0


def save_dzlv(clip, path):
    """Write ``clip`` (a VideoClip or (T, H, W) array) as a DZLV file."""
    frames = clip.frames if isinstance(clip, VideoClip) else np.asarray(clip)
    raw = to_uint8(frames)
    count, height, width = raw.shape
    with open(path, "wb") as fh:
        fh.write(_DZLV_HEADER.pack(DZLV_MAGIC, DZLV_VERSION, width, height, count))
        fh.write(raw.tobytes())


def _load_pgm_dir(path):
    names = sorted(n for n in os.listdir(path) if n.lower().endswith(".pgm"))
    if not names:
        raise ClipFormatError(f"no .pgm files in {path}")
    frames = [read_pgm(os.path.join(path, n)) for n in names]
    shape = frames[0].shape
    for name, f in zip(names, frames):
        if f.shape != shape:
            raise ClipFormatError(f"inconsistent frame dimensions: {name} is {f.shape}, expected {shape}")
    return np.stack(frames)


def infer_format(path):
    return "pgm_dir" if os.path.isdir(path) else "dzlv"


def load_clip(path, format=None):
    """Load a clip from a PGM directory or a DZLV file.

    ``format`` is ``"pgm_dir"`` or ``"dzlv"``; when omitted it is inferred
    from whether ``path`` is a directory.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such clip: {path}")
    format = format or infer_format(path)
    if format == "pgm_dir":
        if not os.path.isdir(path):
            raise ClipFormatError(f"pgm_dir format expects a directory: {path}")
        frames = _load_pgm_dir(path)
    elif format == "dzlv":
        frames = read_dzlv(path)
    else:
        raise ValueError(f"unknown clip format {format!r}")
    if frames.shape[0] < MIN_FRAMES:
        raise ClipFormatError(f"clip {path} has {frames.shape[0]} frames; at least {MIN_FRAMES} required")
    if min(frames.shape[1:]) < MIN_SIDE:
        raise ClipFormatError(f"clip {path} frames are {frames.shape[2]}x{frames.shape[1]}; too small")
    return VideoClip(frames, source_id=os.path.basename(os.path.normpath(path)))


def save_pgm_dir(clip, path):
    os.makedirs(path, exist_ok=True)
    frames = clip.frames if isinstance(clip, VideoClip) else np.asarray(clip)
    digits = max(4, len(str(len(frames))))
    for t, f in enumerate(frames):
        write_pgm(os.path.join(path, f"frame_{t:0{digits}d}.pgm"), f)
