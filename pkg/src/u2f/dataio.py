"""Synthetic tongue clips, frame preprocessing and file formats.

File formats (all little-endian):

* dataset: ``b"U2S1"``, u32 clip count, then per clip 30*50*82 float32 pixels
  followed by 60 float32 labels (f1 then f2, Hz);
* WAV: 16-bit PCM mono RIFF/WAVE;
* PGM: binary ``P5`` greyscale with maxval 255.
"""
import struct
import wave
from dataclasses import dataclass

import numpy as np

from .errors import BadMagicError, TruncatedFileError, UnsupportedFormatError

FRAMES, HEIGHT, WIDTH = 30, 50, 82
CLIP_SHAPE = (FRAMES, HEIGHT, WIDTH)
DATASET_MAGIC = b"U2S1"
_HEADER = struct.Struct("<4sI")
_CLIP_VALUES = FRAMES * HEIGHT * WIDTH
_LABEL_VALUES = 2 * FRAMES
RECORD_BYTES = 4 * (_CLIP_VALUES + _LABEL_VALUES)

MAX_STEP = 0.1


def dataset_nbytes(count):
    return _HEADER.size + count * RECORD_BYTES


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def height_to_f1(h):
    return 800.0 - 500.0 * np.asarray(h, dtype=float)


def frontness_to_f2(f):
    return 900.0 + 1300.0 * np.asarray(f, dtype=float)


@dataclass
class SyntheticParams:
    """Per-frame tongue height and frontness in [0, 1] plus noise settings."""
    height: np.ndarray
    frontness: np.ndarray
    speckle: float = 0.3
    seed: int = 0

    def validate(self):
        h = np.asarray(self.height, dtype=float)
        f = np.asarray(self.frontness, dtype=float)
        for name, v in (("height", h), ("frontness", f)):
            if v.shape != (FRAMES,):
                raise ValueError(f"{name} must have {FRAMES} frames, got shape {v.shape}")
            if not np.all(np.isfinite(v)) or v.min() < 0 or v.max() > 1:
                raise ValueError(f"{name} values must lie in [0, 1]")
            if np.abs(np.diff(v)).max(initial=0.0) > MAX_STEP + 1e-12:
                raise ValueError(f"{name} changes by more than {MAX_STEP} between frames")
        if not 0 <= self.speckle < 1:
            raise ValueError("speckle amplitude must be in [0, 1)")
        return self


GLIDE_END = 22


def _glide(rng):
    """A smooth transition between two random targets (a vowel glide).

    Glides settle by frame ``GLIDE_END``: after three 2x temporal poolings
    the network sees nothing of the last few frames.
    """
    t = np.arange(FRAMES, dtype=float)
    start = rng.uniform(0, 10)
    stop = rng.uniform(start + 8, GLIDE_END)
    a, b = rng.uniform(0, 1, 2)
    # smoothstep peaks at slope 1.5 / (stop - start) per frame
    limit = MAX_STEP * (stop - start) / 1.5
    if abs(b - a) > limit:
        b = a + np.sign(b - a) * limit
    s = np.clip((t - start) / (stop - start), 0, 1)
    return a + (b - a) * s * s * (3 - 2 * s)


def random_params(seed, speckle=0.3):
    """Draw smooth height/frontness trajectories from ``seed``."""
    rng = np.random.default_rng(seed)
    h = _glide(rng)
    f = _glide(rng)
    return SyntheticParams(h, f, speckle=speckle, seed=int(rng.integers(2**31)))


def render_frame(height, frontness, rng, speckle=0.3, width=1.5, curvature=0.012):
    """One 50x82 frame: a bright dome-shaped arc over speckled background."""
    apex_row = (1.0 - height) * 40.0 + 5.0
    apex_col = frontness * 60.0 + 10.0
    rows = np.arange(HEIGHT, dtype=float)[:, None]
    cols = np.arange(WIDTH, dtype=float)[None, :]
    curve = apex_row + curvature * (cols - apex_col) ** 2
    arc = np.exp(-0.5 * ((rows - curve) / width) ** 2)
    noise = 1.0 + speckle * rng.uniform(-1.0, 1.0, (HEIGHT, WIDTH))
    return np.clip((0.08 + 0.92 * arc) * noise, 0.0, 1.0)


def generate_synthetic_clip(params):
    """Render a clip and its formant labels.

    Returns ``(clip, (f1, f2))``; ``clip`` has shape (30, 50, 82) with values in
    [0, 1] and the labels are 30-point trajectories in Hz.
    """
    params.validate()
    rng = np.random.default_rng(params.seed)
    h = np.asarray(params.height, dtype=float)
    f = np.asarray(params.frontness, dtype=float)
    clip = np.stack([render_frame(h[t], f[t], rng, params.speckle) for t in range(FRAMES)])
    return clip, (height_to_f1(h), frontness_to_f2(f))


def generate_dataset(count, seed, path=None, speckle=0.3):
    """Generate ``count`` independent clips; optionally write them to ``path``.

    Returns ``(clips, labels)`` with clips as float32 (N, 30, 50, 82) and labels
    as float64 (N, 60) in Hz (f1 then f2).
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    children = np.random.SeedSequence(seed).spawn(count)
    clips = np.empty((count,) + CLIP_SHAPE, dtype=np.float32)
    labels = np.empty((count, _LABEL_VALUES))
    for i, child in enumerate(children):
        params = random_params(child, speckle=speckle)
        clip, (f1, f2) = generate_synthetic_clip(params)
        clips[i] = clip
        labels[i] = np.concatenate([f1, f2])
    if path is not None:
        write_dataset(path, clips, labels)
    return clips, labels


# ---------------------------------------------------------------------------
# Preprocessing of raw frames
# ---------------------------------------------------------------------------

def _area_matrix(n_in, n_out):
    """Row-stochastic matrix averaging ``n_in`` samples into ``n_out`` bins by
    overlap length."""
    edges_in = np.arange(n_in + 1, dtype=float)
    edges_out = np.linspace(0.0, n_in, n_out + 1)
    lo = np.maximum(edges_out[:-1, None], edges_in[None, :-1])
    hi = np.minimum(edges_out[1:, None], edges_in[None, 1:])
    overlap = np.clip(hi - lo, 0.0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def preprocess_frames(raw_frames, box, out_shape=(HEIGHT, WIDTH)):
    """Crop, convert to grey, area-downsample and min-max normalize a clip.

    ``raw_frames`` is (T, H, W) or (T, H, W, 3); ``box`` is
    ``(top, left, height, width)``.  A clip with no intensity range maps to
    all zeros.
    """
    frames = np.asarray(raw_frames, dtype=float)
    if frames.ndim == 4:
        if frames.shape[-1] != 3:
            raise ValueError(f"colour frames need 3 channels, got {frames.shape[-1]}")
        frames = frames @ np.array([0.299, 0.587, 0.114])
    if frames.ndim != 3:
        raise ValueError(f"expected (T, H, W) frames, got shape {frames.shape}")
    top, left, bh, bw = (int(v) for v in box)
    T, H, W = frames.shape
    if top < 0 or left < 0 or bh < 1 or bw < 1 or top + bh > H or left + bw > W:
        raise ValueError(f"box {box} does not fit inside {H}x{W} frames")
    crop = frames[:, top:top + bh, left:left + bw]
    if crop.min() == crop.max():
        # checked before averaging, whose rounding would invent a tiny range
        return np.zeros((T,) + tuple(out_shape))
    rh = _area_matrix(bh, out_shape[0])
    rw = _area_matrix(bw, out_shape[1])
    small = np.einsum("ih,thw,jw->tij", rh, crop, rw)
    lo, hi = small.min(), small.max()
    if hi - lo <= 0:
        return np.zeros_like(small)
    return (small - lo) / (hi - lo)


# ---------------------------------------------------------------------------
# Dataset file
# ---------------------------------------------------------------------------

def write_dataset(path, clips, labels):
    clips = np.asarray(clips)
    labels = np.asarray(labels)
    if clips.shape[1:] != CLIP_SHAPE or labels.shape != (clips.shape[0], _LABEL_VALUES):
        raise ValueError(f"bad dataset shapes {clips.shape}, {labels.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(DATASET_MAGIC, clips.shape[0]))
        for clip, label in zip(clips, labels):
            fh.write(np.ascontiguousarray(clip, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(label, dtype="<f4").tobytes())


def _read_header(fh):
    head = fh.read(_HEADER.size)
    if len(head) < 4 or head[:4] != DATASET_MAGIC:
        raise BadMagicError(f"not a dataset file (magic {head[:4]!r})")
    if len(head) < _HEADER.size:
        raise TruncatedFileError("dataset header is truncated")
    return _HEADER.unpack(head)[1]


def iter_dataset(path):
    """Yield ``(clip, labels)`` records one at a time.

    Records before a truncated one are still produced; the truncated record
    raises :class:`TruncatedFileError`.
    """
    with open(path, "rb") as fh:
        count = _read_header(fh)
        for i in range(count):
            buf = fh.read(RECORD_BYTES)
            if len(buf) < RECORD_BYTES:
                raise TruncatedFileError(f"record {i} of {count} is truncated")
            values = np.frombuffer(buf, dtype="<f4")
            yield (values[:_CLIP_VALUES].reshape(CLIP_SHAPE).astype(np.float32),
                   values[_CLIP_VALUES:].astype(np.float64))


def read_dataset(path):
    """Load a whole dataset file as ``(clips float32, labels float64)``."""
    with open(path, "rb") as fh:
        count = _read_header(fh)
    clips = np.empty((count,) + CLIP_SHAPE, dtype=np.float32)
    labels = np.empty((count, _LABEL_VALUES))
    for i, (clip, label) in enumerate(iter_dataset(path)):
        clips[i] = clip
        labels[i] = label
    return clips, labels


# ---------------------------------------------------------------------------
# WAV (PCM16 mono)
# ---------------------------------------------------------------------------

def write_wav(path, samples, sample_rate):
    x = np.asarray(samples, dtype=float)
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise ValueError("samples must be a finite 1-D array")
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(sample_rate))
        w.writeframes(pcm.tobytes())


def read_wav(path):
    """Return ``(samples in [-1, 1), sample_rate)`` for a PCM16 mono file."""
    try:
        w = wave.open(str(path), "rb")
    except wave.Error as exc:
        raise UnsupportedFormatError(f"{path}: {exc}") from exc
    with w:
        if w.getnchannels() != 1:
            raise UnsupportedFormatError(f"{path}: {w.getnchannels()} channels, expected mono")
        if w.getsampwidth() != 2:
            raise UnsupportedFormatError(f"{path}: {8 * w.getsampwidth()}-bit samples, expected 16")
        rate = w.getframerate()
        data = w.readframes(w.getnframes())
    return np.frombuffer(data, dtype="<i2").astype(float) / 32768.0, rate


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

def write_pgm(path, image):
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D map, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
        raise ValueError("PGM values must lie in [0, 1]")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.round(img * 255).astype(np.uint8).tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise BadMagicError(f"{path}: not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    pix = np.frombuffer(parts[3], dtype=np.uint8)
    if pix.size < w * h:
        raise TruncatedFileError(f"{path}: expected {w * h} pixels, found {pix.size}")
    return pix[:w * h].reshape(h, w)
