"""LPC formant analysis: windowing, pre-emphasis, autocorrelation LPC,
polynomial root finding and per-frame formant tracking."""
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import lfilter

FRAMES = 30
DEFAULT_ANALYSIS_RATE = 8820
DEFAULT_ORDER = 10
PRE_EMPHASIS = 0.63
MIN_FORMANT_HZ = 90.0
MAX_BANDWIDTH_HZ = 400.0


class RootFindingError(ArithmeticError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (best residual {residual:.3e})")
        self.residual = residual


class FormantExtractionError(ValueError):
    def __init__(self, message, frame=None):
        super().__init__(message if frame is None else f"frame {frame}: {message}")
        self.frame = frame


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        if self.samples.ndim != 1 or not np.all(np.isfinite(self.samples)):
            raise ValueError("samples must be a finite 1-D array")

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass
class LpcFrame:
    coefficients: np.ndarray  # a[0] == 1
    gain: float

    @property
    def order(self):
        return len(self.coefficients) - 1


@dataclass(frozen=True)
class FormantEstimate:
    frequency: float
    bandwidth: float


@dataclass
class FormantTrajectory:
    f1: np.ndarray
    f2: np.ndarray

    def __post_init__(self):
        self.f1 = np.asarray(self.f1, dtype=float)
        self.f2 = np.asarray(self.f2, dtype=float)
        if self.f1.shape != self.f2.shape or self.f1.ndim != 1:
            raise ValueError(f"f1/f2 shapes differ or are not 1-D: {self.f1.shape}, {self.f2.shape}")

    def validate(self, frames=FRAMES):
        if self.f1.size != frames:
            raise ValueError(f"trajectory must have {frames} frames, has {self.f1.size}")
        bad = np.flatnonzero(~(self.f1 < self.f2))
        if bad.size:
            raise ValueError(f"frame {bad[0]}: f1={self.f1[bad[0]]} is not below f2={self.f2[bad[0]]}")
        return self

    def to_text(self):
        return "".join(f"{i},{float(a)!r},{float(b)!r}\n"
                       for i, (a, b) in enumerate(zip(self.f1, self.f2)))

    @classmethod
    def from_text(cls, text):
        rows = [line.split(",") for line in text.splitlines() if line.strip()]
        for expect, row in enumerate(rows):
            if len(row) != 3 or int(row[0]) != expect:
                raise ValueError(f"malformed trajectory line {expect}: {','.join(row)!r}")
        return cls([float(r[1]) for r in rows], [float(r[2]) for r in rows])

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())


# ---------------------------------------------------------------------------
# Signal conditioning
# ---------------------------------------------------------------------------

def resample(w, target_rate, half_width=16):
    """Band-limited resampling with a Kaiser-windowed sinc kernel.

    Each output sample uses kernel weights renormalized to sum to one, so a
    constant signal stays exactly constant up to the edges.  The output has
    ``round(n * target / source)`` samples.
    """
    if target_rate <= 0:
        raise ValueError("target rate must be positive")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    ratio = Fraction(target_rate).limit_denominator(10**6) / Fraction(w.sample_rate).limit_denominator(10**6)
    x = w.samples
    n_out = int(round(x.size * float(ratio)))
    cutoff = min(1.0, float(ratio))  # fraction of the input Nyquist
    reach = int(math.ceil(half_width / cutoff))
    t = np.arange(n_out) / float(ratio)
    base = np.floor(t).astype(int)
    offsets = np.arange(-reach + 1, reach + 1)
    idx = base[:, None] + offsets[None, :]
    d = t[:, None] - idx
    taper = np.i0(8.0 * np.sqrt(np.clip(1.0 - (d / reach) ** 2, 0.0, None))) / np.i0(8.0)
    kernel = cutoff * np.sinc(cutoff * d) * taper
    valid = (idx >= 0) & (idx < x.size)
    kernel = np.where(valid, kernel, 0.0)
    kernel /= kernel.sum(axis=1, keepdims=True)
    y = np.einsum("ij,ij->i", kernel, x[np.clip(idx, 0, x.size - 1)])
    return Waveform(y, float(target_rate))


def hamming_window(n):
    if n < 2:
        raise ValueError("window length must be at least 2")
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2 * np.pi * k / (n - 1))


def pre_emphasis(x, coef=PRE_EMPHASIS):
    """Apply ``1 / (1 + coef z^-1)``: ``y[n] = x[n] - coef * y[n-1]``."""
    return lfilter([1.0], [1.0, coef], np.asarray(x, dtype=float))


def autocorrelation(x, max_lag):
    x = np.asarray(x, dtype=float)
    if max_lag < 0 or max_lag >= x.size:
        raise ValueError(f"max_lag must be in [0, {x.size - 1}], got {max_lag}")
    n = x.size
    return np.array([np.dot(x[:n - k], x[k:]) for k in range(max_lag + 1)])


def levinson_durbin(r, order):
    """Solve the autocorrelation normal equations for ``A(z) = 1 + a1 z^-1 + ...``.

    Returns an :class:`LpcFrame` whose gain is the final prediction error
    power.
    """
    r = np.asarray(r, dtype=float)
    if order < 1 or order >= r.size:
        raise ValueError(f"order must be in [1, {r.size - 1}], got {order}")
    if not r[0] > 0:
        raise ValueError("r[0] must be positive (signal has no energy)")
    a = np.zeros(order + 1)
    a[0] = 1.0
    err = r[0]
    for i in range(1, order + 1):
        acc = r[i] + np.dot(a[1:i], r[i - 1:0:-1])
        k = -acc / err
        a[1:i] = a[1:i] + k * a[i - 1:0:-1]
        a[i] = k
        err *= 1.0 - k * k
        if not err > 0:
            raise ValueError(f"autocorrelation sequence is not positive definite at order {i}")
    return LpcFrame(a, float(err))


# ---------------------------------------------------------------------------
# Roots
# ---------------------------------------------------------------------------

def _polyval(c, z):
    out = np.zeros_like(z) + c[0]
    for coef in c[1:]:
        out = out * z + coef
    return out


def polynomial_roots(coeffs, tol=1e-10, max_iter=500):
    """All complex roots of ``coeffs[0] z^n + ... + coeffs[n]`` by
    Durand-Kerner (Weierstrass) iteration followed by a Newton polish."""
    c = np.asarray(coeffs, dtype=complex)
    if c.ndim != 1 or c.size < 2:
        raise ValueError("need a polynomial of degree >= 1")
    if c[0] == 0:
        raise ValueError("leading coefficient must be nonzero")
    c = c / c[0]
    n = c.size - 1
    if n == 1:
        return np.array([-c[1]])
    radius = 1.0 + np.abs(c[1:]).max()
    z = radius * (0.4 + 0.9j) ** np.arange(n)
    scale = np.abs(c).max()
    best = np.inf
    converged = False
    for _ in range(max_iter):
        diff = z[:, None] - z[None, :]
        np.fill_diagonal(diff, 1.0)
        step = _polyval(c, z) / diff.prod(axis=1)
        z = z - step
        best = min(best, float(np.abs(_polyval(c, z)).max()) / scale)
        if np.all(np.abs(step) <= tol * np.maximum(1.0, np.abs(z))):
            converged = True
            break
    if not converged:
        raise RootFindingError(f"Durand-Kerner did not converge in {max_iter} iterations", best)
    dc = np.polyder(c)
    for _ in range(3):
        d = _polyval(dc, z)
        safe = np.where(d == 0, 1.0, d)
        trial = np.where(d == 0, z, z - _polyval(c, z) / safe)
        better = np.abs(_polyval(c, trial)) < np.abs(_polyval(c, z))
        z = np.where(better, trial, z)
    return z


def roots_to_formants(roots, sample_rate, min_frequency=MIN_FORMANT_HZ,
                      max_bandwidth=MAX_BANDWIDTH_HZ):
    """Convert upper-half-plane roots to formant candidates sorted by frequency."""
    out = []
    for z in np.asarray(roots, dtype=complex):
        if z.imag <= 0:
            continue
        freq = float(np.angle(z)) * sample_rate / (2 * np.pi)
        mag = abs(z)
        if mag == 0:
            continue
        bw = -(sample_rate / np.pi) * math.log(mag)
        if freq <= min_frequency or freq >= sample_rate / 2:
            continue
        if not bw < max_bandwidth:  # autocorrelation LPC is minimum phase, so bw >= 0
            continue
        out.append(FormantEstimate(freq, bw))
    return sorted(out, key=lambda f: f.frequency)


# ---------------------------------------------------------------------------
# Frame analysis
# ---------------------------------------------------------------------------

def lpc_frame(frame, order=DEFAULT_ORDER):
    """Hamming window, pre-emphasis and autocorrelation LPC of one frame."""
    x = np.asarray(frame, dtype=float) * hamming_window(len(frame))
    x = pre_emphasis(x)
    return levinson_durbin(autocorrelation(x, order), order)


def frame_formants(frame, sample_rate, order=DEFAULT_ORDER):
    lpc = lpc_frame(frame, order)
    return roots_to_formants(polynomial_roots(lpc.coefficients), sample_rate)


def extract_formant_trajectory(w, frame_rate=30, frames=FRAMES, order=DEFAULT_ORDER,
                               analysis_rate=DEFAULT_ANALYSIS_RATE):
    """First two formants of each of ``frames`` consecutive video-aligned blocks.

    The waveform is resampled to ``analysis_rate`` (None keeps the input rate)
    and cut into non-overlapping blocks of ``analysis_rate / frame_rate``
    samples.
    """
    if analysis_rate is not None and analysis_rate != w.sample_rate:
        w = resample(w, analysis_rate)
    fs = w.sample_rate
    block = int(round(fs / frame_rate))
    if w.samples.size < frames * block:
        raise FormantExtractionError(
            f"need {frames / frame_rate:.3f} s of audio, got {w.duration:.3f} s")
    f1 = np.empty(frames)
    f2 = np.empty(frames)
    for i in range(frames):
        seg = w.samples[i * block:(i + 1) * block]
        try:
            cands = frame_formants(seg, fs, order)
        except (ValueError, RootFindingError) as exc:
            raise FormantExtractionError(str(exc), frame=i) from exc
        if len(cands) < 2:
            raise FormantExtractionError(f"only {len(cands)} formant candidates", frame=i)
        f1[i], f2[i] = cands[0].frequency, cands[1].frequency
    return FormantTrajectory(f1, f2)
