"""Cascade formant synthesizer for vowel trajectories.

An impulse-train source drives a cascade of four second-order digital
resonators.  F1 and F2 follow the input trajectory sample by sample; F3 and
F4 are held fixed.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .dsp import FormantTrajectory, Waveform

FRAME_RATE = 30


@dataclass
class SynthConfig:
    sample_rate: float = 8820
    f0: float = 120.0
    f3: float = 2500.0
    f4: float = 3500.0
    b1: float = 60.0
    b2: float = 90.0
    b3: float = 110.0
    b4: float = 180.0
    peak: float = 0.9

    def validate(self):
        nyq = self.sample_rate / 2
        for name in ("f3", "f4"):
            if not 0 < getattr(self, name) < nyq:
                raise ValueError(f"{name}={getattr(self, name)} must lie in (0, {nyq})")
        for name in ("b1", "b2", "b3", "b4"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.f0 < nyq:
            raise ValueError(f"f0={self.f0} must lie in (0, {nyq})")
        if not 0 < self.peak <= 1:
            raise ValueError("peak must lie in (0, 1]")
        return self


def resonator_coefficients(frequency, bandwidth, sample_rate):
    """Return ``(A, B, C)`` for ``y[n] = A x[n] + B y[n-1] + C y[n-2]``.

    ``A = 1 - B - C`` gives unity gain at DC.
    """
    if not 0 < frequency < sample_rate / 2:
        raise ValueError(f"frequency {frequency} outside (0, {sample_rate / 2})")
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    T = 1.0 / sample_rate
    c = -math.exp(-2 * math.pi * bandwidth * T)
    b = 2 * math.exp(-math.pi * bandwidth * T) * math.cos(2 * math.pi * frequency * T)
    return 1.0 - b - c, b, c


def resonator_filter(coefficients, x):
    """Run a fixed resonator over ``x`` from zero initial state."""
    a, b, c = coefficients
    return lfilter([a], [1.0, -b, -c], np.asarray(x, dtype=float))


def _varying_resonator(x, freqs, bandwidth, sample_rate):
    T = 1.0 / sample_rate
    c = -math.exp(-2 * math.pi * bandwidth * T)
    b = 2 * math.exp(-math.pi * bandwidth * T) * np.cos(2 * np.pi * freqs * T)
    a = 1.0 - b - c
    y = np.empty_like(x)
    y1 = y2 = 0.0
    for n, (xn, an, bn) in enumerate(zip(x.tolist(), a.tolist(), b.tolist())):
        yn = an * xn + bn * y1 + c * y2
        y[n] = yn
        y2, y1 = y1, yn
    return y


def glottal_source(f0, duration, sample_rate):
    """Unit impulse train with period ``round(sample_rate / f0)`` starting at 0."""
    if not 0 < f0 < sample_rate / 2:
        raise ValueError(f"f0 must lie in (0, {sample_rate / 2}), got {f0}")
    n = int(round(duration * sample_rate))
    out = np.zeros(n)
    out[::int(round(sample_rate / f0))] = 1.0
    return out


def synthesize_vowel_trajectory(traj, cfg=None):
    """Synthesize ``len(traj) / 30`` seconds of vowel from an (f1, f2) trajectory."""
    cfg = SynthConfig() if cfg is None else cfg
    cfg.validate()
    if not isinstance(traj, FormantTrajectory):
        traj = FormantTrajectory(*traj)
    fs = cfg.sample_rate
    nyq = fs / 2
    for i, (a, b) in enumerate(zip(traj.f1, traj.f2)):
        if not (np.isfinite(a) and np.isfinite(b)):
            raise ValueError(f"frame {i}: non-finite formant value")
        if not (0 < a < nyq and 0 < b < nyq):
            raise ValueError(f"frame {i}: formants ({a}, {b}) outside (0, {nyq})")
        if not a < b:
            raise ValueError(f"frame {i}: f1={a} is not below f2={b}")
    frames = traj.f1.size
    source = glottal_source(cfg.f0, frames / FRAME_RATE, fs)
    pos = np.arange(source.size) * FRAME_RATE / fs
    f1 = np.interp(pos, np.arange(frames), traj.f1)
    f2 = np.interp(pos, np.arange(frames), traj.f2)
    y = _varying_resonator(source, f1, cfg.b1, fs)
    y = _varying_resonator(y, f2, cfg.b2, fs)
    y = resonator_filter(resonator_coefficients(cfg.f3, cfg.b3, fs), y)
    y = resonator_filter(resonator_coefficients(cfg.f4, cfg.b4, fs), y)
    peak = np.abs(y).max()
    if peak > 0:
        y = y * (cfg.peak / peak)
    return Waveform(y, fs)
