"""
Synthesize a vowel glide and measure it back
============================================

A 30-frame trajectory moving from an /a/-like vowel towards an /i/-like one is
rendered with the cascade synthesizer, written to a PCM16 WAV file, read back
and analysed with the LPC formant tracker.
"""
import sys

import numpy as np

from u2f import dataio
from u2f.dsp import FormantTrajectory, Waveform, extract_formant_trajectory
from u2f.klatt import SynthConfig, synthesize_vowel_trajectory

out = sys.argv[1] if len(sys.argv) > 1 else "glide.wav"

# f1 falls and f2 rises over one second (30 video frames)
frames = np.arange(30)
ramp = np.clip((frames - 5) / 20, 0, 1)
target = FormantTrajectory(700 - 400 * ramp, 1200 + 1000 * ramp)

wave = synthesize_vowel_trajectory(target, SynthConfig(f0=110))
dataio.write_wav(out, wave.samples, wave.sample_rate)
print(f"wrote {wave.samples.size} samples at {wave.sample_rate} Hz to {out}")

# the file holds 16-bit samples, so analysis sees the quantized signal
samples, rate = dataio.read_wav(out)
measured = extract_formant_trajectory(Waveform(samples, rate))

print(" frame   f1 set  f1 found   f2 set  f2 found")
for i in range(0, 30, 3):
    print(f"{i:6d} {target.f1[i]:8.0f} {measured.f1[i]:9.0f} "
          f"{target.f2[i]:8.0f} {measured.f2[i]:9.0f}")
err1 = np.median(np.abs(measured.f1 - target.f1))
err2 = np.median(np.abs(measured.f2 - target.f2))
print(f"median absolute error: f1 {err1:.1f} Hz, f2 {err2:.1f} Hz")
