"""
Where does the network look?
============================

Loads a checkpoint (for example the one written by ``train_small.py``),
computes both saliency variants for one clip and writes them as PGM images
next to the clip itself.
"""
import os
import sys

import numpy as np

from u2f import dataio
from u2f.checkpoint import load_checkpoint
from u2f.saliency import compute_saliency

ckpt = sys.argv[1] if len(sys.argv) > 1 else "small.ckpt"
outdir = sys.argv[2] if len(sys.argv) > 2 else "saliency"

model = load_checkpoint(ckpt)
clip, (f1, f2) = dataio.generate_synthetic_clip(dataio.random_params(2024))
os.makedirs(outdir, exist_ok=True)

maps = {mode: compute_saliency(model, clip, mode) for mode in ("input", "lastconv")}
for t in (0, 10, 20):
    dataio.write_pgm(os.path.join(outdir, f"clip_{t:02d}.pgm"), clip[t])
    for mode, m in maps.items():
        dataio.write_pgm(os.path.join(outdir, f"{mode}_{t:02d}.pgm"), m[t])

# how much of the input saliency sits on the bright arc?
arc = clip > 0.5
for mode, m in maps.items():
    share = m[arc].sum() / m.sum()
    print(f"{mode:9s}: {100 * share:.1f}% of saliency on arc pixels "
          f"({100 * arc.mean():.1f}% of the image)")
print(f"images written to {outdir}/")
