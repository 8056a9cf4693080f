"""
A quick ablation table
======================

Trains the reduced network and its four variants (no spatial branch, no
temporal branch, no channel shuffle, plain 3D convolution) on the same data
and prints their test metrics side by side.  The defaults are sized for a
short run; criterion-scale numbers come from the acceptance suite.

Usage: python ablation_table.py [clips] [epochs]
"""
import sys

from u2f import dataio
from u2f.model import U2FConfig, ablated, build_model
from u2f.train import evaluate, train_loop

clips_n = int(sys.argv[1]) if len(sys.argv) > 1 else 200
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 3
seed = 3

clips, labels = dataio.generate_dataset(clips_n, seed)
base = U2FConfig(layer1_filters=12, hybrid_filters_per_branch=8, grouped_conv_filters=16)

print(f"{'variant':10s} {'params':>7s} {'MAE':>7s} {'mean R2':>8s}")
for name in (None, "spatial", "temporal", "shuffle", "plain3d"):
    config = ablated(base, name) if name else base
    model = build_model(config, seed=seed)
    _, _, (_, _, test_idx) = train_loop(model, clips, labels, epochs=epochs, seed=seed)
    test = evaluate(model, clips, labels, test_idx)
    print(f"{name or 'full':10s} {model.num_parameters():7d} {test.mae:7.4f} {test.mean_r2:8.4f}")
