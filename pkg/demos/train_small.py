"""
Train a small formant regressor on synthetic tongue clips
=========================================================

Each synthetic clip shows a bright arc whose apex moves with tongue height
and frontness; its labels are the matching f1/f2 trajectories.  A reduced
network (12/24/16 filters) learns the mapping in a few minutes.

Usage: python train_small.py [clips] [epochs] [checkpoint]
"""
import sys
import time

from u2f import dataio
from u2f.checkpoint import save_checkpoint
from u2f.model import U2FConfig, build_model
from u2f.train import evaluate, train_loop

clips_n = int(sys.argv[1]) if len(sys.argv) > 1 else 300
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 4
ckpt = sys.argv[3] if len(sys.argv) > 3 else "small.ckpt"
seed = 7

clips, labels = dataio.generate_dataset(clips_n, seed)
print(f"{clips_n} clips of shape {clips.shape[1:]}, labels in Hz: "
      f"f1 {labels[:, :30].min():.0f}-{labels[:, :30].max():.0f}, "
      f"f2 {labels[:, 30:].min():.0f}-{labels[:, 30:].max():.0f}")

config = U2FConfig(layer1_filters=12, hybrid_filters_per_branch=8, grouped_conv_filters=16)
model = build_model(config, seed=seed)
print(f"{model.num_parameters()} parameters")

start = time.perf_counter()
model, history, (_, _, test_idx) = train_loop(
    model, clips, labels, epochs=epochs, batch_size=10, seed=seed,
    progress=lambda r: print(f"epoch {r.epoch}: train MAE {r.train_mae:.4f}, "
                             f"dev MAE {r.dev_mae:.4f}, dev mean R2 {r.dev_mean_r2:.4f}"))
print(f"trained in {time.perf_counter() - start:.0f} s")

test = evaluate(model, clips, labels, test_idx)
print(f"test: MAE {test.mae:.4f} (normalized), mean R2 {test.mean_r2:.4f}")

# predictions back in Hz for one held-out clip
i = 0
print("first test clip, every 5th frame (Hz):")
for t in range(0, 30, 5):
    print(f"  f1 {test.target_hz[i, t]:6.0f} -> {test.predicted_hz[i, t]:6.0f}   "
          f"f2 {test.target_hz[i, 30 + t]:6.0f} -> {test.predicted_hz[i, 30 + t]:6.0f}")

save_checkpoint(model, ckpt)
print(f"saved {ckpt}")
