"""Command-line entry point: ``python -m u2f <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
import argparse
import csv
import json
import os
import sys

from . import dataio
from .checkpoint import load_checkpoint, save_checkpoint
from .dsp import FormantTrajectory, Waveform, extract_formant_trajectory
from .klatt import SynthConfig, synthesize_vowel_trajectory
from .model import ABLATIONS, U2FConfig, ablated, build_model
from .saliency import compute_saliency
from .train import (EVAL_BATCH, AdamState, SplitSpec, evaluate, split_dataset, train_loop,
                    write_history)

REPORT_FIELDS = ["split", "mae_f1", "mae_f2", "mae", "r2_f1", "r2_f2", "mean_r2",
                 "mean_r2_normalized"]


def _resolved(command, **values):
    print(json.dumps({"command": command, **values}, sort_keys=True, default=str), flush=True)


def cmd_gen_data(args):
    _resolved("gen-data", out=args.out, clips=args.clips, seed=args.seed, speckle=args.speckle)
    dataio.generate_dataset(args.clips, args.seed, path=args.out, speckle=args.speckle)
    print(f"wrote {args.clips} clips to {args.out}")


def _config_from_args(args):
    cfg = U2FConfig(layer1_filters=args.layer1_filters,
                    hybrid_filters_per_branch=args.branch_filters,
                    grouped_conv_filters=args.grouped_filters,
                    grouped_conv_groups=args.groups)
    if args.ablate:
        cfg = ablated(cfg, args.ablate)
    return cfg.validate()


def cmd_train(args):
    cfg = _config_from_args(args)
    history_path = args.history or args.out + ".history.csv"
    _resolved("train", data=args.data, out=args.out, epochs=args.epochs, batch=args.batch,
              lr=args.lr, seed=args.seed, ablate=args.ablate, history=history_path,
              config=cfg.to_dict())
    clips, labels = dataio.read_dataset(args.data)
    model = build_model(cfg, seed=args.seed)
    model, history, _ = train_loop(
        model, clips, labels, epochs=args.epochs, batch_size=args.batch,
        learning_rate=args.lr, seed=args.seed, adam=AdamState(learning_rate=args.lr),
        progress=lambda r: print(f"epoch {r.epoch} trainMAE {r.train_mae:.6f} "
                                 f"devMAE {r.dev_mae:.6f} devMeanR2 {r.dev_mean_r2:.6f}",
                                 flush=True))
    save_checkpoint(model, args.out)
    write_history(history_path, history)
    print(f"saved checkpoint to {args.out}")


def cmd_eval(args):
    _resolved("eval", data=args.data, ckpt=args.ckpt, report=args.report, batch=args.batch)
    model = load_checkpoint(args.ckpt)
    clips, labels = dataio.read_dataset(args.data)
    _, dev_idx, test_idx = split_dataset(len(clips), SplitSpec(seed=model.seed))
    rows = []
    for name, idx in (("dev", dev_idx), ("test", test_idx)):
        rep = evaluate(model, clips, labels, idx, batch_size=args.batch)
        rows.append({"split": name, **rep.as_row()})
        print(f"{name}: MAE {rep.mae:.6f} meanR2 {rep.mean_r2:.6f}")
    with open(args.report, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def cmd_extract(args):
    _resolved("extract", wav=args.wav, out=args.out, order=args.order, rate=args.rate)
    samples, rate = dataio.read_wav(args.wav)
    traj = extract_formant_trajectory(Waveform(samples, rate), order=args.order,
                                      analysis_rate=args.rate)
    traj.save(args.out)
    print(f"wrote {traj.f1.size} frames to {args.out}")


def cmd_synth(args):
    cfg = SynthConfig(f0=args.f0, sample_rate=args.rate)
    _resolved("synth", traj=args.traj, out=args.out, f0=cfg.f0, rate=cfg.sample_rate)
    traj = FormantTrajectory.load(args.traj).validate()
    wave = synthesize_vowel_trajectory(traj, cfg)
    dataio.write_wav(args.out, wave.samples, wave.sample_rate)
    print(f"wrote {wave.samples.size} samples to {args.out}")


def cmd_saliency(args):
    _resolved("saliency", ckpt=args.ckpt, data=args.data, index=args.index, mode=args.mode,
              outdir=args.outdir)
    model = load_checkpoint(args.ckpt)
    clip = None
    for i, (c, _) in enumerate(dataio.iter_dataset(args.data)):
        if i == args.index:
            clip = c
            break
    if clip is None:
        raise IndexError(f"clip index {args.index} not in {args.data}")
    maps = compute_saliency(model, clip, args.mode)
    os.makedirs(args.outdir, exist_ok=True)
    for t, m in enumerate(maps):
        dataio.write_pgm(os.path.join(args.outdir, f"frame_{t:02d}.pgm"), m)
    print(f"wrote {len(maps)} maps to {args.outdir}")


def build_parser():
    p = argparse.ArgumentParser(prog="u2f", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic clip dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--clips", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--speckle", type=float, default=0.3)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a dataset file")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch", type=int, default=10)
    t.add_argument("--lr", type=float, default=0.001)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--ablate", choices=sorted(ABLATIONS))
    t.add_argument("--history")
    t.add_argument("--layer1-filters", type=int, default=48)
    t.add_argument("--branch-filters", type=int, default=32)
    t.add_argument("--grouped-filters", type=int, default=32)
    t.add_argument("--groups", type=int, default=4)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="report dev/test metrics of a checkpoint")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--batch", type=int, default=EVAL_BATCH)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("extract", help="LPC formant trajectory of a WAV file")
    x.add_argument("--wav", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--order", type=int, default=10)
    x.add_argument("--rate", type=float, default=8820)
    x.set_defaults(func=cmd_extract)

    s = sub.add_parser("synth", help="synthesize a vowel from a trajectory file")
    s.add_argument("--traj", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--f0", type=float, default=120.0)
    s.add_argument("--rate", type=float, default=8820)
    s.set_defaults(func=cmd_synth)

    m = sub.add_parser("saliency", help="export saliency maps as PGM images")
    m.add_argument("--ckpt", required=True)
    m.add_argument("--data", required=True)
    m.add_argument("--index", type=int, required=True)
    m.add_argument("--mode", choices=("input", "lastconv"), default="input")
    m.add_argument("--outdir", required=True)
    m.set_defaults(func=cmd_saliency)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        args.func(args)
    except (OSError, ValueError, ArithmeticError, IndexError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
