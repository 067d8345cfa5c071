"""Desk-scale study: synthesize toy data, train LWGNet and its ablations, score against WF/AP.

Mirrors the bit-depth table layout at N=160, M=32, 5x5 LEDs. A full run with
the defaults takes on the order of an hour on one core.

    python scripts/desk_experiment.py --work runs/desk --steps 600
"""

import argparse
import json
import logging
from pathlib import Path

from fpmkit.evaluate import EvalConfig, evaluate_methods, write_reports
from fpmkit.forward import synthesize_dataset
from fpmkit.geometry import desk_geometry
from fpmkit.network import LWGNetConfig
from fpmkit.toyimages import toy_pairs
from fpmkit.training import TrainConfig, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--work", default="runs/desk")
    ap.add_argument("--objects", type=int, default=48)
    ap.add_argument("--steps", type=int, default=600)
    ap.add_argument("--stages", type=int, default=2)
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--eta", type=float, default=5.0)
    ap.add_argument("--lr", type=float, default=3e-3)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--bits", default="16,12,8")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    work = Path(args.work)
    data = work / "data"
    bits = [int(b) for b in args.bits.split(",")]
    if not (data / "manifest.json").exists():
        amps, phases = toy_pairs(args.objects, 176, seed=7)
        synthesize_dataset(amps, phases, desk_geometry(), bits, data, splits=(4 / 6, 1 / 6, 1 / 6), phase_margin=0.5)

    weights = {}
    runs = [("lwgnet", "lwgnet", b) for b in bits] + [("ablation-post", "post", 16), ("ablation-reg", "regular", 16)]
    for method, variant, b in runs:
        out = work / f"{method}_b{b}.lwgw"
        if not out.exists():
            tc = TrainConfig(lr=args.lr, batch_size=2, epochs=10_000, max_steps=args.steps, bit_depth=b, scheduler_patience=5)
            mc = LWGNetConfig(n_stages=args.stages, channels=args.channels, eta=args.eta, variant=variant)
            train(data, tc, mc, out_path=out, threads=args.threads)
        weights.setdefault(method, {})[b] = out

    methods = ["init", "ap", "wf", "lwgnet"]
    reports = evaluate_methods(data, methods, bits, weights, EvalConfig(), threads=args.threads)
    reports += evaluate_methods(data, ["ablation-post", "ablation-reg"], [16], weights, EvalConfig(), threads=args.threads)
    write_reports(reports, work / "report")
    print((work / "report" / "summary.md").read_text())
    (work / "weights.json").write_text(json.dumps({m: {str(b): str(p) for b, p in d.items()} for m, d in weights.items()}, indent=2))


if __name__ == "__main__":
    main()
