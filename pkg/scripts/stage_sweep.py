"""Validation PSNR as a function of the number of unrolled stages K.

    python scripts/stage_sweep.py --data runs/desk/data --stages 1,2,3 --steps 300
"""

import argparse
import csv
import logging
from pathlib import Path

from fpmkit.network import LWGNetConfig
from fpmkit.training import TrainConfig, train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", required=True, help="dataset directory or manifest.json")
    ap.add_argument("--out", default="runs/stage_sweep")
    ap.add_argument("--stages", default="1,2,3")
    ap.add_argument("--bits", type=int, default=16)
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--eta", type=float, default=5.0)
    ap.add_argument("--lr", type=float, default=3e-3)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in (int(s) for s in args.stages.split(",")):
        tc = TrainConfig(lr=args.lr, batch_size=2, epochs=10_000, max_steps=args.steps, bit_depth=args.bits, scheduler_patience=5)
        mc = LWGNetConfig(n_stages=k, channels=args.channels, eta=args.eta)
        _, log = train(args.data, tc, mc, out_path=out / f"k{k}.lwgw")
        best = min(log, key=lambda r: r["val_loss"])
        rows.append({"stages": k, "best_val_loss": best["val_loss"], "val_psnr": best["val_psnr"]})
        print(rows[-1])
    with open(out / "stages.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
