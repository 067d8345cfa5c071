"""Write procedural amplitude/phase PNG pairs for `fpm simulate`.

    python scripts/make_toy_images.py --out toy_images --count 48 --size 176
"""

import argparse
from pathlib import Path

import numpy as np
from PIL import Image

from fpmkit.toyimages import toy_pairs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", required=True)
    ap.add_argument("--count", type=int, default=48)
    ap.add_argument("--size", type=int, default=176)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    out = Path(args.out)
    amps, phases = toy_pairs(args.count, args.size, args.seed)
    for name, imgs in (("amp", amps), ("phase", phases)):
        (out / name).mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(imgs):
            # 16-bit PNGs keep the smooth ramps free of banding
            Image.fromarray(np.rint(img * 65535).astype(np.uint16)).save(out / name / f"tile{i:03d}.png")
    print(f"wrote {len(amps)} pairs under {out}")


if __name__ == "__main__":
    main()
