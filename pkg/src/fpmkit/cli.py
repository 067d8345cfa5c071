"""``fpm`` command line: simulate, reconstruct, train, eval, plot, params-count.

Exit codes: 0 ok, 2 bad input, 3 missing artifact, 4 format error,
5 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .evaluate import METHODS, EvalConfig, MissingWeightsError, evaluate_methods, write_reports
from .field import FormatError, read_cfld, write_cfld
from .forward import read_fpmd, synthesize_dataset
from .geometry import SystemGeometry, desk_geometry
from .network import LWGNetConfig, LWGNetParams, layer_shapes, run_network
from .solvers import SolverConfig, StepSizeError, ap_reconstruct, initialize_object, wf_reconstruct, write_trace_csv
from .training import NonFiniteLossError, TrainConfig, config_snapshot, train

log = logging.getLogger("fpmkit")

EXIT_INPUT, EXIT_MISSING, EXIT_FORMAT, EXIT_NUMERIC = 2, 3, 4, 5
IMAGE_SUFFIXES = {".png", ".tif", ".tiff", ".jpg", ".jpeg", ".bmp", ".npy"}


class CLIError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def resolve_threads(arg) -> int:
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("FPM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def write_json_atomic(path, data) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def write_run_manifest(path, command, config, inputs, outputs, seed, started) -> None:
    write_json_atomic(
        path,
        {
            "command": command,
            "config": config,
            "inputs": [str(p) for p in inputs],
            "outputs": [str(p) for p in outputs],
            "seed": seed,
            "tool_version": __version__,
            "wall_clock_s": round(time.time() - started, 3),
        },
    )


def _read_json(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CLIError(EXIT_INPUT, f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise CLIError(EXIT_INPUT, f"{p}: invalid JSON ({e})") from None


def load_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".npy":
        return np.load(path).astype(np.float64)
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("F"), dtype=np.float64)


def list_images(d) -> list[Path]:
    d = Path(d)
    if not d.is_dir():
        raise CLIError(EXIT_INPUT, f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _parse_ints(s: str) -> list[int]:
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise CLIError(EXIT_INPUT, f"expected a comma-separated list of integers, got {s!r}") from None


# ------------------------------------------------------------ commands


def cmd_simulate(args) -> None:
    started = time.time()
    cfg = _read_json(args.config)
    geometry = SystemGeometry.from_dict(cfg["geometry"]) if "geometry" in cfg else desk_geometry()
    amp_files, phase_files = list_images(args.amp), list_images(args.phase)
    if not amp_files or not phase_files:
        raise CLIError(EXIT_INPUT, "no input images")
    if len(amp_files) != len(phase_files):
        raise CLIError(EXIT_INPUT, f"{len(amp_files)} amplitude vs {len(phase_files)} phase images")
    bits = _parse_ints(args.bits)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    splits = tuple(cfg.get("splits", (0.8, 0.1, 0.1)))
    margin = float(cfg.get("phase_margin", 0.0))
    manifest = synthesize_dataset(
        [load_image(p) for p in amp_files],
        [load_image(p) for p in phase_files],
        geometry,
        bits,
        args.out,
        seed=seed,
        splits=splits,
        phase_margin=margin,
        threads=resolve_threads(args.threads),
    )
    if not manifest["samples"]:
        raise CLIError(EXIT_INPUT, "every input pair was degenerate; nothing written")
    out = Path(args.out)
    config = {"geometry": geometry.to_dict(), "bits": bits, "splits": list(splits), "phase_margin": margin}
    write_run_manifest(
        out / "run.json", "simulate", config, amp_files + phase_files, [out / "manifest.json"], seed, started
    )
    print(f"wrote {len(manifest['samples'])} samples to {out}")


def cmd_reconstruct(args) -> None:
    started = time.time()
    meas = read_fpmd(args.input)
    trace, trace_header = None, ("iteration", "objective")
    config = {"method": args.method}
    if args.method == "wf":
        solver = SolverConfig(eta=args.eta, iters=args.iters, auto_halve=not args.no_halving)
        config.update(eta=solver.eta, iters=solver.iters, auto_halve=solver.auto_halve)
        obj, trace = wf_reconstruct(meas, solver, initialize_object(meas))
    elif args.method == "ap":
        config.update(iters=args.iters)
        obj, trace = ap_reconstruct(meas, args.iters)
        trace_header = ("iteration", "residual")
    elif args.method == "init":
        obj = initialize_object(meas)
    else:
        if args.weights is None:
            raise CLIError(EXIT_MISSING, f"method {args.method} requires --weights")
        if not Path(args.weights).exists():
            raise CLIError(EXIT_MISSING, f"weights not found: {args.weights}")
        params = LWGNetParams.load(args.weights)
        want = {"lwgnet": "lwgnet", "ablation-post": "post", "ablation-reg": "regular"}[args.method]
        if params.cfg.variant != want:
            raise CLIError(EXIT_INPUT, f"weights hold variant {params.cfg.variant!r}, not {want!r}")
        config["model"] = config_snapshot(TrainConfig(), params.cfg)["model"]
        obj = run_network(meas, params)
    if not np.isfinite(obj).all():
        raise CLIError(EXIT_NUMERIC, "reconstruction is not finite")
    out = Path(args.out)
    write_cfld(out, obj)
    outputs = [out]
    if trace:
        trace_path = Path(args.trace) if args.trace else Path(str(out) + ".trace.csv")
        write_trace_csv(trace_path, trace, trace_header)
        outputs.append(trace_path)
    inputs = [args.input] + ([args.weights] if args.weights else [])
    write_run_manifest(Path(str(out) + ".run.json"), "reconstruct", config, inputs, outputs, None, started)


def cmd_train(args) -> None:
    started = time.time()
    cfg = _read_json(args.config)
    tcfg = TrainConfig.from_dict(cfg.get("train", {}))
    if args.epochs is not None:
        tcfg.epochs = args.epochs
    if args.seed is not None:
        tcfg.seed = args.seed
    if args.max_steps is not None:
        tcfg.max_steps = args.max_steps
    mcfg = LWGNetConfig.from_dict(cfg.get("model", {}))
    manifest = Path(args.manifest)
    if not manifest.exists():
        raise CLIError(EXIT_MISSING, f"manifest not found: {manifest}")
    out = Path(args.out)
    train(manifest, tcfg, mcfg, out_path=out, threads=resolve_threads(args.threads))
    outputs = [out, Path(str(out) + ".json"), Path(str(out) + ".metrics.csv")]
    write_run_manifest(
        Path(str(out) + ".run.json"), "train", config_snapshot(tcfg, mcfg), [manifest], outputs, tcfg.seed, started
    )


def _parse_weights(items) -> dict:
    """``method=path`` or ``method@bits=path`` entries."""
    weights: dict = {}
    for item in items or []:
        if "=" not in item:
            raise CLIError(EXIT_INPUT, f"--weights expects method=path, got {item!r}")
        key, path = item.split("=", 1)
        if "@" in key:
            method, bits = key.split("@", 1)
            entry = weights.setdefault(method, {})
            if not isinstance(entry, dict):
                raise CLIError(EXIT_INPUT, f"conflicting --weights entries for {method}")
            entry[int(bits)] = path
        else:
            weights[key] = path
    return weights


def cmd_eval(args) -> None:
    started = time.time()
    methods = [m for m in args.methods.split(",") if m]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise CLIError(EXIT_INPUT, f"unknown methods {bad}; choose from {list(METHODS)}")
    bits = _parse_ints(args.bits)
    cfg = EvalConfig(wf_eta=args.wf_eta, wf_iters=args.wf_iters, ap_iters=args.ap_iters, split=args.split)
    weights = _parse_weights(args.weights)
    reports = evaluate_methods(args.manifest, methods, bits, weights, cfg, threads=resolve_threads(args.threads))
    out = Path(args.out)
    write_reports(reports, out)
    config = {"methods": methods, "bits": bits, "eval": cfg.__dict__, "weights": {k: str(v) for k, v in weights.items()}}
    write_run_manifest(out / "run.json", "eval", config, [args.manifest], [out / "summary.csv", out / "summary.md"], None, started)
    print((out / "summary.md").read_text())


def field_to_pngs(field) -> tuple[np.ndarray, np.ndarray]:
    """8-bit amplitude (min-max) and phase ([-pi, pi] -> [0, 255]) images."""
    amp = np.abs(field)
    lo, hi = amp.min(), amp.max()
    if hi > lo:
        amp8 = np.rint((amp - lo) / (hi - lo) * 255)
    else:
        amp8 = np.full(amp.shape, 128.0)
    phase8 = np.rint((np.angle(field) + np.pi) / (2 * np.pi) * 255)
    return amp8.astype(np.uint8), phase8.astype(np.uint8)


def cmd_plot(args) -> None:
    from PIL import Image

    try:
        field = read_cfld(args.field)
    except FileNotFoundError:
        raise CLIError(EXIT_FORMAT, f"cannot read field: {args.field}") from None
    amp8, phase8 = field_to_pngs(field)
    for name, img in (("amp", amp8), ("phase", phase8)):
        Image.fromarray(img).save(f"{args.out}_{name}.png")


def cmd_params_count(args) -> None:
    cfg = LWGNetConfig.from_dict(_read_json(args.config).get("model", {})) if args.config else LWGNetConfig()
    if args.stages is not None:
        cfg.n_stages = args.stages
    if args.channels is not None:
        cfg.channels = args.channels
    if args.leds is not None:
        cfg.n_leds = args.leds
    total = sum(int(np.prod(s)) for s in layer_shapes(cfg).values())
    print(f"K={cfg.n_stages} C={cfg.channels} L={cfg.in_channels} variant={cfg.variant}: {total} parameters")


# ------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fpm", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a measurement dataset from amplitude/phase images")
    p.add_argument("--config")
    p.add_argument("--amp", required=True)
    p.add_argument("--phase", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bits", default="16,12,8")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("reconstruct", help="reconstruct one measurement stack")
    p.add_argument("--method", required=True, choices=["ap", "wf", "init", "lwgnet", "ablation-post", "ablation-reg"])
    p.add_argument("--input", required=True)
    p.add_argument("--weights")
    p.add_argument("--out", required=True)
    p.add_argument("--eta", type=float, default=SolverConfig.eta)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--no-halving", action="store_true")
    p.add_argument("--trace")
    p.add_argument("--threads", type=int)
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("train", help="train LWGNet or an ablation variant")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score methods across bit depths")
    p.add_argument("--manifest", required=True)
    p.add_argument("--methods", default="init,ap,wf")
    p.add_argument("--bits", default="16,12,8")
    p.add_argument("--out", required=True)
    p.add_argument("--weights", action="append", help="method=path or method@bits=path (repeatable)")
    p.add_argument("--split", default="test")
    p.add_argument("--wf-eta", type=float, default=EvalConfig.wf_eta)
    p.add_argument("--wf-iters", type=int, default=EvalConfig.wf_iters)
    p.add_argument("--ap-iters", type=int, default=EvalConfig.ap_iters)
    p.add_argument("--threads", type=int)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("plot", help="write amplitude and phase PNGs of a .cfld field")
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_plot)

    p = sub.add_parser("params-count", help="report the network parameter count")
    p.add_argument("--config")
    p.add_argument("--stages", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--leds", type=int)
    p.set_defaults(fn=cmd_params_count)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.fn(args)
    except CLIError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except MissingWeightsError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except FormatError as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except FileNotFoundError as e:
        print(f"error: missing file: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (StepSizeError, NonFiniteLossError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
