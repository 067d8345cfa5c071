"""Method x bit-depth evaluation harness producing CSV and Markdown tables."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .field import read_cfld
from .forward import load_manifest, manifest_samples, read_fpmd
from .metrics import EXACT, amplitude_phase_scores, format_psnr
from .network import LWGNetParams, run_network
from .solvers import SolverConfig, ap_reconstruct, initialize_object, wf_reconstruct

METHODS = ("gt", "init", "ap", "wf", "lwgnet", "ablation-post", "ablation-reg")
LEARNED = {"lwgnet": "lwgnet", "ablation-post": "post", "ablation-reg": "regular"}
SCORE_KEYS = ("amp_psnr", "amp_ssim", "phase_psnr", "phase_ssim")


class MissingWeightsError(FileNotFoundError):
    pass


@dataclass
class EvalConfig:
    wf_eta: float = 100.0
    wf_iters: int = 500
    ap_iters: int = 50
    split: str = "test"


@dataclass
class EvalReport:
    method: str
    bit_depth: int
    samples: list = field(default_factory=list)  # dicts: id + SCORE_KEYS

    @property
    def mean(self) -> dict:
        out = {}
        for k in SCORE_KEYS:
            vals = [s[k] for s in self.samples]
            out[k] = EXACT if vals and all(v == EXACT for v in vals) else float(np.mean([v for v in vals if v != EXACT]))
        return out


def _weights_path(weights, method: str, bits: int):
    entry = (weights or {}).get(method)
    if isinstance(entry, dict):
        entry = entry.get(bits, entry.get(str(bits)))
    if entry is None or not Path(entry).exists():
        raise MissingWeightsError(f"method {method!r} at {bits} bit needs trained weights (got {entry})")
    return Path(entry)


def make_reconstructor(method: str, bits: int, weights=None, cfg: EvalConfig | None = None):
    """Return ``fn(meas) -> complex field`` for one method (``gt`` is handled by the caller)."""
    cfg = EvalConfig() if cfg is None else cfg
    if method == "init":
        return initialize_object
    if method == "ap":
        return lambda meas: ap_reconstruct(meas, cfg.ap_iters)[0]
    if method == "wf":
        solver = SolverConfig(eta=cfg.wf_eta, iters=cfg.wf_iters, record_objective=False)
        return lambda meas: wf_reconstruct(meas, solver, initialize_object(meas))[0]
    if method in LEARNED:
        params = LWGNetParams.load(_weights_path(weights, method, bits))
        if params.cfg.variant != LEARNED[method]:
            raise ValueError(f"weights for {method!r} hold variant {params.cfg.variant!r}")
        return lambda meas: run_network(meas, params)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def evaluate_methods(manifest_path, methods, bit_depths, weights=None, cfg: EvalConfig | None = None, threads: int = 1):
    """Score every method at every bit depth on one split of a dataset.

    ``weights`` maps a learned method name to a ``.lwgw`` path, or to a dict
    from bit depth to path. Returns a list of :class:`EvalReport`.
    """
    cfg = EvalConfig() if cfg is None else cfg
    manifest, root = load_manifest(manifest_path)
    samples = manifest_samples(manifest, cfg.split)
    if not samples:
        raise ValueError(f"no samples in split {cfg.split!r}")
    gts = {s["id"]: read_cfld(root / s["object"]) for s in samples}
    reports = []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        for method in methods:
            for bits in bit_depths:
                fn = None if method == "gt" else make_reconstructor(method, bits, weights, cfg)

                def score(s, fn=fn, bits=bits):
                    gt = gts[s["id"]]
                    pred = gt if fn is None else fn(read_fpmd(root / s["stacks"][str(bits)]))
                    return {"id": s["id"], **amplitude_phase_scores(pred, gt)}

                reports.append(EvalReport(method, int(bits), list(pool.map(score, samples))))
    return reports


def _fmt(key: str, v: float) -> str:
    return format_psnr(v) if key.endswith("psnr") else f"{v:.4f}"


def write_reports(reports, out_dir) -> None:
    """Per-(method, bits) sample CSVs plus ``summary.csv`` and ``summary.md``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for r in reports:
        with open(out / f"{r.method}_b{r.bit_depth}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("id",) + SCORE_KEYS)
            for s in r.samples:
                w.writerow([s["id"]] + [_fmt(k, s[k]) for k in SCORE_KEYS])
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("method", "bit_depth", "n") + SCORE_KEYS)
        for r in reports:
            m = r.mean
            w.writerow([r.method, r.bit_depth, len(r.samples)] + [_fmt(k, m[k]) for k in SCORE_KEYS])
    (out / "summary.md").write_text(markdown_table(reports))


def markdown_table(reports) -> str:
    """Methods as rows, one PSNR | SSIM column pair per bit depth and channel."""
    bits = sorted({r.bit_depth for r in reports}, reverse=True)
    methods = list(dict.fromkeys(r.method for r in reports))
    by = {(r.method, r.bit_depth): r.mean for r in reports}
    lines = []
    for chan in ("amp", "phase"):
        head = "| method | " + " | ".join(f"{b}-bit PSNR | {b}-bit SSIM" for b in bits) + " |"
        lines += [f"**{chan}**", "", head, "|" + "---|" * (1 + 2 * len(bits))]
        for m in methods:
            cells = []
            for b in bits:
                s = by.get((m, b))
                cells += ["-", "-"] if s is None else [_fmt("psnr", s[f"{chan}_psnr"]), _fmt("ssim", s[f"{chan}_ssim"])]
            lines.append(f"| {m} | " + " | ".join(cells) + " |")
        lines.append("")
    return "\n".join(lines)
