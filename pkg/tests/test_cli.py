import json

import numpy as np
import pytest
from PIL import Image

from fpmkit.cli import field_to_pngs, main
from fpmkit.field import read_cfld, write_cfld
from fpmkit.geometry import desk_geometry
from fpmkit.toyimages import toy_pairs

SMALL = desk_geometry(array_side=3, obj_size_px=32, meas_size_px=16)


@pytest.fixture(scope="module")
def image_dirs(tmp_path_factory):
    root = tmp_path_factory.mktemp("imgs")
    amps, phases = toy_pairs(5, 40, seed=11)
    for name, imgs in (("amp", amps), ("phase", phases)):
        (root / name).mkdir()
        for i, img in enumerate(imgs):
            Image.fromarray(np.rint(img * 255).astype(np.uint8)).save(root / name / f"img{i:02d}.png")
    cfg = {"geometry": SMALL.to_dict(), "splits": [0.6, 0.2, 0.2], "phase_margin": 0.5}
    (root / "sim.json").write_text(json.dumps(cfg))
    return root


def simulate(image_dirs, out, *extra):
    return main(
        ["simulate", "--config", str(image_dirs / "sim.json"), "--amp", str(image_dirs / "amp"),
         "--phase", str(image_dirs / "phase"), "--out", str(out), *extra]
    )


@pytest.fixture(scope="module")
def dataset(image_dirs, tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert simulate(image_dirs, out, "--bits", "16,12,8", "--seed", "3") == 0
    return out


def artifact_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "run.json"}


def test_simulate_writes_three_quantized_stacks(dataset):
    manifest = json.loads((dataset / "manifest.json").read_text())
    assert len(manifest["samples"]) == 5
    for s in manifest["samples"]:
        for b in ("16", "12", "8"):
            assert (dataset / s["stacks"][b]).exists()
    run = json.loads((dataset / "run.json").read_text())
    assert run["command"] == "simulate" and run["seed"] == 3


def test_simulate_deterministic_across_threads(image_dirs, dataset, tmp_path):
    assert simulate(image_dirs, tmp_path / "again", "--bits", "16,12,8", "--seed", "3", "--threads", "4") == 0
    assert artifact_bytes(tmp_path / "again") == artifact_bytes(dataset)


def test_simulate_empty_input(image_dirs, tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code = main(["simulate", "--amp", str(tmp_path / "empty"), "--phase", str(image_dirs / "phase"), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "no input images" in capsys.readouterr().err


def test_reconstruct_wf_trace(dataset, tmp_path):
    stack = dataset / "s0000_ideal.fpmd"
    out = tmp_path / "wf.cfld"
    assert main(["reconstruct", "--method", "wf", "--input", str(stack), "--out", str(out), "--iters", "300"]) == 0
    lines = (tmp_path / "wf.cfld.trace.csv").read_text().splitlines()
    assert lines[0] == "iteration,objective"
    values = [float(line.split(",")[1]) for line in lines[1:]]
    assert values[-1] < 1e-3 * values[0]
    assert main(["reconstruct", "--method", "ap", "--input", str(stack), "--out", str(tmp_path / "ap.cfld"), "--iters", "5"]) == 0
    assert read_cfld(out).shape == read_cfld(tmp_path / "ap.cfld").shape == (32, 32)


def test_reconstruct_missing_weights(dataset, tmp_path):
    args = ["reconstruct", "--method", "lwgnet", "--input", str(dataset / "s0000_b16.fpmd"), "--out", str(tmp_path / "o.cfld")]
    assert main(args) == 3
    assert main(args + ["--weights", str(tmp_path / "nope.lwgw")]) == 3


def test_reconstruct_format_error(tmp_path):
    bad = tmp_path / "bad.fpmd"
    bad.write_bytes(b"garbage" * 4)
    assert main(["reconstruct", "--method", "wf", "--input", str(bad), "--out", str(tmp_path / "o.cfld")]) == 4


def test_reconstruct_diverging_step_is_numeric(dataset, tmp_path):
    args = ["reconstruct", "--method", "wf", "--input", str(dataset / "s0000_ideal.fpmd"), "--out", str(tmp_path / "o.cfld"),
            "--eta", "1e6", "--no-halving", "--iters", "10"]
    assert main(args) == 5


def train_args(dataset, out, cfg_path, *extra):
    return ["train", "--manifest", str(dataset / "manifest.json"), "--config", str(cfg_path), "--out", str(out), *extra]


@pytest.fixture(scope="module")
def train_config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "train.json"
    p.write_text(json.dumps({"train": {"lr": 1e-2, "batch_size": 2, "epochs": 2, "seed": 4},
                             "model": {"n_stages": 1, "channels": 3, "eta": 1.0}}))
    return p


def test_train_deterministic_and_reconstruct(dataset, train_config, tmp_path):
    a, b = tmp_path / "a.lwgw", tmp_path / "b.lwgw"
    assert main(train_args(dataset, a, train_config, "--threads", "1")) == 0
    assert main(train_args(dataset, b, train_config, "--threads", "3")) == 0
    for suffix in ("", ".json", ".metrics.csv"):
        assert (tmp_path / f"a.lwgw{suffix}").read_bytes() == (tmp_path / f"b.lwgw{suffix}").read_bytes()
    outs = []
    for i, threads in enumerate(("1", "2")):
        o = tmp_path / f"r{i}.cfld"
        args = ["reconstruct", "--method", "lwgnet", "--input", str(dataset / "s0001_b16.fpmd"), "--weights", str(a),
                "--out", str(o), "--threads", threads]
        assert main(args) == 0
        outs.append(o.read_bytes())
    assert outs[0] == outs[1]
    wrong = ["reconstruct", "--method", "ablation-post", "--input", str(dataset / "s0001_b16.fpmd"), "--weights", str(a),
             "--out", str(tmp_path / "x.cfld")]
    assert main(wrong) == 2


def test_train_zero_epochs(dataset, train_config, tmp_path, caplog):
    out = tmp_path / "w0.lwgw"
    assert main(train_args(dataset, out, train_config, "--epochs", "0")) == 0
    assert out.exists() and "epochs=0" in caplog.text


def test_train_missing_manifest(train_config, tmp_path):
    args = ["train", "--manifest", str(tmp_path / "none.json"), "--config", str(train_config), "--out", str(tmp_path / "w")]
    assert main(args) == 3


def test_eval_ground_truth_and_reports(dataset, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", "--manifest", str(dataset / "manifest.json"), "--methods", "gt,init", "--bits", "16,8",
                 "--out", str(out), "--split", "train"]) == 0
    rows = (out / "summary.csv").read_text().splitlines()
    assert rows[0] == "method,bit_depth,n,amp_psnr,amp_ssim,phase_psnr,phase_ssim"
    assert rows[1] == "gt,16,3,exact,1.0000,exact,1.0000"
    for name in ("gt_b16.csv", "gt_b8.csv", "init_b16.csv", "summary.md"):
        assert (out / name).exists()


def test_eval_missing_weights(dataset, tmp_path):
    code = main(["eval", "--manifest", str(dataset / "manifest.json"), "--methods", "lwgnet", "--bits", "16",
                 "--out", str(tmp_path / "ev")])
    assert code == 3


def test_plot(tmp_path):
    f = np.full((6, 9), 0.5 * np.exp(0.3j))
    write_cfld(tmp_path / "c.cfld", f)
    assert main(["plot", "--field", str(tmp_path / "c.cfld"), "--out", str(tmp_path / "c")]) == 0
    for name in ("amp", "phase"):
        with Image.open(tmp_path / f"c_{name}.png") as im:
            assert im.mode == "L" and im.size == (9, 6)
            arr = np.asarray(im)
        assert (arr == arr[0, 0]).all()
    assert main(["plot", "--field", str(tmp_path / "missing.cfld"), "--out", str(tmp_path / "m")]) == 4


def test_plot_phase_tracks_source(dataset, image_dirs, tmp_path):
    manifest = json.loads((dataset / "manifest.json").read_text())
    sample = manifest["samples"][0]
    idx = int(sample["id"][1:])
    assert main(["plot", "--field", str(dataset / sample["object"]), "--out", str(tmp_path / "p")]) == 0
    with Image.open(tmp_path / "p_phase.png") as im:
        png = np.asarray(im, dtype=float)
    with Image.open(image_dirs / "phase" / f"img{idx:02d}.png") as im:
        src = np.asarray(im, dtype=float)[4:36, 4:36]
    assert np.corrcoef(png.ravel(), src.ravel())[0, 1] > 0.99


def test_field_to_pngs_ranges():
    amp8, phase8 = field_to_pngs(np.array([[0.0, 1.0], [2.0, -1.0]]))
    assert amp8.tolist() == [[0, 128], [255, 128]]
    assert phase8.tolist() == [[128, 128], [128, 255]]


def test_params_count(capsys):
    assert main(["params-count", "--stages", "3", "--channels", "32", "--leds", "225"]) == 0
    assert "parameters" in capsys.readouterr().out
