import logging
import math

import numpy as np
import pytest

from fpmkit import autodiff as ad
from fpmkit.forward import synthesize_dataset
from fpmkit.geometry import desk_geometry
from fpmkit.network import LWGNetConfig, LWGNetParams
from fpmkit.toyimages import toy_pairs
from fpmkit.training import TrainConfig, TrainingError, load_split, train


@pytest.fixture(scope="module")
def toy_set(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    g = desk_geometry(array_side=3, obj_size_px=32, meas_size_px=16)
    amps, phases = toy_pairs(6, 40, seed=1)
    synthesize_dataset(amps, phases, g, [16, 8], root, seed=0, splits=(4 / 6, 1 / 6, 1 / 6), phase_margin=0.5)
    return root


def small_model(**kw):
    return LWGNetConfig(**{"n_stages": 1, "channels": 4, "eta": 1.0, **kw})


def test_split_loading(toy_set):
    assert len(load_split(toy_set, "train", 16)) == 4
    assert len(load_split(toy_set, "val", 8)) == 1
    with pytest.raises(TrainingError):
        load_split(toy_set, "train", 12)


def test_single_sample_overfit(toy_set):
    sample = load_split(toy_set, "train", 16)[:1]
    cfg = TrainConfig(lr=3e-2, batch_size=1, epochs=500, scheduler_patience=1000)
    _, rows = train(None, cfg, small_model(channels=8, eta=0.0), train_samples=sample, val_samples=[])
    assert rows[-1]["train_loss"] < 0.01 * rows[0]["train_loss"]


def test_seed_reproducible_and_thread_independent(toy_set, tmp_path):
    cfg = TrainConfig(lr=1e-2, batch_size=2, epochs=2, seed=5)
    logs = []
    for i, threads in enumerate((1, 3)):
        out = tmp_path / f"w{i}.lwgw"
        train(toy_set, cfg, small_model(), out_path=out, threads=threads)
        logs.append(((tmp_path / f"w{i}.lwgw.metrics.csv").read_text(), out.read_bytes()))
    assert logs[0] == logs[1]


def test_zero_lr_leaves_params(toy_set):
    cfg = TrainConfig(lr=0.0, batch_size=2, epochs=2)
    init = LWGNetParams.init(small_model(n_leds=9), np.random.default_rng(3))
    best, _ = train(toy_set, cfg, small_model(), init_params=init)
    for k in init.arrays:
        assert np.array_equal(best.arrays[k], init.arrays[k])


def test_zero_epochs_writes_init(toy_set, tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        train(toy_set, TrainConfig(epochs=0), small_model(), out_path=tmp_path / "w.lwgw")
    assert "epochs=0" in caplog.text
    loaded = LWGNetParams.load(tmp_path / "w.lwgw")
    assert loaded.cfg.n_leds == 9


def test_validation_logged(toy_set):
    _, rows = train(toy_set, TrainConfig(lr=1e-2, batch_size=4, epochs=2), small_model())
    assert [r["epoch"] for r in rows] == [0, 1]
    assert all(math.isfinite(r["val_psnr"]) for r in rows)


def test_non_finite_loss_dumps_batch(toy_set, tmp_path):
    def poison(pred, gt):
        return ad.mul(ad.sum_(ad.absolute(pred)), np.nan)

    with pytest.raises(TrainingError):
        train(toy_set, TrainConfig(epochs=1), small_model(), out_path=tmp_path / "w.lwgw", perceptual=poison)
    assert (tmp_path / "w.lwgw.nan_dump.json").exists()
