import os

import numpy as np
import pytest

from tfcgc import convnet
from tfcgc.boosting import adaboost_train, ensemble_predict
from tfcgc.gridio import (
    FormatError,
    config_hash,
    load_checkpoint,
    load_convnet,
    load_ensemble,
    read_grid,
    save_checkpoint,
    save_convnet,
    save_ensemble,
    write_grid,
    write_history_csv,
    write_map_csv,
    write_tvarx_text,
)


class TestGrid:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {
            "values": rng.standard_normal((37, 18)),
            "mask": rng.integers(0, 2, size=(37, 18)).astype(float),
        }
        axes = {"time": np.arange(1, 38), "freq": np.linspace(6, 14.5, 18)}
        meta = {"source": "C3", "sink": "C4", "config": config_hash({"a": 1})}
        path = tmp_path / "map.grid"
        write_grid(path, arrays, axes, meta)
        back, back_axes, back_meta = read_grid(path)
        for name in arrays:
            np.testing.assert_array_equal(back[name], arrays[name])
            assert back[name].dtype == np.float64
        np.testing.assert_array_equal(back_axes["freq"], axes["freq"])
        assert back_meta == meta

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.grid"
        path.write_bytes(b"NOTAGRID" + b"\0" * 32)
        with pytest.raises(FormatError):
            read_grid(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "map.grid"
        write_grid(path, {"v": np.ones((4, 4))})
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(FormatError):
            read_grid(path)

    def test_no_temp_leftovers(self, tmp_path):
        write_grid(tmp_path / "a.grid", {"v": np.zeros((2, 2))})
        leftovers = [f for f in os.listdir(tmp_path) if f.startswith(".tmp-")]
        assert leftovers == []

    def test_map_csv(self, tmp_path):
        values = np.array([[0.5, 1.25], [2.0, -0.125]])
        path = tmp_path / "map.csv"
        write_map_csv(path, values, [1, 2], [6.0, 6.1])
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "time,6,6.1"
        parsed = [float(x) for x in lines[1].split(",")]
        assert parsed == [1.0, 0.5, 1.25]


class TestCheckpoint:
    def test_raw_round_trip(self, tmp_path):
        tensors = {"w": np.arange(6.0).reshape(2, 3), "b": np.array([1.5])}
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, {"lr": 0.001}, tensors, extra={"note": "x"})
        config, back, extra = load_checkpoint(path)
        assert config == {"lr": 0.001}
        assert extra == {"note": "x"}
        for name in tensors:
            np.testing.assert_array_equal(back[name], tensors[name])

    def test_convnet_round_trip(self, tmp_path):
        cfg = convnet.ConvNetConfig(
            temporal_kernel=3,
            first_block_filters=2,
            block_count=2,
            spatial_height=4,
            seed=7,
        )
        model = convnet.build_convnet(cfg, (4, 20))
        rng = np.random.default_rng(1)
        images = rng.standard_normal((3, 4, 20))
        # perturb running stats so restoration is actually exercised
        forward_out = convnet.forward(model, images, mode="train", rng=rng)
        path = tmp_path / "net.ckpt"
        save_convnet(path, model)
        restored = load_convnet(path)
        np.testing.assert_array_equal(
            convnet.forward(restored, images), convnet.forward(model, images)
        )
        assert restored.config == model.config

    def test_ensemble_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        n = 16
        labels = np.array([1, -1] * (n // 2))
        images = 0.1 * rng.standard_normal((n, 4, 20))
        images[labels == 1, :2] += 1.0
        images[labels == -1, 2:] += 1.0
        cfg = convnet.ConvNetConfig(
            temporal_kernel=3,
            first_block_filters=2,
            block_count=1,
            spatial_height=4,
            batch_size=4,
            max_epochs=15,
            early_stop_patience=5,
        )
        ens = adaboost_train(images, labels, chi=2, base_config=cfg, seed=3)
        manifest = save_ensemble(tmp_path / "boost", ens)
        restored = load_ensemble(manifest)
        np.testing.assert_array_equal(
            ensemble_predict(restored, images), ensemble_predict(ens, images)
        )
        assert restored.best_joint == ens.best_joint

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, {}, {"w": np.zeros(2)})
        data = bytearray(path.read_bytes())
        # corrupt the version field inside the JSON header
        idx = bytes(data).find(b'"version": 1')
        data[idx : idx + len(b'"version": 1')] = b'"version": 9'
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            load_checkpoint(path)


class TestTextOutputs:
    def test_history_csv(self, tmp_path):
        history = [
            {"epoch": 0, "train_loss": 0.75, "score": 0.5},
            {"epoch": 1, "train_loss": 0.5, "score": 0.625},
        ]
        path = tmp_path / "hist.csv"
        write_history_csv(path, history)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,score"
        assert lines[1].split(",")[0] == "0"
        assert float(lines[2].split(",")[1]) == 0.5

    def test_tvarx_text(self, tmp_path):
        from tfcgc.bsplines import build_dictionary
        from tfcgc.identify import RofrConfig, fit_tvarx

        rng = np.random.default_rng(3)
        n = 300
        x = np.zeros(n)
        for t in range(1, n):
            x[t] = 0.6 * x[t - 1] + rng.standard_normal()
        d = build_dictionary({3}, 0, [2])
        model = fit_tvarx(np.vstack([x]), 0, [], d, RofrConfig())
        path = tmp_path / "model.txt"
        write_tvarx_text(path, model)
        text = path.read_text()
        assert text.startswith("tvarx-model v1\n")
        assert "target 0" in text
        assert "final_noise_variance" in text

    def test_config_hash_stability(self):
        a = config_hash({"x": 1, "y": [1, 2]})
        b = config_hash({"y": [1, 2], "x": 1})
        c = config_hash({"x": 2, "y": [1, 2]})
        assert a == b
        assert a != c
        assert len(a) == 16
