import numpy as np
import pytest

from mccseg.checkpoint import CheckpointError, load_arrays, save_arrays
from mccseg.config import CONFIG_DOCS, TrainConfig, dump_config, load_config, parse_config
from mccseg.exceptions import ConfigError


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.mask_ratio, cfg.mask_scale) == (0.95, 4)
        assert (cfg.beta_bg, cfg.beta_fg) == (0.25, 0.7)
        assert (cfg.tau, cfg.momentum) == (0.5, 0.9)
        assert (cfg.lambda_aff, cfg.lambda_mcc, cfg.lambda_seg, cfg.lambda_reg) == (0.2, 0.5, 0.1, 0.05)
        assert (cfg.lr_init, cfg.lr_peak, cfg.poly_power) == (1e-6, 6e-5, 0.9)
        assert (cfg.crop_size, cfg.total_iters, cfg.warmup_iters, cfg.batch_size) == (64, 3000, 150, 8)

    def test_round_trip(self):
        cfg = TrainConfig(mask_ratio=0.5, pool_negatives=True, seg_label_source="aux", lr_peak=1e-3)
        assert parse_config(dump_config(cfg)) == cfg

    def test_every_key_documented(self):
        keys = [line.split("=")[0].strip() for line in dump_config(TrainConfig()).splitlines()]
        assert set(keys) == set(CONFIG_DOCS)

    def test_comments_and_partial(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("# toy\nseed = 3   # inline\n\nlambda_mcc=0\n")
        cfg = load_config(path)
        assert cfg.seed == 3 and cfg.lambda_mcc == 0.0 and cfg.mask_ratio == 0.95

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config("mask_ration = 0.9")

    @pytest.mark.parametrize("text", ["seed = x", "pool_negatives = maybe", "nonsense", "beta_bg = 0.9", "mask_scale = 9"])
    def test_rejects_bad_values(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_digest_changes(self):
        assert TrainConfig().digest() != TrainConfig(seed=1).digest()
        assert len(TrainConfig().digest()) == 32


class TestCheckpointFormat:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {
            "a": rng.normal(size=(3, 4)),
            "b/c": rng.normal(size=(5,)).astype(np.float32),
            "i": np.arange(6, dtype=np.int64).reshape(2, 3),
            "u": np.frombuffer(b"hello", dtype=np.uint8),
            "flag": np.array([True]),
            "scalar": np.array(1.5, dtype=np.float32),
        }
        path = tmp_path / "x.ckpt"
        digest = bytes(range(32))
        save_arrays(path, arrays, digest)
        loaded, got_digest = load_arrays(path)
        assert got_digest == digest
        assert list(loaded) == list(arrays)
        for k in arrays:
            assert loaded[k].dtype == arrays[k].dtype
            assert loaded[k].shape == arrays[k].shape
            assert loaded[k].tobytes() == arrays[k].tobytes()

    def test_header(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_arrays(path, {"a": np.zeros(1)}, b"\0" * 32)
        raw = path.read_bytes()
        assert raw[:4] == b"MCCK" and raw[4:8] == (1).to_bytes(4, "little")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"NOPE" + b"\0" * 60)
        with pytest.raises(CheckpointError):
            load_arrays(path)

    def test_truncated_trailing(self, tmp_path):
        path = tmp_path / "x.ckpt"
        save_arrays(path, {"a": np.zeros(2)}, b"\0" * 32)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(CheckpointError):
            load_arrays(path)
