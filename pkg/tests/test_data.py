import numpy as np
import pytest

from cracenet.data import (
    CorruptCheckpointError,
    PnmParseError,
    gen_synthetic,
    load_checkpoint,
    load_dataset,
    load_gray,
    load_rgb,
    parse_config_text,
    save_checkpoint,
    save_gray,
    save_rgb,
)
from cracenet.data import ConfigFileError


class TestPnm:
    def test_gray_round_trip_quantization_bound(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.uniform(size=(9, 7))
        path = tmp_path / "m.pgm"
        save_gray(path, arr)
        back = load_gray(path)
        assert back.shape == (9, 7)
        assert np.max(np.abs(back - arr)) <= 1.0 / 510.0

    def test_rgb_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        arr = rng.uniform(size=(3, 5, 6))
        path = tmp_path / "m.ppm"
        save_rgb(path, arr)
        back = load_rgb(path)
        assert back.shape == (3, 5, 6)
        assert np.max(np.abs(back - arr)) <= 1.0 / 510.0

    def test_minimal_header_forms(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P5 4 4 255\n" + bytes(range(16)))
        arr = load_gray(path)
        assert arr.shape == (4, 4)
        assert arr[0, 1] == 1.0 / 255.0

    def test_header_comments(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes(4))
        assert load_gray(path).shape == (2, 2)

    def test_truncated_payload_reports_offset(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P5 4 4 255\n" + bytes(10))
        with pytest.raises(PnmParseError) as err:
            load_gray(path)
        assert "offset" in str(err.value)

    def test_bad_magic_and_tokens(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P7 1 1 255\n\x00")
        with pytest.raises(PnmParseError):
            load_gray(path)
        path.write_bytes(b"P5 x 4 255\n" + bytes(16))
        with pytest.raises(PnmParseError):
            load_gray(path)

    def test_sixteen_bit_rejected(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P5 1 1 65535\n\x00\x00")
        with pytest.raises(PnmParseError):
            load_gray(path)


class TestSynthetic:
    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        gen_synthetic(a, n=3, size=32, seed=11, with_depth=True)
        gen_synthetic(b, n=3, size=32, seed=11, with_depth=True)
        files_a = sorted(p.relative_to(a) for p in a.rglob("*.p*m"))
        files_b = sorted(p.relative_to(b) for p in b.rglob("*.p*m"))
        assert files_a == files_b
        for rel in files_a:
            assert (a / rel).read_bytes() == (b / rel).read_bytes()

    def test_foreground_fraction_bounds(self, tmp_path):
        gen_synthetic(tmp_path / "d", n=6, size=48, seed=3)
        for s in load_dataset(tmp_path / "d"):
            assert 0.05 <= s.gt.mean() <= 0.6
            assert set(np.unique(s.gt)) <= {0.0, 1.0}

    def test_depth_separation(self, tmp_path):
        gen_synthetic(tmp_path / "d", n=5, size=48, seed=4, with_depth=True)
        for s in load_dataset(tmp_path / "d", with_depth=True):
            fg = s.gt == 1
            assert s.depth[fg].mean() - s.depth[~fg].mean() >= 0.2

    def test_depth_only_cue_hides_shapes_in_rgb(self, tmp_path):
        gen_synthetic(tmp_path / "d", n=4, size=48, seed=5, depth_only_cue=True)
        for s in load_dataset(tmp_path / "d", with_depth=True):
            fg = s.gt == 1
            # RGB contrast between object and background stays tiny
            contrast = abs(s.image[:, fg].mean() - s.image[:, ~fg].mean())
            assert contrast < 0.12
            assert s.depth[fg].mean() - s.depth[~fg].mean() >= 0.2


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(2)
        arrays = {
            "w": rng.normal(size=(3, 4, 5)),
            "b": rng.normal(size=(7,)),
            "scalar": np.array(3.25),
        }
        config = {"seed": 7, "mode": "rgb", "nested": {"x": [1, 2, 3]}}
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, config, arrays)
        cfg2, arrays2 = load_checkpoint(path)
        assert cfg2 == config
        assert set(arrays2) == set(arrays)
        for k in arrays:
            assert np.array_equal(arrays[k], arrays2[k])
            assert arrays[k].dtype == arrays2[k].dtype == np.float64

    def test_magic_bytes(self, tmp_path):
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, {}, {"x": np.zeros(2)})
        assert path.read_bytes().startswith(b"CRACEv1\x00")

    def test_tamper_detected(self, tmp_path):
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, {"a": 1}, {"x": np.arange(4.0)})
        raw = bytearray(path.read_bytes())
        raw[30] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)

    def test_bad_magic_detected(self, tmp_path):
        path = tmp_path / "c.ckpt"
        path.write_bytes(b"NOTDATA!" + bytes(32))
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)


class TestConfigText:
    def test_parse(self):
        raw = parse_config_text(
            """
            # training recipe
            total_steps = 500
            lr_head = 0.05   # decoder rate
            hflip = true
            """
        )
        assert raw == {"total_steps": "500", "lr_head": "0.05", "hflip": "true"}

    def test_bad_line(self):
        with pytest.raises(ConfigFileError):
            parse_config_text("just some words")

    def test_duplicate_key(self):
        with pytest.raises(ConfigFileError):
            parse_config_text("a = 1\na = 2")
