"""DCTF tensor files, netpbm images, manifests, checkpoint bundles."""

import numpy as np
import pytest

from dualalign.errors import DataError
from dualalign.formats import (dctf_bytes, load_checkpoint, parse_kv, read_dctf,
                               read_dctf_record, read_pgm, read_ppm,
                               resolve_checkpoint_stem, save_checkpoint,
                               write_dctf, write_pgm, write_ppm)


class TestDctf:
    def test_header_layout(self):
        arr = np.arange(24, dtype=np.float32).reshape(1, 2, 3, 4)
        blob = dctf_bytes(arr)
        assert blob[:4] == b"DCTF"
        assert blob[4] == 1          # version
        assert blob[5] == 4          # ndim
        dims = np.frombuffer(blob[6:22], dtype="<u4")
        np.testing.assert_array_equal(dims, [1, 2, 3, 4])
        payload = np.frombuffer(blob[22:], dtype="<f4")
        np.testing.assert_array_equal(payload, arr.ravel())

    def test_round_trip(self, tmp_path):
        arr = np.random.default_rng(0).standard_normal((2, 3, 4, 5)).astype(np.float32)
        path = tmp_path / "t.dctf"
        write_dctf(path, arr)
        np.testing.assert_array_equal(read_dctf(path), arr)

    def test_bad_magic_names_source(self, tmp_path):
        path = tmp_path / "bad.dctf"
        path.write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(DataError, match="bad.dctf"):
            read_dctf(path)

    def test_truncated_payload(self):
        arr = np.zeros((1, 1, 2, 2), dtype=np.float32)
        blob = dctf_bytes(arr)[:-4]
        with pytest.raises(DataError, match="truncated"):
            read_dctf_record(blob, 0)

    def test_non_4d_rejected(self):
        with pytest.raises(ValueError, match="4-D"):
            dctf_bytes(np.zeros((2, 2), dtype=np.float32))


class TestNetpbm:
    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = (rng.integers(0, 256, size=(3, 5, 7)) / 255.0).astype(np.float32)
        path = tmp_path / "img.ppm"
        write_ppm(path, img)
        np.testing.assert_allclose(read_ppm(path), img, atol=1e-7)

    def test_ppm_header(self, tmp_path):
        path = tmp_path / "img.ppm"
        write_ppm(path, np.zeros((3, 2, 4), dtype=np.float32))
        assert path.read_bytes().startswith(b"P6\n4 2\n255\n")

    def test_ppm_rounds_half_to_even(self, tmp_path):
        # 0.5/255 scales to exactly 0.5, which rounds to 0 (even), not 1
        img = np.full((3, 1, 1), 0.5 / 255.0, dtype=np.float64)
        path = tmp_path / "half.ppm"
        write_ppm(path, img)
        assert path.read_bytes()[-3:] == bytes([0, 0, 0])
        img = np.full((3, 1, 1), 1.5 / 255.0, dtype=np.float64)
        write_ppm(path, img)
        assert path.read_bytes()[-3:] == bytes([2, 2, 2])

    def test_ppm_clamps(self, tmp_path):
        img = np.array([[[-0.5]], [[0.5]], [[1.7]]], dtype=np.float32)
        path = tmp_path / "clamp.ppm"
        write_ppm(path, img)
        assert path.read_bytes()[-3:] == bytes([0, 128, 255])

    def test_ppm_comment_in_header(self, tmp_path):
        raster = bytes(range(12))
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n# a comment\n2 2\n255\n" + raster)
        img = read_ppm(path)
        assert img.shape == (3, 2, 2)

    def test_pgm_round_trip(self, tmp_path):
        labels = np.random.default_rng(2).integers(0, 5, size=(6, 4))
        path = tmp_path / "lbl.pgm"
        write_pgm(path, labels)
        np.testing.assert_array_equal(read_pgm(path), labels)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P6\n1 1\n255\n" + bytes(3))
        with pytest.raises(DataError, match="P5"):
            read_pgm(path)


class TestKv:
    def test_round_trip(self):
        text = "alpha = 1\nbeta = two words\n# comment\n\ngamma = 3.5\n"
        parsed = parse_kv(text)
        assert parsed == {"alpha": "1", "beta": "two words", "gamma": "3.5"}

    def test_bad_line_reports_number(self):
        with pytest.raises(DataError, match=":2:"):
            parse_kv("ok = 1\nnot a pair\n")


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        tensors = {
            "a.kernel": rng.standard_normal((2, 3, 3, 3)).astype(np.float32),
            "a.bias": rng.standard_normal((1, 2, 1, 1)).astype(np.float32),
        }
        meta = {"iteration": "42", "stage": "joint"}
        stem = tmp_path / "ckpt"
        save_checkpoint(stem, tensors, meta)
        loaded, loaded_meta = load_checkpoint(stem)
        assert loaded_meta["iteration"] == "42"
        for name, arr in tensors.items():
            np.testing.assert_array_equal(loaded[name], arr)

    def test_resolve_accepts_either_suffix(self, tmp_path):
        stem = tmp_path / "ckpt"
        assert resolve_checkpoint_stem(stem.with_suffix(".dctf")) == stem
        assert resolve_checkpoint_stem(stem.with_suffix(".manifest")) == stem
        assert resolve_checkpoint_stem(stem) == stem

    def test_missing_file_is_data_error(self, tmp_path):
        with pytest.raises(DataError, match="missing checkpoint"):
            load_checkpoint(tmp_path / "nope")

    def test_corrupt_blob_names_file(self, tmp_path):
        stem = tmp_path / "ckpt"
        save_checkpoint(stem, {"t": np.zeros((1, 1, 1, 1), dtype=np.float32)}, {})
        blob = bytearray(stem.with_suffix(".dctf").read_bytes())
        blob[0] = 0x58
        stem.with_suffix(".dctf").write_bytes(bytes(blob))
        with pytest.raises(DataError, match="ckpt.dctf"):
            load_checkpoint(stem)

    def test_manifest_shape_mismatch(self, tmp_path):
        stem = tmp_path / "ckpt"
        save_checkpoint(stem, {"t": np.zeros((1, 2, 3, 4), dtype=np.float32)}, {})
        manifest = stem.with_suffix(".manifest").read_text()
        stem.with_suffix(".manifest").write_text(manifest.replace("1 2 3 4", "1 2 4 3"))
        with pytest.raises(DataError, match="shape"):
            load_checkpoint(stem)
