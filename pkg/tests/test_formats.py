import struct

import numpy as np
import pytest

from gslift.errors import FormatError
from gslift.fileio import (
    read_f32,
    read_flo,
    read_image,
    read_pfm,
    write_f32,
    write_flo,
    write_image,
    write_pfm,
)


class TestPfm:
    def test_roundtrip_byte_exact(self, tmp_path, rng):
        values = rng.uniform(0.5, 9.0, size=(13, 17)).astype(np.float32).astype(np.float64)
        p1, p2 = tmp_path / "a.pfm", tmp_path / "b.pfm"
        write_pfm(p1, values)
        back = read_pfm(p1)
        assert np.array_equal(back, values)
        write_pfm(p2, back)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_layout(self, tmp_path):
        write_pfm(tmp_path / "a.pfm", np.ones((2, 3)))
        data = (tmp_path / "a.pfm").read_bytes()
        assert data.startswith(b"Pf\n3 2\n-1.0\n")
        assert len(data) == len(b"Pf\n3 2\n-1.0\n") + 2 * 3 * 4

    def test_row_order_bottom_up(self, tmp_path):
        values = np.array([[1.0, 2.0], [3.0, 4.0]])  # row 0 is the top row
        write_pfm(tmp_path / "a.pfm", values)
        payload = (tmp_path / "a.pfm").read_bytes().split(b"-1.0\n", 1)[1]
        first_stored = struct.unpack("<2f", payload[:8])
        assert first_stored == (3.0, 4.0)  # bottom row first on disk

    def test_errors(self, tmp_path):
        p = tmp_path / "bad.pfm"
        p.write_bytes(b"PF\n2 2\n-1.0\n" + b"\0" * 48)
        with pytest.raises(FormatError):
            read_pfm(p)  # color PFM not supported
        p.write_bytes(b"Pf\n2 2\n1.0\n" + b"\0" * 16)
        with pytest.raises(FormatError):
            read_pfm(p)  # big-endian
        p.write_bytes(b"Pf\n2 2\n-1.0\n" + b"\0" * 10)
        with pytest.raises(FormatError):
            read_pfm(p)  # truncated


class TestFlo:
    def test_roundtrip_byte_exact(self, tmp_path, rng):
        flow = rng.normal(size=(7, 9, 2)).astype(np.float32).astype(np.float64)
        p1, p2 = tmp_path / "a.flo", tmp_path / "b.flo"
        write_flo(p1, flow)
        back = read_flo(p1)
        assert np.array_equal(back, flow)
        write_flo(p2, back)
        assert p1.read_bytes() == p2.read_bytes()

    def test_magic_and_dims(self, tmp_path):
        write_flo(tmp_path / "a.flo", np.zeros((3, 5, 2)))
        data = (tmp_path / "a.flo").read_bytes()
        magic, w, h = struct.unpack("<fii", data[:12])
        assert magic == 202021.25 and (w, h) == (5, 3)

    def test_errors(self, tmp_path):
        p = tmp_path / "bad.flo"
        p.write_bytes(struct.pack("<fii", 123.0, 2, 2) + b"\0" * 32)
        with pytest.raises(FormatError):
            read_flo(p)
        p.write_bytes(struct.pack("<fii", 202021.25, 2, 2) + b"\0" * 30)
        with pytest.raises(FormatError):
            read_flo(p)


class TestF32:
    def test_roundtrip_with_sidecar(self, tmp_path, rng):
        values = rng.normal(size=(3, 4, 5)).astype(np.float32).astype(np.float64)
        path = tmp_path / "latent.f32"
        write_f32(path, values)
        assert (tmp_path / "latent.f32.json").exists()
        back = read_f32(path)
        assert back.shape == (3, 4, 5)
        assert np.array_equal(back, values)

    def test_missing_sidecar(self, tmp_path):
        path = tmp_path / "x.f32"
        path.write_bytes(b"\0" * 8)
        with pytest.raises(FormatError):
            read_f32(path)

    def test_size_mismatch(self, tmp_path):
        path = tmp_path / "x.f32"
        write_f32(path, np.zeros((2, 2)))
        path.write_bytes(b"\0" * 12)
        with pytest.raises(FormatError):
            read_f32(path)


class TestImages:
    def test_png_roundtrip_exact(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(6, 8, 3)).astype(np.float64) / 255.0
        path = tmp_path / "f.png"
        write_image(path, img)
        back = read_image(path)
        assert np.array_equal(back, img)

    def test_ppm_supported(self, tmp_path):
        img = np.zeros((2, 2, 3))
        img[0, 0] = [1.0, 0.5, 0.25]
        path = tmp_path / "f.ppm"
        write_image(path, img)
        back = read_image(path)
        assert back.shape == (2, 2, 3)
        assert back[0, 0, 0] == 1.0
