import csv
import io
import struct

import numpy as np
import pytest

from sapa_upsample.errors import ShapeError, TensorFormatError
from sapa_upsample.models import BenchRecord, RngSpec, SapaConfig, Variant
from sapa_upsample.services.sapa import init_params
from sapa_upsample.services.tensor_io import (
    bench_csv,
    read_named,
    read_params,
    read_pgm,
    read_tensor,
    write_named,
    write_params,
    write_pgm,
    write_tensor,
)


class TestTensorFile:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    @pytest.mark.parametrize("shape", [(5,), (2, 3), (2, 1, 4), (1, 3, 4, 2)])
    def test_bit_exact(self, tmp_path, rng, dtype, shape):
        x = rng.standard_normal(shape).astype(dtype)
        write_tensor(tmp_path / "t.sapt", x)
        back = read_tensor(tmp_path / "t.sapt")
        assert back.dtype == x.dtype
        assert back.tobytes() == x.tobytes()

    def test_header_layout(self, tmp_path):
        write_tensor(tmp_path / "t.sapt", np.zeros((1, 2, 3, 4), dtype=np.float32))
        data = (tmp_path / "t.sapt").read_bytes()
        assert data[:4] == b"SAPT"
        assert struct.unpack("<IBB4I", data[4:26]) == (1, 0, 4, 1, 2, 3, 4)
        assert len(data) == 26 + 24 * 4

    def test_bad_magic(self, tmp_path):
        (tmp_path / "t.sapt").write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(TensorFormatError, match="magic"):
            read_tensor(tmp_path / "t.sapt")

    def test_truncated_payload(self, tmp_path):
        write_tensor(tmp_path / "t.sapt", np.ones((4, 4)))
        data = (tmp_path / "t.sapt").read_bytes()
        (tmp_path / "t.sapt").write_bytes(data[:-3])
        with pytest.raises(TensorFormatError, match="truncated"):
            read_tensor(tmp_path / "t.sapt")

    def test_unknown_version(self, tmp_path):
        write_tensor(tmp_path / "t.sapt", np.ones(2))
        data = bytearray((tmp_path / "t.sapt").read_bytes())
        data[4] = 7
        (tmp_path / "t.sapt").write_bytes(bytes(data))
        with pytest.raises(TensorFormatError, match="version"):
            read_tensor(tmp_path / "t.sapt")

    def test_rejects_integer_and_rank_five(self, tmp_path):
        with pytest.raises(TensorFormatError):
            write_tensor(tmp_path / "t.sapt", np.ones(3, dtype=np.int32))
        with pytest.raises(ShapeError):
            write_tensor(tmp_path / "t.sapt", np.ones((1, 1, 1, 1, 1)))


class TestParamBundle:
    def test_round_trip(self, tmp_path):
        cfg = SapaConfig.defaults(Variant.D).with_overrides(embed_dim=4)
        params = init_params(cfg, 8, 6, RngSpec(3), random_offsets=True)
        write_params(tmp_path / "p.sapp", params)
        back = read_params(tmp_path / "p.sapp")
        assert len(back.mx) == len(back.my) == 4
        for name, value in params.as_dict().items():
            np.testing.assert_array_equal(back.as_dict()[name], value)

    def test_named_tensors(self, tmp_path):
        write_named(tmp_path / "p.sapp", {"proj": np.eye(3)})
        assert list(read_named(tmp_path / "p.sapp")) == ["proj"]

    def test_tensor_file_is_not_a_bundle(self, tmp_path):
        write_tensor(tmp_path / "t.sapt", np.ones(2))
        with pytest.raises(TensorFormatError):
            read_params(tmp_path / "t.sapt")


class TestPgm:
    def test_spans_full_range(self, tmp_path, rng):
        img = rng.standard_normal((5, 7))
        write_pgm(tmp_path / "k.pgm", img)
        assert (tmp_path / "k.pgm").read_bytes().startswith(b"P5\n7 5\n255\n")
        pixels = read_pgm(tmp_path / "k.pgm")
        assert pixels.shape == (5, 7)
        assert (pixels.min(), pixels.max()) == (0, 255)
        assert pixels[np.unravel_index(img.argmax(), img.shape)] == 255

    def test_constant_map_is_mid_gray(self, tmp_path):
        write_pgm(tmp_path / "k.pgm", np.full((3, 3), 1 / 9))
        np.testing.assert_array_equal(read_pgm(tmp_path / "k.pgm"), 128)

    @pytest.mark.parametrize("data", [b"", b"P5", b"P5\n7 5", b"P5\n7 5\n255", b"  \n"])
    def test_truncated_header(self, tmp_path, data):
        (tmp_path / "k.pgm").write_bytes(data)
        with pytest.raises(TensorFormatError, match="truncated"):
            read_pgm(tmp_path / "k.pgm")

    def test_truncated_payload(self, tmp_path):
        write_pgm(tmp_path / "k.pgm", np.eye(4))
        data = (tmp_path / "k.pgm").read_bytes()
        (tmp_path / "k.pgm").write_bytes(data[:-3])
        with pytest.raises(TensorFormatError, match="payload"):
            read_pgm(tmp_path / "k.pgm")

    def test_not_a_pgm(self, tmp_path):
        (tmp_path / "k.pgm").write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(TensorFormatError):
            read_pgm(tmp_path / "k.pgm")


class TestCsv:
    def test_bench_rows(self):
        records = [
            BenchRecord("sapa-i", (1, 8, 4, 4), 1, 10, 0.5, 0.1, 0.001, 0),
            BenchRecord("carafe", (1, 8, 4, 4), 1, 10, status="skipped"),
        ]
        rows = list(csv.DictReader(io.StringIO(bench_csv(records))))
        assert len(rows) == 2
        assert rows[0]["shape"] == "1x8x4x4"
        assert rows[1]["mean_ms"] == ""
        assert rows[1]["status"] == "skipped"
