import json

import numpy as np
import pytest

from sapa_upsample.cli import main
from sapa_upsample.services import selftest
from sapa_upsample.services.sampling import nn_upsample
from sapa_upsample.services.tensor_io import read_pgm, read_tensor, write_tensor


class TestUpsample:
    def test_nearest_neighbor_shape(self, tmp_path, tensor_files):
        dec, _, _, _ = tensor_files(c=3, h=4, w=4)
        out = tmp_path / "out.sapt"
        assert main(["upsample", "--variant", "nn", "--decoder", str(dec), "--out", str(out)]) == 0
        assert read_tensor(out).shape == (1, 3, 8, 8)

    @pytest.mark.parametrize("variant", ["bilinear", "pixelshuffle"])
    def test_baselines(self, tmp_path, tensor_files, variant):
        dec, _, _, _ = tensor_files()
        out = tmp_path / "out.sapt"
        assert main(["upsample", "--variant", variant, "--decoder", str(dec), "--out", str(out)]) == 0
        assert read_tensor(out).shape == (1, 3, 8, 8)

    def test_sapa_i_channel_mismatch(self, tmp_path, tensor_files, capsys):
        dec, enc, _, _ = tensor_files(c=3, c_enc=4)
        code = main(["upsample", "--variant", "i", "--decoder", str(dec), "--encoder", str(enc), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "channel" in capsys.readouterr().out

    def test_missing_encoder(self, tmp_path, tensor_files):
        dec, _, _, _ = tensor_files()
        assert main(["upsample", "--variant", "b", "--decoder", str(dec), "--out", str(tmp_path / "o")]) == 2

    def test_unguided_needs_no_encoder(self, tmp_path, tensor_files):
        dec, _, _, _ = tensor_files(c=4)
        out = tmp_path / "out.sapt"
        code = main([
            "upsample", "--variant", "b", "--decoder", str(dec), "--config", "guidance=false", "K=3", "d=4",
            "--out", str(out),
        ])
        assert code == 0
        assert read_tensor(out).shape == (1, 4, 8, 8)

    @pytest.mark.parametrize("dof", ["1", "s2"])
    def test_origin_init_matches_nearest_neighbor_bytes(self, tmp_path, tensor_files, dof):
        dec, enc, decoder, _ = tensor_files(c=8, h=4, w=5)
        out = tmp_path / "d.sapt"
        code = main([
            "upsample", "--variant", "d", "--decoder", str(dec), "--encoder", str(enc),
            "--config", "offset_init=origin", f"dof={dof}", "--out", str(out),
        ])
        assert code == 0
        result = read_tensor(out)
        assert result.dtype == np.float32
        assert result.tobytes() == nn_upsample(decoder, 2).tobytes()

    def test_saved_params_reproduce_output(self, tmp_path, tensor_files):
        dec, enc, _, _ = tensor_files(c=4)
        base = ["upsample", "--variant", "b", "--decoder", str(dec), "--encoder", str(enc), "--config", "K=3", "d=4"]
        assert main(base + ["seed=5", "--save-params", str(tmp_path / "p.sapp"), "--out", str(tmp_path / "a")]) == 0
        assert main(base + ["--params", str(tmp_path / "p.sapp"), "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_unreadable_file(self, tmp_path):
        (tmp_path / "bad").write_bytes(b"garbage")
        assert main(["upsample", "--variant", "nn", "--decoder", str(tmp_path / "bad"), "--out", str(tmp_path / "o")]) == 1
        assert main(["upsample", "--variant", "nn", "--decoder", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 1

    def test_bad_config_key(self, tmp_path, tensor_files):
        dec, _, _, _ = tensor_files()
        code = main(["upsample", "--variant", "nn", "--decoder", str(dec), "--config", "colour=red", "--out", str(tmp_path / "o")])
        assert code == 2

    def test_usage_error(self):
        assert main(["upsample"]) == 2


class TestKernelMap:
    def test_constant_decoder_gives_gray_images(self, tmp_path):
        write_tensor(tmp_path / "dec", np.full((1, 2, 4, 4), 0.3))
        write_tensor(tmp_path / "enc", np.random.default_rng(0).standard_normal((1, 2, 8, 8)))
        prefix = tmp_path / "maps" / "k"
        code = main([
            "kernelmap", "--variant", "i", "--decoder", str(tmp_path / "dec"), "--encoder", str(tmp_path / "enc"),
            "--config", "K=3", "--position", "3,4", "--out-prefix", str(prefix),
        ])
        assert code == 0
        for p in range(9):
            np.testing.assert_array_equal(read_pgm(f"{prefix}_{p}.pgm"), 128)
        weights = [float(line.split()[1]) for line in (tmp_path / "maps" / "k_weights.txt").read_text().splitlines()]
        assert len(weights) == 9
        assert sum(weights) == pytest.approx(1.0, abs=1e-5)

    def test_two_clusters(self, tmp_path):
        a, b = np.array([2.0, 0.0]), np.array([0.0, 2.0])
        decoder = np.empty((1, 2, 6, 6))
        decoder[0, :, :, :3] = a[:, None, None]
        decoder[0, :, :, 3:] = b[:, None, None]
        write_tensor(tmp_path / "dec", decoder)
        write_tensor(tmp_path / "enc", np.broadcast_to(a[None, :, None, None], (1, 2, 12, 12)).copy())
        prefix = tmp_path / "k"
        code = main([
            "kernelmap", "--variant", "i", "--decoder", str(tmp_path / "dec"), "--encoder", str(tmp_path / "enc"),
            "--config", "K=3", "--position", "6,5", "--out-prefix", str(prefix),
        ])
        assert code == 0
        weights = [float(line.split()[1]) for line in (tmp_path / "k_weights.txt").read_text().splitlines()]
        assert sum(w for p, w in enumerate(weights) if p % 3 != 2) > 0.9

    def test_out_of_bounds(self, tmp_path, tensor_files):
        dec, enc, _, _ = tensor_files()
        code = main([
            "kernelmap", "--variant", "i", "--decoder", str(dec), "--encoder", str(enc),
            "--position", "8,0", "--out-prefix", str(tmp_path / "k"),
        ])
        assert code == 2


class TestFlops:
    def test_json_rows(self, capsys):
        assert main(["flops", "--preset", "fig10", "--json"]) == 0
        rows = json.loads(capsys.readouterr().out)
        assert len(rows) == 8
        by_name = {r["upsampler"]: r for r in rows}
        assert by_name["SAPA-B"]["params"] == 16_384
        assert by_name["SAPA-I"]["flops_per_position"] == 51_200
        assert by_name["SAPA-D"]["printed_total_differs"] is True
        for r in rows:
            assert sum(s["flops"] for s in r["steps"].values()) == r["flops"]

    def test_table(self):
        assert main(["flops"]) == 0

    def test_query(self, capsys):
        assert main(["flops", "--query", "upsampler=SAPA-B", "C=128", "d=16", "--json"]) == 0
        (row,) = json.loads(capsys.readouterr().out)
        assert row["params"] == 2 * 128 * 16

    def test_bad_query(self):
        assert main(["flops", "--query", "C=wide"]) == 2
        assert main(["flops", "--query", "Z=1"]) == 2
        assert main(["flops", "--query", "upsampler=bicubic"]) == 2


class TestBench:
    def test_csv_output(self, tmp_path):
        out = tmp_path / "bench.csv"
        code = main([
            "bench", "--shape", "1,8,6,6", "--variants", "nn,sapa-i,carafe", "--warmup", "0",
            "--iters", "10", "--out", str(out),
        ])
        assert code == 0
        lines = out.read_text().splitlines()
        assert len(lines) == 4
        assert lines[-1].startswith("carafe") and lines[-1].endswith("skipped")

    def test_bad_shape(self):
        assert main(["bench", "--shape", "1,8,6"]) == 2


class TestChecks:
    def test_gradcheck_passes(self):
        assert main(["gradcheck", "--variant", "b", "--seed", "1", "--max-entries", "8"]) == 0

    def test_injected_bug_fails(self, capsys):
        assert main(["gradcheck", "--variant", "d", "--seed", "2", "--inject-bug"]) == 1
        assert "decoder" in capsys.readouterr().out

    def test_selftest_subset(self):
        assert main(["selftest", "--only", "detail-window", "round-trip"]) == 0

    def test_selftest_failure(self, monkeypatch, capsys):
        def broken():
            raise AssertionError("no")

        monkeypatch.setitem(selftest.PROPERTIES, "round-trip", broken)
        assert main(["selftest", "--only", "round-trip"]) == 1
        assert "round-trip" in capsys.readouterr().out
