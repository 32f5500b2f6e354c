import logging

import pytest

from sapa_upsample.errors import ConfigurationError
from sapa_upsample.models import BenchRecord, SapaConfig
from sapa_upsample.services.bench import check_ordering, run_bench
from sapa_upsample.services.sapa import init_params


SMALL = (1, 8, 6, 6)


class TestRunBench:
    def test_one_record_per_variant(self):
        records = run_bench(SMALL, warmup=0, iters=10)
        assert [r.upsampler for r in records] == ["nn", "bilinear", "pixelshuffle", "sapa-i", "sapa-b", "sapa-d"]
        for r in records:
            assert r.status == "ok"
            assert r.iters == 10
            assert r.mean_ms >= 0 and r.std_ms >= 0

    def test_cost_only_variants_are_skipped(self, caplog):
        with caplog.at_level(logging.WARNING):
            records = run_bench(SMALL, variants=["carafe", "sapa-i", "FADE"], warmup=0, iters=10)
        assert [r.status for r in records] == ["skipped", "ok", "skipped"]
        assert records[0].mean_ms is None
        assert "skipped" in caplog.text

    def test_gflops_from_cost_model(self):
        (record,) = run_bench(SMALL, variants=["sapa-i"], warmup=0, iters=10)
        assert record.gflops == pytest.approx(8 * 25 * 8 * 36 / 1e9)
        assert record.params == 0

    @pytest.mark.parametrize("variant", ["sapa-b", "sapa-d"])
    def test_params_match_timed_operator(self, variant):
        (record,) = run_bench((1, 16, 4, 4), variants=[variant], warmup=0, iters=10)
        cfg = SapaConfig.defaults(variant[-1], 2)
        sizes = sum(v.size for v in init_params(cfg, 16, 16).as_dict().values())
        assert record.params == sizes

    def test_sapa_d_defaults_match_cost_model(self):
        (record,) = run_bench((1, 256, 2, 2), variants=["sapa-d"], warmup=0, iters=10)
        assert record.params == 139_264

    def test_too_few_iterations(self):
        with pytest.raises(ConfigurationError):
            run_bench(SMALL, iters=5)

    def test_unknown_variant(self):
        with pytest.raises(ConfigurationError):
            run_bench(SMALL, variants=["bicubic"], iters=10)


class TestOrdering:
    def _rec(self, name, ms):
        return BenchRecord(name, SMALL, 0, 10, ms, 0.0)

    def test_ordered(self):
        assert check_ordering([self._rec("sapa-i", 1), self._rec("sapa-b", 2), self._rec("sapa-d", 3)])

    def test_inversion_only_warns(self, caplog):
        with caplog.at_level(logging.WARNING):
            assert not check_ordering([self._rec("sapa-i", 5), self._rec("sapa-b", 2)])
        assert "not ordered" in caplog.text
