import numpy as np
import pytest

from sapa_upsample.errors import ConfigurationError
from sapa_upsample.models import CostQuery, Upsampler
from sapa_upsample.services.complexity import (
    PRINTED_TOTALS,
    closed_form,
    cost,
    cost_table,
    default_query,
    printed_total_differs,
)


class TestSpotValues:
    def test_sapa_i_at_benchmark_shape(self):
        report = cost(default_query(Upsampler.SAPA_I))
        assert report.flops_per_position == 51_200
        assert report.flops == 737_280_000
        assert report.params == 0
        assert round(report.gflops, 3) == 0.737

    def test_sapa_b_params(self):
        assert cost(CostQuery(Upsampler.SAPA_B, C=256, d=32)).params == 16_384

    def test_sapa_d_params(self):
        assert cost(default_query(Upsampler.SAPA_D)).params == 139_264

    def test_carafe_total(self):
        q = default_query(Upsampler.CARAFE, H=1, W=1)
        assert cost(q).flops == 256 * 64 + 36 * 25 * 64 + 4 * 25 * 256

    def test_defaults(self):
        assert (default_query("CARAFE").d, default_query("CARAFE").K) == (64, 5)
        assert (default_query("FADE").d, default_query("FADE").K) == (64, 5)
        assert default_query("A2U").K == 3
        q = default_query("SAPA-D")
        assert (q.d, q.S, q.g, q.K) == (32, 9, 4, 5)

    def test_only_sapa_d_has_point_selection(self):
        for report in cost_table():
            assert ("I" in report.steps) == (report.query.upsampler is Upsampler.SAPA_D)

    def test_table_has_every_upsampler(self):
        assert [r.query.upsampler for r in cost_table()] == list(Upsampler)


class TestConsistency:
    def test_step_sum_equals_closed_form(self):
        rng = np.random.default_rng(0)
        ups = list(Upsampler)
        for _ in range(1000):
            up = ups[rng.integers(len(ups))]
            C, d, K, S, g, H, W = (int(v) for v in rng.integers(1, 300, size=7))
            q = CostQuery(up, C=C, d=d, K=K, S=S, g=g, H=H, W=W)
            report = cost(q)
            assert (report.flops, report.params) == closed_form(q)

    def test_params_do_not_depend_on_resolution(self):
        for up in Upsampler:
            assert cost(default_query(up, H=7, W=3)).params == cost(default_query(up, H=240, W=99)).params

    @pytest.mark.parametrize("field", ["C", "d", "K", "S", "g", "H", "W"])
    def test_flops_monotone(self, field):
        for up in Upsampler:
            base = default_query(up)
            bigger = CostQuery(**{**base.__dict__, field: getattr(base, field) + 1})
            assert cost(bigger).flops >= cost(base).flops

    def test_printed_totals_agree_except_sapa_d(self):
        for up in Upsampler:
            q = default_query(up)
            assert printed_total_differs(q) == (up is Upsampler.SAPA_D)
        q = default_query(Upsampler.SAPA_D)
        assert PRINTED_TOTALS[Upsampler.SAPA_D](q) - cost(q).flops_per_position == 2 * q.S * q.d * q.g


class TestErrors:
    def test_unknown_upsampler(self):
        with pytest.raises(ConfigurationError):
            default_query("bicubic")

    def test_non_positive_field(self):
        with pytest.raises(ConfigurationError):
            cost(CostQuery(Upsampler.SAPA_B, C=0))

    def test_string_upsampler_is_parsed(self):
        assert cost(CostQuery("sapa-b")).params == 16_384
