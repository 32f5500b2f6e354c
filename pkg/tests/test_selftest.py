from sapa_upsample.services import selftest


class TestProperties:
    def test_smooth_window(self):
        assert "trials" in selftest.smooth_window(trials=3)

    def test_detail_window(self):
        selftest.detail_window()

    def test_origin_identity(self):
        selftest.origin_identity(trials=5)

    def test_oracle(self):
        selftest.oracle(trials=3)

    def test_round_trips(self):
        selftest.round_trips()

    def test_dof_siblings(self):
        selftest.dof_siblings(trials=5)

    def test_gradients(self):
        selftest.gradients(trials=1, max_entries=8)


class TestRunSelftest:
    def test_collects_results(self):
        results = selftest.run_selftest(["detail-window", "round-trip"])
        assert [r.name for r in results] == ["detail-window", "round-trip"]
        assert all(r.passed for r in results)
        assert all(r.seconds >= 0 for r in results)

    def test_failure_is_reported(self, monkeypatch):
        def broken():
            raise AssertionError("constant was not reproduced")

        monkeypatch.setitem(selftest.PROPERTIES, "smooth-window", broken)
        (result,) = selftest.run_selftest(["smooth-window"])
        assert not result.passed
        assert "constant" in result.detail
