import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from socketplug.calibrate import CalibrationHyper, CalibrationRun, PlugRecord
from socketplug.evaluate import (emit_report, evaluate, mtlc_report, promotion, promotion_pct,
                                 read_csv_rows)
from socketplug.exceptions import ConfigError, SocketPlugError
from socketplug.plug import build_bank, partition_targets


class TestEvaluate:
    def test_perfect(self, rng):
        y = rng.normal(size=(4, 2, 3))
        t = evaluate(y, y)
        assert t.mse == 0 and t.mae == 0 and not t.mse_per_horizon.any()

    def test_hand_values(self):
        t = evaluate([[[1.0, 2.0]]], [[[0.0, 0.0]]])
        assert (t.mse, t.mae) == (2.5, 1.5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            evaluate(np.zeros((1, 2, 3)), np.zeros((1, 2, 4)))

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=3, max_dims=3, max_side=6),
                      elements=st.floats(-50, 50)), st.data())
    def test_marginals_average_to_overall(self, pred, data):
        true = data.draw(hnp.arrays(np.float64, pred.shape, elements=st.floats(-50, 50)))
        t = evaluate(pred, true)
        for m in ("mse", "mae"):
            overall = getattr(t, m)
            assert abs(getattr(t, f"{m}_per_variable").mean() - overall) <= 1e-9 * max(1, overall)
            assert abs(getattr(t, f"{m}_per_horizon").mean() - overall) <= 1e-9 * max(1, overall)


class TestPromotion:
    def test_equal(self):
        t = evaluate([[[1.0]]], [[[0.0]]])
        assert [p.formatted() for p in promotion(t, t)] == ["0.000%", "0.000%"]

    def test_table_pair(self):
        assert round(promotion_pct(0.382, 0.295), 3) == 22.775

    def test_degradation_sign(self):
        assert promotion_pct(2.0, 2.5) == -25.0

    def test_zero_base(self):
        with pytest.raises(SocketPlugError):
            promotion_pct(0.0, 1.0)


def _fake_run(stops):
    bank = build_bank(partition_targets(len(stops), 2, "variable", len(stops)), d=2)
    recs = [PlugRecord(i, [1.0] * s, [1.0] * s, s, 1, 1.0, True) for i, s in enumerate(stops)]
    return CalibrationRun("non-collective", 0, CalibrationHyper(), bank, recs)


class TestMtlc:
    def test_single_plug(self):
        r = mtlc_report(_fake_run([7]))
        assert r["stop_range"] == 0 and not r["mtlc_evidence"]

    def test_flat(self):
        assert mtlc_report(_fake_run([6, 6, 6, 6]))["stop_std"] == 0.0

    def test_spread_flagged(self):
        r = mtlc_report(_fake_run([6, 9, 12]))
        assert r["stop_range"] == 6 and r["mtlc_evidence"]
        assert (r["stop_min"], r["stop_max"]) == (6, 12)


ROWS = [dict(setting=f"M={m}", scope="horizon", index=h, mse=0.1 * m + 0.01 * h, mae=0.2)
        for m in (1, 3, 7, 21) for h in range(5)]


class TestReport:
    def test_empty_csv_is_header_only(self, tmp_path):
        p = emit_report([], "csv", tmp_path / "e.csv")
        assert p.read_text() == "setting,scope,index,mse,mae\n"

    @pytest.mark.parametrize("fmt", ["csv", "json", "markdown"])
    def test_deterministic_bytes(self, tmp_path, fmt):
        a = emit_report(ROWS, fmt, tmp_path / "a").read_bytes()
        b = emit_report([dict(r) for r in ROWS], fmt, tmp_path / "b").read_bytes()
        assert a == b

    def test_csv_round_trip(self, tmp_path):
        emit_report(ROWS, "csv", tmp_path / "r.csv")
        assert read_csv_rows(tmp_path / "r.csv") == ROWS

    def test_json_content(self, tmp_path):
        data = json.loads(emit_report(ROWS[:2], "json", tmp_path / "r.json").read_text())
        assert data[1]["index"] == 1

    def test_svg_polylines(self, tmp_path):
        p = emit_report(ROWS, "svg-lineplot", tmp_path / "p.svg", x="index", y="mse", series="setting")
        root = ET.parse(p).getroot()
        ns = "{http://www.w3.org/2000/svg}"
        assert len(root.findall(f"{ns}polyline")) == 4
        texts = [t.text for t in root.iter(f"{ns}text")]
        assert "index" in texts and "mse" in texts

    def test_markdown_table(self, tmp_path):
        lines = emit_report(ROWS[:1], "markdown", tmp_path / "r.md").read_text().splitlines()
        assert lines[0] == "| setting | scope | index | mse | mae |"
        assert lines[2].startswith("| M=1 | horizon | 0 | 0.100000")

    def test_unknown_format(self, tmp_path):
        with pytest.raises(ConfigError):
            emit_report(ROWS, "xlsx", tmp_path / "x")

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            emit_report(ROWS, "csv", tmp_path / "missing" / "dir" / "r.csv")
