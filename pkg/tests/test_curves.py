import xml.etree.ElementTree as ET

import numpy as np
import pytest

from ftcurves import attacks, curves, data, engine, metrics
from ftcurves.curves import CurvePoint, SnrSweepConfig


@pytest.fixture(scope="module")
def small_setup():
    rng = np.random.default_rng(20)
    templates = rng.normal(0, 1, (10, 1024))
    layer = engine.ConvLayer(
        kernel=templates.reshape(10, 1024, 1, 1).astype(np.float32),
        bias=np.zeros(10, np.float32),
        name="lin",
    )
    net = engine.Network([layer], class_count=10)
    images = rng.normal(0, 1, (40, 1, 32, 32)).astype(np.float32)
    labels = np.concatenate([np.arange(10), rng.integers(0, 10, 30)])
    return net, data.Dataset(images, labels)


class TestSweepSnr:
    def test_point_count_is_grid_plus_clean(self, small_setup):
        net, ds = small_setup
        cfg = SnrSweepConfig(attack=curves.AWGN, snr_grid=(30.0, 10.0, 3.0), seed=1)
        points = curves.sweep_snr(net, ds, cfg)
        assert len(points) == 4
        assert points[0].strength == metrics.SNR_CAP_DB
        assert all(p.n == 40 for p in points)

    def test_awgn_strength_is_achieved_target(self, small_setup):
        net, ds = small_setup
        cfg = SnrSweepConfig(attack=curves.AWGN, snr_grid=(12.0,), seed=1)
        points = curves.sweep_snr(net, ds, cfg)
        assert points[1].strength == pytest.approx(12.0, abs=1e-6)

    def test_bim_achieved_snr_at_least_nominal(self, small_setup):
        # the projection keeps ||delta|| within the budget that the nominal
        # SNR implies, so the measured SNR can only be cleaner than nominal
        net, ds = small_setup
        grid = (25.0, 12.0, 4.0)
        cfg = SnrSweepConfig(attack=curves.BIM_L2, snr_grid=grid, steps=6, seed=2)
        points = curves.sweep_snr(net, ds, cfg)
        for nominal, p in zip(grid, points[1:]):
            assert p.strength >= nominal - 1e-6

    def test_bim_all_tgt_pools_nine_variants(self, small_setup):
        net, ds = small_setup
        cfg = SnrSweepConfig(
            attack=curves.BIM_L2, objective=attacks.ALL_TGT, snr_grid=(10.0,), steps=2, seed=1
        )
        points = curves.sweep_snr(net, ds, cfg)
        assert points[0].n == 40  # clean point is unattacked
        assert points[1].n == 360

    def test_deterministic_across_runs_and_threads(self, small_setup, tmp_path):
        net, ds = small_setup

        def run(threads):
            cfg = SnrSweepConfig(
                attack=curves.BIM_LINF,
                objective=attacks.MISCLS,
                snr_grid=(20.0, 10.0, 5.0),
                steps=3,
                seed=7,
                threads=threads,
            )
            path = tmp_path / f"t{threads}.csv"
            curves.emit_csv(curves.sweep_snr(net, ds, cfg), path)
            return path.read_bytes()

        assert run(1) == run(1) == run(4)

    def test_grid_validation(self):
        with pytest.raises(ValueError, match="decreasing"):
            SnrSweepConfig(attack=curves.AWGN, snr_grid=(10.0, 10.0))
        with pytest.raises(ValueError, match="> 0"):
            SnrSweepConfig(attack=curves.AWGN, snr_grid=(10.0, -1.0))
        with pytest.raises(ValueError, match="objective"):
            SnrSweepConfig(attack=curves.AWGN, objective=attacks.MISCLS)
        with pytest.raises(ValueError, match="attack"):
            SnrSweepConfig(attack="nope")

    def test_bim_defaults_to_miscls(self):
        cfg = SnrSweepConfig(attack=curves.BIM_L2, snr_grid=(5.0,))
        assert cfg.objective.kind == "miscls"

    def test_points_reproducible_from_archived_counts(self, small_setup):
        net, ds = small_setup
        cfg = SnrSweepConfig(attack=curves.AWGN, snr_grid=(15.0, 5.0), seed=3)
        for p in curves.sweep_snr(net, ds, cfg):
            joint = metrics.JointCounts(np.array(p.counts))
            assert metrics.mutual_information(joint) == p.mi_bits
            assert metrics.accuracy(joint) == p.accuracy
            assert joint.n == p.n

    def test_abort_carries_partial_results(self, small_setup, monkeypatch):
        net, ds = small_setup
        real_bim = attacks.bim
        calls = []

        def failing_bim(network, x, labels, cfg):
            calls.append(1)
            if len(calls) > 1:
                raise engine.ShapeError("boom")
            return real_bim(network, x, labels, cfg)

        monkeypatch.setattr(curves.attacks, "bim", failing_bim)
        cfg = SnrSweepConfig(
            attack=curves.BIM_L2, snr_grid=(20.0, 10.0, 5.0), steps=1, seed=1, chunk=512
        )
        with pytest.raises(curves.SweepAborted) as exc_info:
            curves.sweep_snr(net, ds, cfg)
        # clean point + the one grid point that succeeded
        assert len(exc_info.value.points) == 2


class TestSweepSpatial:
    def test_zero_budget_matches_clean_accuracy(self, small_setup):
        net, ds = small_setup
        points = curves.sweep_spatial(net, ds, [(0.0, 0)])
        clean = curves.clean_point(net, ds, curves.SPATIAL, curves.NO_OBJECTIVE)
        assert points[0].accuracy == clean.accuracy
        assert points[0].mi_bits == pytest.approx(clean.mi_bits, abs=1e-12)

    def test_three_budgets_three_points(self, small_setup):
        net, ds = small_setup
        points = curves.sweep_spatial(net, ds, [(0.0, 0), (5.0, 1), (10.0, 1)])
        assert len(points) == 3
        assert [p.strength for p in points] == [0.0, 5.0, 10.0]

    def test_non_monotone_budgets_rejected(self, small_setup):
        net, ds = small_setup
        with pytest.raises(ValueError, match="non-decreasing"):
            curves.sweep_spatial(net, ds, [(10.0, 1), (5.0, 0)])


class TestCsv:
    def _points(self, k=3):
        return [
            CurvePoint(
                strength=40.0 - i,
                mi_bits=3.0 - 0.5 * i,
                accuracy=0.9 - 0.1 * i,
                n=100,
                attack="awgn",
                objective="none",
            )
            for i in range(k)
        ]

    def test_empty_list_header_only(self, tmp_path):
        path = tmp_path / "c.csv"
        curves.emit_csv([], path)
        assert path.read_text() == "attack,objective,strength,mi_bits,accuracy,n\n"

    def test_line_count(self, tmp_path):
        path = tmp_path / "c.csv"
        curves.emit_csv(self._points(5), path)
        lines = path.read_bytes().decode().split("\n")
        assert lines[-1] == ""
        assert len(lines) == 7  # header + 5 points + trailing newline split

    def test_lf_line_endings(self, tmp_path):
        path = tmp_path / "c.csv"
        curves.emit_csv(self._points(2), path)
        raw = path.read_bytes()
        assert b"\r" not in raw

    def test_round_trip_six_digits(self, tmp_path):
        pts = [
            CurvePoint(
                strength=20.827853,
                mi_bits=1.2345678,
                accuracy=0.87654321,
                n=999,
                attack="bim-l2",
                objective="one-tgt",
            )
        ]
        path = tmp_path / "c.csv"
        curves.emit_csv(pts, path)
        back = curves.parse_csv(path)[0]
        assert back.attack == "bim-l2"
        assert back.objective == "one-tgt"
        assert back.n == 999
        assert back.strength == pytest.approx(20.827853, rel=1e-5)
        assert back.mi_bits == pytest.approx(1.2345678, rel=1e-5)
        assert back.accuracy == pytest.approx(0.87654321, rel=1e-5)


class TestSvg:
    def _points(self):
        return [
            CurvePoint(40.0, 3.0, 0.95, 100, "awgn", "none"),
            CurvePoint(10.0, 1.0, 0.40, 100, "awgn", "none"),
        ]

    def test_one_series_two_polylines(self, tmp_path):
        path = tmp_path / "c.svg"
        curves.render_svg({"awgn": self._points()}, path)
        text = path.read_text()
        assert text.count("<polyline") == 2

    def test_well_formed_xml(self, tmp_path):
        path = tmp_path / "c.svg"
        curves.render_svg({"a & b": self._points(), "c<d": self._points()}, path)
        root = ET.parse(path).getroot()
        assert root.tag.endswith("svg")

    def test_axis_labels_span_strength_range(self, tmp_path):
        path = tmp_path / "c.svg"
        curves.render_svg({"awgn": self._points()}, path)
        text = path.read_text()
        assert ">40<" in text and ">10<" in text

    def test_empty_series_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            curves.render_svg({}, tmp_path / "x.svg")
        with pytest.raises(ValueError):
            curves.render_svg({"a": []}, tmp_path / "x.svg")
