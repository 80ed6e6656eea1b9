import csv
import io
import json

import numpy as np
import pytest

from app.core.config import settings
from app.core.errors import NonSquareGrid, VerificationFailed
from app.models.experiment import ExperimentSpec
from app.services import bench
from app.services.oracle import max_relative_error


def test_generated_matrices_are_seeded_and_bounded():
    x = bench.generate_matrix(10, 7, 3, seed=5)
    y = bench.generate_matrix(10, 7, 3, seed=5)
    assert x == y
    assert x.occupancy == 1.0
    assert np.abs(x.data).max() <= 1.0
    assert bench.generate_matrix(10, 7, 3, seed=6) != x


def test_oracle_error_is_relative_to_magnitudes(rng):
    a, b, c0 = rng.uniform(-1, 1, (5, 4)), rng.uniform(-1, 1, (4, 3)), rng.uniform(-1, 1, (5, 3))
    exact = c0 + a @ b
    assert max_relative_error(exact, a, b, c0) == 0.0
    off = exact.copy()
    off[2, 1] += 1e-6
    scale = (np.abs(a) @ np.abs(b) + np.abs(c0))[2, 1]
    assert max_relative_error(off, a, b, c0) == pytest.approx(1e-6 / scale, rel=1e-6)


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(shape="square")
    with pytest.raises(ValueError):
        ExperimentSpec(shape="rect", mn=8)
    with pytest.raises(ValueError):
        ExperimentSpec(shape="square", n=8, grid="2by2")
    assert ExperimentSpec(shape="rect", mn=8, k=64).sizes == (8, 8, 64)


def test_auto_algorithm():
    square = ExperimentSpec(shape="square", n=64, grid="2x2")
    assert bench.resolve_algorithm(square) == "cannon"
    skinny = ExperimentSpec(shape="rect", mn=8, k=4096, grid="2x2")
    assert bench.resolve_algorithm(skinny) == "tallskinny"
    assert bench.resolve_algorithm(square.model_copy(update={"grid": "1x3"})) == "tallskinny"
    with pytest.raises(NonSquareGrid):
        bench.resolve_algorithm(ExperimentSpec(shape="square", n=8, grid="1x2", algo="cannon"))


def test_square_experiment_verifies():
    spec = ExperimentSpec(shape="square", n=44, block=11, grid="2x2", threads=3, densify=True, repeats=2, verify=True)

    report = bench.run_experiment(spec)

    assert report.verified is True
    assert report.max_relative_error <= settings.VERIFY_RTOL
    assert report.config.algorithm == "cannon"
    assert report.config.ranks == 4
    assert len(report.wall_times) == 2
    assert report.wall_time_median == pytest.approx(float(np.median(report.wall_times)))
    assert report.densify is not None
    assert len(report.comm.ranks) == 4


def test_rect_experiment_verifies():
    spec = ExperimentSpec(shape="rect", mn=16, k=512, block=8, grid="1x4", algo="tallskinny", repeats=1, verify=True)
    report = bench.run_experiment(spec)
    assert report.verified is True
    assert report.config.algorithm == "tallskinny"
    assert report.comm.steps == 2


def test_failed_verification_is_reported(monkeypatch):
    monkeypatch.setattr(settings, "VERIFY_RTOL", -1.0)
    report = bench.run_experiment(ExperimentSpec(shape="square", n=8, block=4, repeats=1, verify=True))
    assert report.verified is False
    with pytest.raises(VerificationFailed):
        bench.ensure_verified(report)


def test_unverified_runs_skip_the_oracle():
    report = bench.run_experiment(ExperimentSpec(shape="square", n=8, block=4, repeats=1))
    assert report.verified is None
    assert bench.ensure_verified(report) is report


def test_compare_densify_emits_a_ratio_row():
    spec = ExperimentSpec(shape="square", n=24, block=4, grid="2x2", repeats=1, verify=True)
    reports, rows = bench.compare_densify(spec)
    assert [r.config.densified for r in reports] == [False, True]
    assert all(r.verified for r in reports)
    assert len(rows) == 1
    row = rows[0]
    assert row.ratio == pytest.approx(row.t_blocked / row.t_densified)


def test_ratio_table_pairs_matching_configs():
    spec = ExperimentSpec(shape="square", n=8, block=4, repeats=1)
    lone = bench.run_experiment(spec.model_copy(update={"threads": 2}))
    blocked = bench.run_experiment(spec)
    dense = bench.run_experiment(spec.model_copy(update={"densify": True}))
    rows = bench.ratio_table([lone, blocked, dense])
    assert len(rows) == 1
    assert rows[0].threads == 1


def test_parse_sweep():
    assert bench.parse_sweep("grids=1x12,4x3,6x2,12x1") == [(1, 12), (4, 3), (6, 2), (12, 1)]
    for bad in ["1x12", "grids=", "grids=1x0", "grids=axb"]:
        with pytest.raises(ValueError):
            bench.parse_sweep(bad)


def test_sweep_rows_follow_the_grid_list():
    spec = ExperimentSpec(shape="square", n=24, block=4, repeats=1, verify=True)

    reports, rows = bench.sweep(spec, [(1, 2), (4, 1), (2, 2)])

    assert [(r.ranks, r.threads) for r in rows] == [(1, 2), (4, 1), (2, 2)]
    assert [r.grid for r in rows] == ["1x1", "2x2", "1x2"]
    assert [r.algorithm for r in rows] == ["cannon", "cannon", "tallskinny"]
    assert all(r.verified for r in rows)
    assert len(reports) == 3


def test_csv_rendering_has_fixed_columns():
    report = bench.run_experiment(ExperimentSpec(shape="square", n=8, block=4, repeats=1))
    text = bench.render_csv([report, report])
    rows = list(csv.DictReader(io.StringIO(text)))
    assert list(rows[0]) == bench.REPORT_CSV_FIELDS
    assert len(rows) == 2
    assert rows[0]["algorithm"] == "cannon"
    assert bench.render_csv([]) == ""


def test_json_rendering_roundtrips():
    report = bench.run_experiment(ExperimentSpec(shape="square", n=8, block=4, repeats=1))
    assert json.loads(bench.render_json(report))["config"]["M"] == 8
    assert len(json.loads(bench.render_json([report, report]))) == 2
