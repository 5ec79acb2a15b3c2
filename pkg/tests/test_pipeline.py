"""End-to-end pipeline tests on small experiments: artifact layout, score
row sets, byte determinism, stage isolation, exclusion bookkeeping, and CLI
exit codes."""

import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from llgm.ar1 import Ar1Context
from llgm.cli import build_parser, main
from llgm.config import ExperimentConfig
from llgm.data import ObservationTable
from llgm.gaussians import canonical_to_moment
from llgm.pipeline import (
    RunPaths,
    run_experiment,
    run_fit,
    run_refit,
    run_score,
    run_simulate,
    run_smooth,
)
from llgm.simulate import Ar1ExperimentDesign, SpatialFieldDesign

AR1_LEVELS = (-1.0, 3.0)
SPATIAL_LEVELS = (-2.0, 1.0)


def ar1_cfg(out, seeds=(0,), levels=AR1_LEVELS):
    return ExperimentConfig(
        mode="ar1", seeds=seeds, out_dir=out, workers=1, levels=levels,
        ar1=Ar1ExperimentDesign(n_regions=10, series_length=16))


def spatial_cfg(out, seeds=(0,), levels=SPATIAL_LEVELS):
    return ExperimentConfig(
        mode="spatial", seeds=seeds, out_dir=out, workers=1, levels=levels,
        spatial=SpatialFieldDesign(n_points=240, box=12.0, rho_base=2.0),
        spatial_regions=8, spatial_grid_n=7)


def read_rows(path):
    with open(path) as handle:
        return list(csv.DictReader(handle))


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run_stages(cfg, seed):
    for stage in (run_simulate, run_fit, run_smooth, run_refit):
        stage(cfg, seed)
    return run_score(cfg, seed)


@pytest.fixture(scope="module")
def ar1_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ar1_run")
    cfg = ar1_cfg(out, seeds=(0, 1))
    rows = run_experiment(cfg)
    return cfg, rows


@pytest.fixture(scope="module")
def spatial_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("spatial_run")
    cfg = spatial_cfg(out)
    rows = run_experiment(cfg)
    return cfg, rows


class TestAr1Experiment:
    def test_artifact_layout(self, ar1_run):
        cfg, _ = ar1_run
        for seed in cfg.seeds:
            paths = RunPaths(cfg.out_dir, seed)
            for name in ("data_csv", "truth_json", "fit_json",
                         "smooth_json", "refit_csv", "scores_csv",
                         "manifest_json"):
                assert getattr(paths, name).exists(), name
        assert (cfg.out_dir / "summary.csv").exists()
        assert (cfg.out_dir / "manifest.json").exists()

    def test_score_row_set(self, ar1_run):
        cfg, rows = ar1_run
        expected = {("none", "step1"), ("none", "plugin")}
        for level in AR1_LEVELS:
            expected |= {(repr(level), "plugin"), (repr(level), "mixture")}
        for seed in cfg.seeds:
            seed_rows = [r for r in rows if r["seed"] == seed]
            assert {(r["level"], r["variant"]) for r in seed_rows} == expected
        # every AR(1) row carries all three scores
        for r in rows:
            assert r["emlcpo"] > 0
            assert r["emlkl"] > 0
            assert 0 <= r["mae"] < 1

    def test_summary_matches_seed_tables(self, ar1_run):
        cfg, _ = ar1_run
        summary = read_rows(cfg.out_dir / "summary.csv")
        stacked = []
        for seed in cfg.seeds:
            for row in read_rows(RunPaths(cfg.out_dir, seed).scores_csv):
                stacked.append({"seed": str(seed), **row})
        assert summary == stacked

    def test_csv_floats_round_trip(self, ar1_run):
        cfg, rows = ar1_run
        seed0 = [r for r in rows if r["seed"] == 0]
        on_disk = read_rows(RunPaths(cfg.out_dir, 0).scores_csv)
        for mem, disk in zip(seed0, on_disk):
            assert float(disk["emlcpo"]) == mem["emlcpo"]
            assert float(disk["emlkl"]) == mem["emlkl"]
            assert float(disk["mae"]) == mem["mae"]

    def test_plugin_refit_rows_match_direct_conditioning(self, ar1_run):
        cfg, _ = ar1_run
        paths = RunPaths(cfg.out_dir, 0)
        smooth = json.load(open(paths.smooth_json))
        table = ObservationTable.read_csv(paths.data_csv)
        series = table.series_matrix()
        level_rec = next(r for r in smooth["levels"]
                         if r["level"] == AR1_LEVELS[1])
        refit = [r for r in read_rows(paths.refit_csv)
                 if r["level"] == repr(AR1_LEVELS[1])
                 and r["variant"] == "plugin" and r["region"] == "3"]
        assert len(refit) == series.shape[1]
        ctx = Ar1Context(y=series[3], tau=cfg.ar1.tau)
        idx = smooth["region_ids"].index(3)
        dist = canonical_to_moment(ctx.conditional(level_rec["post_mean"][idx]))
        got_mean = np.array([float(r["post_mean"]) for r in refit])
        got_sd = np.array([float(r["post_sd"]) for r in refit])
        np.testing.assert_allclose(got_mean, dist.mean, rtol=1e-12)
        np.testing.assert_allclose(got_sd, np.sqrt(np.diag(dist.mat)),
                                   rtol=1e-12)

    def test_predictive_variance_adds_noise(self, ar1_run):
        cfg, _ = ar1_run
        for row in read_rows(RunPaths(cfg.out_dir, 0).refit_csv):
            gap = float(row["pred_sd"]) ** 2 - float(row["post_sd"]) ** 2
            assert abs(gap - 1.0 / cfg.ar1.tau) < 1e-10

    def test_same_seed_reproduces_identical_bytes(self, ar1_run, tmp_path):
        cfg, _ = ar1_run
        fresh = ar1_cfg(tmp_path / "again", seeds=(0,))
        run_stages(fresh, 0)
        a = RunPaths(cfg.out_dir, 0)
        b = RunPaths(fresh.out_dir, 0)
        for name in ("data_csv", "truth_json", "fit_json", "smooth_json",
                     "refit_csv", "scores_csv"):
            assert sha(getattr(a, name)) == sha(getattr(b, name)), name

    def test_refit_provenance_recorded(self, ar1_run):
        cfg, _ = ar1_run
        paths = RunPaths(cfg.out_dir, 0)
        manifest = json.load(open(paths.manifest_json))
        prov = manifest["stages"]["refit"]["provenance"]
        assert prov["theta_source"] == "smooth.json"
        assert prov["theta_sha256"] == sha(paths.smooth_json)

    def test_refit_reads_theta_only_from_smooth_file(self, tmp_path):
        # Perturbing smooth.json (leaving fit.json and the data untouched)
        # must change the refit output: the stage has no other theta source.
        cfg = ar1_cfg(tmp_path)
        run_stages(cfg, 0)
        paths = RunPaths(cfg.out_dir, 0)
        before = [r for r in read_rows(paths.refit_csv)
                  if r["level"] == "none" and r["variant"] == "plugin"
                  and r["region"] == "0"]
        smooth = json.load(open(paths.smooth_json))
        smooth["levels"][0]["post_mean"][0] += 0.37
        with open(paths.smooth_json, "w") as handle:
            json.dump(smooth, handle)
        run_refit(cfg, 0)
        after = [r for r in read_rows(paths.refit_csv)
                 if r["level"] == "none" and r["variant"] == "plugin"
                 and r["region"] == "0"]
        assert before[0]["post_mean"] != after[0]["post_mean"]
        manifest = json.load(open(paths.manifest_json))
        assert (manifest["stages"]["refit"]["provenance"]["theta_sha256"]
                == sha(paths.smooth_json))


class TestSpatialExperiment:
    def test_score_row_set_without_truth_columns(self, spatial_run):
        _, rows = spatial_run
        expected = {("none", "step1"), ("none", "plugin")}
        for level in SPATIAL_LEVELS:
            expected |= {(repr(level), "plugin"), (repr(level), "mixture")}
        assert {(r["level"], r["variant"]) for r in rows} == expected
        for r in rows:
            assert r["emlcpo"] > 0
            assert r["emlkl"] == ""     # no per-region scalar truth
            assert r["mae"] == ""

    def test_boundary_exclusions_are_consistent(self, spatial_run):
        cfg, rows = spatial_run
        paths = RunPaths(cfg.out_dir, 0)
        manifest = json.load(open(paths.manifest_json))
        smooth = json.load(open(paths.smooth_json))
        excluded = manifest["stages"]["fit"]["excluded_regions"]
        assert excluded == smooth["excluded_regions"]
        assert set(excluded).isdisjoint(smooth["region_ids"])
        assert set(excluded) | set(smooth["region_ids"]) \
            == set(range(cfg.spatial_regions))
        refit_regions = {int(r["region"])
                         for r in read_rows(paths.refit_csv)}
        assert refit_regions == set(smooth["region_ids"])
        for r in rows:
            assert r["n_regions"] == len(smooth["region_ids"])

    def test_refit_obs_are_table_row_indices(self, spatial_run):
        cfg, _ = spatial_run
        paths = RunPaths(cfg.out_dir, 0)
        assignments = np.array(
            json.load(open(paths.partition_json))["assignments"])
        rows = [r for r in read_rows(paths.refit_csv)
                if r["level"] == "none" and r["variant"] == "plugin"]
        by_region = {}
        for r in rows:
            by_region.setdefault(int(r["region"]), []).append(int(r["obs"]))
        for rid, obs in by_region.items():
            np.testing.assert_array_equal(
                np.sort(obs), np.flatnonzero(assignments == rid))

    def test_truth_table_aligns_with_data(self, spatial_run):
        cfg, _ = spatial_run
        paths = RunPaths(cfg.out_dir, 0)
        table = ObservationTable.read_csv(paths.data_csv)
        truth = read_rows(paths.truth_csv)
        assert len(truth) == table.n
        np.testing.assert_allclose(
            [float(r["x"]) for r in truth], table.locations[:, 0])
        signal = np.array([float(r["signal"]) for r in truth])
        noise_sd = np.std(table.values - signal)
        assert abs(noise_sd - cfg.spatial.noise_sd) < 0.2


class TestCli:
    @pytest.fixture()
    def toml(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("\n".join([
            'mode = "ar1"',
            "seeds = [0]",
            "workers = 1",
            "levels = [3.0]",
            "",
            "[ar1]",
            "n_regions = 8",
            "series_length = 12",
        ]) + "\n")
        return path

    def test_experiment_command(self, toml, tmp_path, capsys):
        out = tmp_path / "exp"
        assert main(["experiment", "--config", str(toml),
                     "--out", str(out)]) == 0
        stdout = capsys.readouterr().out
        assert "summary.csv" in stdout
        assert "emlcpo=" in stdout
        assert (out / "seed_0" / "scores.csv").exists()

    def test_stage_by_stage(self, toml, tmp_path, capsys):
        out = tmp_path / "stages"
        for command in ("simulate", "fit", "smooth", "refit", "score"):
            code = main([command, "--config", str(toml), "--out", str(out),
                         "--seed", "0"])
            assert code == 0, command
        assert (out / "seed_0" / "scores.csv").exists()

    def test_bad_config_exits_2(self, capsys):
        assert main(["experiment", "--gh-order", "99"]) == 2
        assert "configuration error" in capsys.readouterr().err

    def test_missing_stage_input_exits_2(self, tmp_path, capsys):
        assert main(["score", "--out", str(tmp_path / "void"),
                     "--seed", "0"]) == 2
        assert "stage input" in capsys.readouterr().err

    def test_numerical_failure_exits_3(self, toml, tmp_path, capsys):
        out = tmp_path / "broken"
        for command in ("simulate", "fit", "smooth"):
            assert main([command, "--config", str(toml),
                         "--out", str(out), "--seed", "0"]) == 0
        data = RunPaths(out, 0).data_csv
        table = ObservationTable.read_csv(data)
        table.values[5] = 1e8              # poison one observation
        table.write_csv(data)
        assert main(["score", "--config", str(toml), "--out", str(out),
                     "--seed", "0"]) == 3
        assert "numerical failure" in capsys.readouterr().err

    def test_levels_flag_parses_negatives(self):
        args = build_parser().parse_args(
            ["experiment", "--levels=-5,-1,3"])
        assert args.levels == [-5.0, -1.0, 3.0]

    def test_seed_overrides_config_seeds(self, toml, tmp_path):
        out = tmp_path / "one_seed"
        assert main(["experiment", "--config", str(toml), "--out", str(out),
                     "--seed", "4"]) == 0
        assert (out / "seed_4").exists()
        assert not (out / "seed_0").exists()
