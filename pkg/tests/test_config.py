"""Tests for TOML config loading and worker resolution."""

from __future__ import annotations

import numpy as np
import pytest

from llgm.config import ExperimentConfig, load_config, resolve_workers
from llgm.exceptions import ConfigError
from llgm.smoothing import AR1_SWEEP_LOG_TAU, SPATIAL_SWEEP_LOG_TAU


class TestDefaults:
    def test_empty_config_is_valid_ar1_experiment(self):
        cfg = load_config()
        assert cfg.mode == "ar1"
        assert cfg.seeds == (0,)
        assert cfg.gh_order == 5
        assert cfg.levels == AR1_SWEEP_LOG_TAU
        assert cfg.ar1.n_regions == 100
        assert cfg.ar1.series_length == 50
        assert cfg.ar1.tau == 2.0
        assert cfg.ar1_grid.n == 601
        assert cfg.ar1_grid.lo == -12.0

    def test_spatial_mode_gets_spatial_level_sweep(self):
        cfg = load_config(mode="spatial")
        assert np.allclose(cfg.levels, SPATIAL_SWEEP_LOG_TAU)
        assert cfg.spatial.n_points == 5000
        assert cfg.spatial_regions == 100
        assert cfg.spatial_grid_n == 15

    def test_explicit_levels_survive_either_mode(self):
        cfg = load_config(mode="spatial", levels=[0.0, 1.0])
        assert cfg.levels == (0.0, 1.0)


class TestTomlParsing:
    def test_full_file_round_trip(self, tmp_path):
        text = "\n".join([
            'mode = "spatial"',
            "seeds = [3, 4]",
            'out_dir = "elsewhere"',
            "workers = 2",
            "gh_order = 7",
            "levels = [-1.0, 0.5]",
            "",
            "[spatial]",
            "n_points = 200",
            "n_regions = 8",
            "box = 10.0",
            "beta = [1.0, 0.0, 0.0]",
            "grid_n = 9",
        ])
        path = tmp_path / "run.toml"
        path.write_text(text)
        cfg = load_config(path)
        assert cfg.mode == "spatial"
        assert cfg.seeds == (3, 4)
        assert str(cfg.out_dir) == "elsewhere"
        assert cfg.workers == 2
        assert cfg.gh_order == 7
        assert cfg.levels == (-1.0, 0.5)
        assert cfg.spatial.n_points == 200
        assert cfg.spatial.box == 10.0
        assert cfg.spatial.beta == (1.0, 0.0, 0.0)
        assert cfg.spatial_regions == 8
        assert cfg.spatial_grid_n == 9

    def test_ar1_table_with_grid_keys(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("\n".join([
            "[ar1]",
            "n_regions = 12",
            "tau = 4.0",
            "grid_lo = -6.0",
            "grid_hi = 6.0",
            "grid_n = 101",
        ]))
        cfg = load_config(path)
        assert cfg.ar1.n_regions == 12
        assert cfg.ar1.tau == 4.0
        assert (cfg.ar1_grid.lo, cfg.ar1_grid.hi, cfg.ar1_grid.n) \
            == (-6.0, 6.0, 101)

    def test_overrides_beat_file_values(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("workers = 2\nseeds = [1, 2, 3]\n")
        cfg = load_config(path, workers=5, seed=9)
        assert cfg.workers == 5
        assert cfg.seeds == (9,)        # "seed" convenience wins

    def test_none_override_means_not_overridden(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("workers = 2\n")
        cfg = load_config(path, workers=None)
        assert cfg.workers == 2

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.toml")

    def test_malformed_toml_raises(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("mode = \n")
        with pytest.raises(ConfigError, match="malformed"):
            load_config(path)

    def test_unknown_top_level_key_rejected(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("moed = \"ar1\"\n")
        with pytest.raises(ConfigError, match="moed"):
            load_config(path)

    def test_unknown_section_key_rejected(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[ar1]\nseries_len = 10\n")
        with pytest.raises(ConfigError, match="series_len"):
            load_config(path)
        path.write_text("[spatial]\nnoise = 0.1\n")
        with pytest.raises(ConfigError, match="noise"):
            load_config(path)


class TestValidation:
    def test_bad_mode(self):
        with pytest.raises(ConfigError, match="mode"):
            ExperimentConfig(mode="arp")

    def test_empty_seeds(self):
        with pytest.raises(ConfigError, match="seeds"):
            ExperimentConfig(seeds=())

    def test_negative_workers(self):
        with pytest.raises(ConfigError, match="workers"):
            ExperimentConfig(workers=-1)

    def test_gh_order_bounds(self):
        with pytest.raises(ConfigError, match="gh_order"):
            ExperimentConfig(gh_order=0)
        with pytest.raises(ConfigError, match="gh_order"):
            ExperimentConfig(gh_order=11)

    def test_spatial_grid_bounds(self):
        with pytest.raises(ConfigError, match="grid_n"):
            ExperimentConfig(spatial_grid_n=2)
        with pytest.raises(ConfigError, match="n_regions"):
            ExperimentConfig(spatial_regions=1)

    def test_bad_design_value_becomes_config_error(self, tmp_path):
        path = tmp_path / "run.toml"
        path.write_text("[ar1]\ntau = -1.0\n")
        with pytest.raises(ConfigError, match=r"\[ar1\]"):
            load_config(path)


class TestResolveWorkers:
    def test_config_value_wins(self, monkeypatch):
        monkeypatch.setenv("LLGM_THREADS", "7")
        assert resolve_workers(ExperimentConfig(workers=3)) == 3

    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv("LLGM_THREADS", "7")
        assert resolve_workers(ExperimentConfig(workers=0)) == 7

    def test_cpu_count_fallback(self, monkeypatch):
        monkeypatch.delenv("LLGM_THREADS", raising=False)
        import os
        assert resolve_workers(ExperimentConfig()) == (os.cpu_count() or 1)

    def test_bad_env_value(self, monkeypatch):
        monkeypatch.setenv("LLGM_THREADS", "many")
        with pytest.raises(ConfigError, match="LLGM_THREADS"):
            resolve_workers(ExperimentConfig())
        monkeypatch.setenv("LLGM_THREADS", "0")
        with pytest.raises(ConfigError, match="positive"):
            resolve_workers(ExperimentConfig())
