import json

import numpy as np
import pandas as pd
import pytest

from classes import DEFAULT_WEEKLY_LAMBDA_STAR, StudySpec, load_run_config
from errors import ConfigError
from run_manifest import config_hash, find_latest_run, is_partial, run_dir_for
from study import diagnostics_from, interpolate_from, plan_runs, resolve_lambda_star, run_study, week_slices


### 보조
def _config(fixture_files, tmp_path, out="out", study=None, **extra):
    sim, paths = fixture_files
    raw = json.loads(paths["config"].read_text(encoding="utf-8"))
    raw["model"].update({"iterations": 30, "burn_in": 10, "seed": 5})
    raw["thin"] = 5
    raw["max_lag"] = 5
    raw["levels"] = [0.5, 0.9]
    raw["study"] = study or {"kind": "single"}
    raw.update(extra)
    paths["config"].write_text(json.dumps(raw, indent=4), encoding="utf-8")
    return load_run_config(paths["config"], out=tmp_path / out)


def test_week_slices():
    assert week_slices(336) == [(0, 168), (168, 336)]
    assert week_slices(200) == [(0, 168), (168, 200)]


def test_resolve_lambda_star():
    assert resolve_lambda_star(StudySpec(), 17) == DEFAULT_WEEKLY_LAMBDA_STAR
    assert resolve_lambda_star(StudySpec(lambda_star=[1.0, 2.0]), 2) == (1.0, 2.0)
    assert resolve_lambda_star(StudySpec(), 2, required=False) is None
    with pytest.raises(ConfigError):
        resolve_lambda_star(StudySpec(lambda_star=[1.0]), 2)
    with pytest.raises(ConfigError):
        resolve_lambda_star(StudySpec(), 2)


def test_plan_labels(fixture_files, tmp_path):
    cfg = _config(fixture_files, tmp_path, study={"kind": "weekly"})
    plans = plan_runs(cfg, 336)
    assert [p.label for p in plans] == ["week01", "week02"]
    assert [(p.start, p.stop, p.week) for p in plans] == [(0, 168, 1), (168, 336, 2)]


def test_single_run_writes_bundle(fixture_files, tmp_path):
    cfg = _config(fixture_files, tmp_path)
    result = run_study(cfg)
    run_dir = result.run_dir
    assert run_dir == run_dir_for(cfg)
    for name in ("manifest.json", "timing.json", "posterior_summary.csv", "coverage.csv", "draws/single.jsonl"):
        assert (run_dir / name).is_file(), name
    assert (run_dir / "predictive" / "single_S04.csv").is_file()
    assert not is_partial(run_dir)

    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["config_hash"] == config_hash(cfg)
    assert manifest["ungauged"] == ["S04"]
    assert manifest["runs"][0]["n_kept"] == 20
    assert manifest["runs"][0]["n_snapshots"] == 4

    cov = pd.read_csv(run_dir / "coverage.csv")
    assert set(cov["week"].astype(str)) == {"all"}
    assert len(cov) == 2
    assert find_latest_run(cfg.output_dir)["run"] == config_hash(cfg)[:12]


def test_weekly_mode_reports_week_rows(fixture_files, tmp_path):
    cfg = _config(fixture_files, tmp_path, study={"kind": "weekly"})
    result = run_study(cfg)
    assert [o.plan.label for o in result.outcomes] == ["week01", "week02"]
    for level in (0.5, 0.9):
        rows = result.coverage.weekly("S04", level)
        assert [r.week for r in rows] == [1, 2]
        assert all(r.evaluated == 168 for r in rows)


def test_full_span_reports_overall_and_weeks(fixture_files, tmp_path):
    result = run_study(_config(fixture_files, tmp_path, study={"kind": "full-span"}))
    report = result.coverage
    assert 0.0 <= report.overall("S04", 0.9) <= 1.0
    assert len(report.weekly("S04", 0.9)) == 2


def test_fixed_lambda_accepts_every_iteration(fixture_files, tmp_path):
    cfg = _config(fixture_files, tmp_path, study={"kind": "fixed-lambda", "lambda_star": [40.0, 80.0]})
    result = run_study(cfg)
    run = result.manifest["runs"][0]
    assert run["acceptance_rate"] == 1.0
    assert run["lambda_star"] == [40.0, 80.0]
    assert np.all(result.outcomes[0].draws.lam == 60.0)


def test_fixed_lambda_without_values_marks_partial(fixture_files, tmp_path):
    cfg = _config(fixture_files, tmp_path, study={"kind": "fixed-lambda"})
    with pytest.raises(ConfigError):
        run_study(cfg)
    assert is_partial(run_dir_for(cfg))
    assert find_latest_run(cfg.output_dir)["status"] == "partial"


def test_tau_scaled_divides_state_noise(fixture_files, tmp_path):
    cfg = _config(fixture_files, tmp_path, study={"kind": "tau-scaled", "t_weeks": 17})
    result = run_study(cfg)
    ingested, used = result.manifest["gamma_ingested"], result.manifest["gamma"]
    assert used["tau_y2"] == pytest.approx(ingested["tau_y2"] / 17)
    assert used["tau2_2"] == pytest.approx(ingested["tau2_2"] / 17)
    assert used["lambda1"] == ingested["lambda1"]
    assert result.manifest["runs"][0]["mode"] == "full-MH"


def test_runs_are_byte_identical_across_workers(fixture_files, tmp_path):
    first = run_study(_config(fixture_files, tmp_path, out="a", study={"kind": "weekly"}))
    second = run_study(_config(fixture_files, tmp_path, out="b", study={"kind": "weekly"}, n_workers=2))
    assert first.config_hash == second.config_hash

    files = sorted(p.relative_to(first.run_dir) for p in first.run_dir.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(second.run_dir) for p in second.run_dir.rglob("*") if p.is_file())
    for rel in files:
        if rel.name == "timing.json":
            continue
        assert (first.run_dir / rel).read_bytes() == (second.run_dir / rel).read_bytes(), rel


def test_hash_tracks_seed_but_not_output_dir(fixture_files, tmp_path):
    cfg = _config(fixture_files, tmp_path)
    assert config_hash(cfg) == config_hash(cfg.model_copy(update={"output_dir": tmp_path / "x", "n_workers": 3}))
    reseeded = cfg.model_copy(update={"model": cfg.model.model_copy(update={"seed": 6})})
    assert config_hash(cfg) != config_hash(reseeded)


def test_thin_larger_than_kept_draws_is_rejected(fixture_files, tmp_path):
    cfg = _config(fixture_files, tmp_path, thin=50)
    with pytest.raises(ConfigError):
        run_study(cfg)


def test_interpolate_from_saved_states(fixture_files, tmp_path):
    cfg = _config(fixture_files, tmp_path, save_states=True)
    result = run_study(cfg)
    before = (result.run_dir / "coverage.csv").read_bytes()

    report = interpolate_from(cfg, result.run_dir)
    assert (result.run_dir / "coverage.csv").read_bytes() == before
    assert report.overall("S04", 0.9) == result.coverage.overall("S04", 0.9)


def test_interpolate_from_needs_matching_config(fixture_files, tmp_path):
    cfg = _config(fixture_files, tmp_path)
    result = run_study(cfg)
    with pytest.raises(ConfigError):
        interpolate_from(cfg, result.run_dir)     # save_states=false

    other = cfg.model_copy(update={"model": cfg.model.model_copy(update={"seed": 99})})
    with pytest.raises(ConfigError):
        interpolate_from(other, result.run_dir)


def test_diagnostics_from_rereads_draws(fixture_files, tmp_path):
    cfg = _config(fixture_files, tmp_path, study={"kind": "weekly"})
    result = run_study(cfg)
    out = diagnostics_from(result.run_dir, max_lag=3)
    assert list(out) == ["week01", "week02"]
    assert out["week01"].max_lag == 3
    assert out["week01"].acceptance_rate == result.outcomes[0].draws.acceptance_rate


def test_prediction_site_without_truth(fixture_files, tmp_path):
    sim, _ = fixture_files
    coord = sim.stations.coords[:3].mean(axis=0).tolist()
    cfg = _config(fixture_files, tmp_path, prediction_sites=[{"id": "P1", "coord": coord}])
    result = run_study(cfg)
    assert result.manifest["prediction_sites"] == ["P1"]
    assert (result.run_dir / "predictive" / "single_P1.csv").is_file()
    assert {r.site_id for r in result.coverage.rows} == {"S04"}
