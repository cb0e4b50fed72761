"""
오래 걸리는 보정(calibration) 테스트. `pytest --runslow` 로 실행합니다.
"""
import json

import numpy as np
import pytest
from scipy import stats

from classes import Gamma, ModelConfig, load_run_config
from gibbs_sampler import run_chain
from make_synthetic_panel import simulate_panel, write_fixture
from model_core import ObservationPanel, scale_gamma_for_span
from study import run_study

pytestmark = pytest.mark.slow


### 보조
def _config(paths, out, study, iterations, burn_in, thin, levels):
    raw = json.loads(paths["config"].read_text(encoding="utf-8"))
    raw["model"].update({"iterations": iterations, "burn_in": burn_in, "seed": 1})
    raw.update({"study": study, "thin": thin, "levels": levels, "max_lag": 10})
    paths["config"].write_text(json.dumps(raw, indent=4), encoding="utf-8")
    return load_run_config(paths["config"], out=out)


def test_credible_intervals_cover_true_parameters():
    lam_true, sigma2_true = 70.0, 1.2
    cfg = ModelConfig(iterations=600, burn_in=200)
    hits = {"lambda": 0, "sigma2": 0}
    for rep in range(20):
        sim = simulate_panel(4, 336, lam=lam_true, sigma2=sigma2_true, seed=100 + rep)
        panel = ObservationPanel(y=sim.y, mask=sim.mask, t_index=sim.t_index, site_ids=sim.stations.ids)
        draws = run_chain(panel, sim.stations, cfg, rng=np.random.default_rng(rep), thin=50)
        for name, values, truth in (("lambda", draws.lam, lam_true), ("sigma2", draws.sigma2, sigma2_true)):
            lo, hi = np.quantile(values, [0.025, 0.975])
            hits[name] += int(lo <= truth <= hi)
    assert hits["lambda"] >= 18, hits
    assert hits["sigma2"] >= 18, hits


def test_held_out_coverage_is_near_nominal(tmp_path):
    sim = simulate_panel(12, 1344, missing_rate=0.05, held_out=2, seed=7)
    paths = write_fixture(tmp_path / "fixture", sim)
    cfg = _config(paths, tmp_path / "out", {"kind": "single"}, 500, 200, 2, [0.8, 0.95])
    result = run_study(cfg)
    for level in (0.8, 0.95):
        rows = [r for r in result.coverage.rows if r.level == level]
        rate = sum(r.inside for r in rows) / sum(r.evaluated for r in rows)
        assert abs(rate - level) <= 0.05, (level, rate)


### 보조
def _weekly_trend(result, site_id):
    rows = result.coverage.weekly(site_id, 0.8)
    weeks = [r.week for r in rows]
    return stats.kendalltau(weeks, [r.coverage for r in rows])


def test_unscaled_state_noise_inflates_coverage_over_weeks(tmp_path):
    truth_gamma = scale_gamma_for_span(Gamma(), 17)
    sim = simulate_panel(6, 17 * 168, gamma=truth_gamma, held_out=1, seed=17)
    paths = write_fixture(tmp_path / "fixture", sim, model={"gamma": Gamma().model_dump()})

    drifting = run_study(_config(paths, tmp_path / "a", {"kind": "full-span"}, 300, 100, 2, [0.8]))
    res = _weekly_trend(drifting, "S06")
    assert res.statistic > 0.0 and res.pvalue < 0.05, res

    scaled = run_study(_config(paths, tmp_path / "b", {"kind": "tau-scaled", "t_weeks": 17}, 300, 100, 2, [0.8]))
    res = _weekly_trend(scaled, "S06")
    assert res.pvalue > 0.01, res
