import logging

import numpy as np
import pytest

from classes import ModelConfig
from errors import ContractError, EmptyReportError, ParameterDomainError
from gibbs_sampler import ChainSnapshot
from interpolator import (
    CovBlocks,
    PredictiveSeries,
    augmented_distances,
    coverage,
    initial_ungauged_moments,
    kriging_weights,
    make_ungauged_site,
    partition_cov,
    predict_response,
    predict_site,
    response_moments,
    sample_initial_ungauged_state,
    sample_ungauged_state,
    ungauged_state_moments,
)
from model_core import StationSet, harmonic


### 보조
def _snapshot(n: int, T: int, seed: int = 0, sigma2: float = 0.05, lam: float = 40.0) -> ChainSnapshot:
    rng = np.random.default_rng(seed)
    return ChainSnapshot(
        iteration=1,
        lam=np.full(T, lam),
        sigma2=sigma2,
        a=(2.5, 9.8),
        x=rng.normal(size=(T, 2 * n + 1)),
        x0=rng.normal(size=2 * n + 1),
        y=rng.normal(2.8, 0.3, size=(n, T)),
    )


# -----------------------------------------------------------
#  [지점 / 가중치]
# -----------------------------------------------------------

def test_site_inside_hull(three_stations):
    site = make_ungauged_site(three_stations, "U", [2.0, 2.0])
    assert site.in_hull
    assert site.collocated_index is None
    assert site.dist_to_gauged == pytest.approx([np.hypot(2, 2), np.hypot(8, 2), np.hypot(2, 13)])


def test_site_outside_hull_warns(three_stations, caplog):
    with caplog.at_level(logging.WARNING, logger="interpolator"):
        site = make_ungauged_site(three_stations, "FAR", [100.0, 100.0])
    assert not site.in_hull
    assert any("FAR" in r.message for r in caplog.records)


def test_site_on_a_station_is_collocated(three_stations):
    site = make_ungauged_site(three_stations, "B2", [10.0, 0.0])
    assert site.collocated_index == 1


def test_kriging_weights_match_direct_inverse(three_stations):
    site = make_ungauged_site(three_stations, "U", [3.0, 4.0])
    blocks = partition_cov(25.0, augmented_distances(three_stations, site))
    w, schur = kriging_weights(blocks)
    expected_w = np.linalg.inv(blocks.s22) @ blocks.s12
    np.testing.assert_allclose(w, expected_w, rtol=1e-10)
    assert schur == pytest.approx(1.0 - expected_w @ blocks.s12, rel=1e-10)
    assert 0.0 < schur < 1.0


def test_collocated_weights_are_exact():
    blocks = CovBlocks(1.0, np.array([0.3, 1.0, 0.2]), np.eye(3))
    w, schur = kriging_weights(blocks)
    assert w.tolist() == [0.0, 1.0, 0.0]
    assert schur == 0.0


def test_augmented_distances_checks_length(three_stations):
    other = StationSet.from_coords(["A", "B"], [[0.0, 0.0], [1.0, 0.0]])
    site = make_ungauged_site(other, "U", [0.5, 0.5])
    with pytest.raises(ContractError):
        augmented_distances(three_stations, site)


def test_state_moments_for_collocated_site():
    blocks = CovBlocks(1.0, np.array([1.0, 0.1]), np.eye(2))
    mean, var = ungauged_state_moments(0.4, np.array([2.0, 5.0]), np.array([1.5, 4.0]), 0.01, 0.2, blocks)
    assert mean == pytest.approx(0.9)
    assert var == 0.0


def test_state_moments_far_from_network():
    # 상관이 0 이면 α^s 는 자기 값에 σ²τ² 잡음만 더해짐
    blocks = CovBlocks(1.0, np.zeros(2), np.eye(2))
    mean, var = ungauged_state_moments(0.4, np.array([2.0, 5.0]), np.array([1.5, 4.0]), 0.01, 0.2, blocks)
    assert mean == 0.4
    assert var == pytest.approx(0.002)


def test_initial_ungauged_moments_average_alpha_blocks():
    m0 = np.array([2.85, -0.5, -1.0, 0.2, 0.4])
    C0 = np.diag([1.0, 0.02, 0.04, 0.01, 0.03])
    means, variances = initial_ungauged_moments(m0, C0, 2)
    assert means == pytest.approx((-0.75, 0.3))
    assert variances == pytest.approx((0.03, 0.02))


def test_initial_ungauged_state_ignores_gauged_origin():
    # 관측소 α₀ 를 사전평균에서 멀리 두어도 t=0 의 미관측 α^s 는 사전 주변분포를 따름
    snap = _snapshot(3, 4, sigma2=0.05)
    snap = ChainSnapshot(snap.iteration, snap.lam, snap.sigma2, snap.a, snap.x, np.full(7, 5.0), snap.y)
    m0, C0 = ModelConfig().initial_state(3)
    rng = np.random.default_rng(12)
    draws = np.array([sample_initial_ungauged_state(snap, 3, m0, C0, None, rng) for _ in range(20000)])
    sd = np.sqrt(0.05 * 0.01)
    se = sd / np.sqrt(20000)
    assert abs(draws[:, 0].mean() + 0.75) < 4 * se
    assert abs(draws[:, 1].mean() + 0.08) < 4 * se
    np.testing.assert_allclose(draws.var(axis=0), [sd ** 2, sd ** 2], rtol=0.05)


def test_initial_ungauged_state_copies_collocated_station(rng):
    snap = _snapshot(3, 4)
    m0, C0 = ModelConfig().initial_state(3)
    a1, a2 = sample_initial_ungauged_state(snap, 3, m0, C0, 2, rng)
    assert (a1, a2) == (snap.x0[3], snap.x0[6])


def test_response_moments_without_spatial_correlation():
    blocks = CovBlocks(1.0, np.zeros(2), np.eye(2))
    alpha_t = (np.array([0.1, 0.2]), np.array([0.3, 0.4]))
    mean, var = response_moments(5, 2.8, (-0.7, -0.1), alpha_t, (2.5, 9.8), 0.04, np.array([3.0, 2.5]), blocks)
    expected = 2.8 - 0.7 * harmonic(5, 1, 2.5) - 0.1 * harmonic(5, 2, 9.8)
    assert mean == pytest.approx(expected)
    assert var == pytest.approx(0.04)


def test_collocated_response_returns_station_value(rng):
    blocks = CovBlocks(1.0, np.array([1.0, 0.1]), np.eye(2))
    alpha_t = (np.array([0.1, 0.2]), np.array([0.3, 0.4]))
    value = predict_response(7, 2.8, (0.1, 0.3), alpha_t, (2.5, 9.8), 30.0, 0.04, np.array([3.1, 2.5]), blocks, rng)
    assert value == pytest.approx(3.1)
    with pytest.raises(ParameterDomainError):
        predict_response(7, 2.8, (0.1, 0.3), alpha_t, (2.5, 9.8), 0.0, 0.04, np.array([3.1, 2.5]), blocks, rng)


### 보조
def _condition_by_precision(S: np.ndarray, given: np.ndarray):
    # 정밀도 행렬로 구한 0번 성분의 조건부 평균/분산
    P = np.linalg.inv(S)
    return -float(P[0, 1:] @ given) / P[0, 0], 1.0 / P[0, 0]


def test_state_moments_match_joint_conditioning(three_stations):
    site = make_ungauged_site(three_stations, "U", [4.0, 6.0])
    V_star = augmented_distances(three_stations, site)
    alpha_prev = np.array([0.2, -0.4, 0.1])
    alpha_t = np.array([0.5, -0.1, 0.3])
    sigma2, tau2 = 0.3, 0.02
    for lam in (5.0, 25.0, 80.0):
        mean, var = ungauged_state_moments(0.7, alpha_t, alpha_prev, tau2, sigma2, partition_cov(lam, V_star))
        # 증분 (Δα^s, Δα) ~ N(0, σ²τ²Σ*)
        d_mean, d_var = _condition_by_precision(sigma2 * tau2 * np.exp(-V_star / lam), alpha_t - alpha_prev)
        assert mean == pytest.approx(0.7 + d_mean, abs=1e-12)
        assert var == pytest.approx(d_var, abs=1e-12)


def test_response_moments_match_joint_conditioning(three_stations):
    site = make_ungauged_site(three_stations, "U", [4.0, 6.0])
    V_star = augmented_distances(three_stations, site)
    alpha_t = (np.array([0.1, 0.2, -0.3]), np.array([0.3, 0.4, 0.0]))
    alpha_s = (0.15, 0.25)
    y_t = np.array([3.0, 2.5, 2.9])
    t, beta, a, sigma2 = 9, 2.8, (2.5, 9.8), 0.04
    s1, s2 = harmonic(t, 1, a[0]), harmonic(t, 2, a[1])
    resid = y_t - beta - s1 * alpha_t[0] - s2 * alpha_t[1]
    for lam in (5.0, 25.0, 80.0):
        mean, var = response_moments(t, beta, alpha_s, alpha_t, a, sigma2, y_t, partition_cov(lam, V_star))
        d_mean, d_var = _condition_by_precision(sigma2 * np.exp(-V_star / lam), resid)
        assert mean == pytest.approx(beta + s1 * alpha_s[0] + s2 * alpha_s[1] + d_mean, abs=1e-12)
        assert var == pytest.approx(d_var, abs=1e-12)


def test_response_variance_shrinks_with_correlation():
    # 관측소 하나: exp(-d/λ) 가 커질수록 예측분산은 줄어듦
    station = StationSet.from_coords(["A"], [[0.0, 0.0]])
    variances = []
    for d in np.linspace(60.0, 0.5, 40):
        site = make_ungauged_site(station, "U", [d, 0.0])
        blocks = partition_cov(25.0, augmented_distances(station, site))
        _, var = response_moments(3, 2.8, (0.0, 0.0), (np.zeros(1), np.zeros(1)), (2.5, 9.8), 0.04, np.array([3.0]), blocks)
        variances.append(var)
        assert var == pytest.approx(0.04 * (1.0 - np.exp(-2.0 * d / 25.0)), rel=1e-10)
    assert np.all(np.diff(variances) <= 0.0)


def test_sample_ungauged_state_validates_arguments(rng):
    blocks = CovBlocks(1.0, np.zeros(2), np.eye(2))
    with pytest.raises(ContractError):
        sample_ungauged_state(3, 0.0, np.zeros(2), np.zeros(2), 10.0, 0.01, 0.1, blocks, rng)
    with pytest.raises(ParameterDomainError):
        sample_ungauged_state(1, 0.0, np.zeros(2), np.zeros(2), 0.0, 0.01, 0.1, blocks, rng)


# -----------------------------------------------------------
#  [예측 궤적]
# -----------------------------------------------------------

def test_collocated_prediction_reproduces_station(three_stations, rng):
    T = 30
    site = make_ungauged_site(three_stations, "A2", [0.0, 0.0])
    snaps = [_snapshot(3, T, seed=s) for s in range(4)]
    series = predict_site(snaps, np.arange(1, T + 1), three_stations, site, ModelConfig(), rng)
    assert series.draws.shape == (4, T)
    for s, snap in enumerate(snaps):
        np.testing.assert_allclose(series.draws[s], snap.y[0], rtol=0, atol=1e-12)


def test_prediction_is_reproducible(three_stations):
    T = 12
    site = make_ungauged_site(three_stations, "U", [3.0, 4.0])
    snaps = [_snapshot(3, T, seed=s) for s in range(3)]
    first = predict_site(snaps, np.arange(1, T + 1), three_stations, site, ModelConfig(), np.random.default_rng(4))
    second = predict_site(snaps, np.arange(1, T + 1), three_stations, site, ModelConfig(), np.random.default_rng(4))
    assert np.array_equal(first.draws, second.draws)
    assert np.all(np.isfinite(first.draws))


def test_prediction_accepts_time_varying_lambda(three_stations, rng):
    T = 24
    snap = _snapshot(3, T)
    snap = ChainSnapshot(snap.iteration, np.where(np.arange(T) < 12, 20.0, 70.0), snap.sigma2, snap.a, snap.x, snap.x0, snap.y)
    site = make_ungauged_site(three_stations, "U", [3.0, 4.0])
    series = predict_site([snap], np.arange(1, T + 1), three_stations, site, ModelConfig(), rng)
    assert series.draws.shape == (1, T)


def test_prediction_rejects_mismatched_snapshot(three_stations, rng):
    site = make_ungauged_site(three_stations, "U", [3.0, 4.0])
    with pytest.raises(ContractError):
        predict_site([_snapshot(3, 10)], np.arange(1, 12), three_stations, site, ModelConfig(), rng)
    with pytest.raises(ContractError):
        predict_site([], np.arange(1, 12), three_stations, site, ModelConfig(), rng)


# -----------------------------------------------------------
#  [구간 / 커버리지]
# -----------------------------------------------------------

def test_equal_tailed_interval():
    draws = np.linspace(0.0, 1.0, 11)[:, None] * np.ones((1, 3))
    series = PredictiveSeries("U", np.arange(1, 4), draws)
    lo, hi = series.interval(0.8)
    np.testing.assert_allclose(lo, 0.1)
    np.testing.assert_allclose(hi, 0.9)
    np.testing.assert_allclose(series.median, 0.5)
    with pytest.raises(ParameterDomainError):
        series.interval(1.0)


def test_summary_columns():
    series = PredictiveSeries("U", np.arange(1, 3), np.ones((5, 2)))
    frame = series.summarize([0.95, 0.8])
    assert list(frame.columns) == ["t", "median", "lower_80", "upper_80", "lower_95", "upper_95"]


def test_to_ppb_squares_draws():
    series = PredictiveSeries("U", np.arange(1, 3), np.array([[3.0, 2.0]]))
    ppb = series.to_ppb()
    assert ppb.unit == "ppb"
    assert ppb.draws.tolist() == [[9.0, 4.0]]


def test_coverage_counts_hits():
    draws = np.linspace(0.0, 1.0, 11)[:, None] * np.ones((1, 4))
    series = PredictiveSeries("U", np.arange(1, 5), draws)
    truth = np.array([0.5, 0.95, 0.05, np.nan])
    report = coverage(series, truth, np.array([True, True, True, False]), [0.8])
    assert report.overall("U", 0.8) == pytest.approx(1 / 3)
    assert report.rows[0].evaluated == 3


def test_weekly_rows_on_two_weeks():
    T = 336
    series = PredictiveSeries("U", np.arange(1, T + 1), np.tile(np.linspace(-1, 1, 21)[:, None], (1, T)))
    truth = np.zeros(T)
    report = coverage(series, truth, np.ones(T, bool), [0.5, 0.9], week_hours=168)
    for level in (0.5, 0.9):
        weeks = report.weekly("U", level)
        assert [r.week for r in weeks] == [1, 2]
        assert all(r.evaluated == 168 and r.coverage == 1.0 for r in weeks)
    frame = report.to_frame()
    assert len(frame) == 6
    assert set(frame["week"]) == {"all", 1, 2}


def test_coverage_without_truth_raises():
    series = PredictiveSeries("U", np.arange(1, 3), np.ones((3, 2)))
    with pytest.raises(EmptyReportError):
        coverage(series, np.array([1.0, 1.0]), np.zeros(2, bool), [0.9])
    with pytest.raises(ContractError):
        coverage(series, np.ones(3), np.ones(3, bool), [0.9])


def test_truth_at_median_is_always_covered():
    rng = np.random.default_rng(8)
    series = PredictiveSeries("U", np.arange(1, 25), rng.normal(size=(101, 24)))
    report = coverage(series, series.median, np.ones(24, bool), [0.1, 0.5, 0.95])
    assert all(r.coverage == 1.0 for r in report.rows)
