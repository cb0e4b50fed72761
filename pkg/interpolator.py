"""
미관측 지점(ungauged site) 공간 보간.

사후 표본 하나마다 예측 궤적을 하나씩 만드는 composition sampling 방식입니다.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import cho_solve
from scipy.spatial import Delaunay, QhullError

from classes import ModelConfig
from errors import ContractError, EmptyReportError, NumericalBreakdownError, ParameterDomainError
from ffbs import StateTrajectory
from gibbs_sampler import ChainSnapshot
from model_core import (
    PhaseLike,
    StationSet,
    exp_correlation,
    harmonic,
    harmonic_table,
    robust_cho_factor,
    split_state,
)

logger = logging.getLogger(__name__)

# 음수 Schur complement 허용 한계
SCHUR_TOLERANCE = 1e-12

WEEK_HOURS = 168


# -----------------------------------------------------------
#  [데이터 모델 정의]
# -----------------------------------------------------------

@dataclass(frozen=True)
class UngaugedSite:
    id: str
    coord: np.ndarray
    dist_to_gauged: np.ndarray
    in_hull: bool
    collocated_index: Optional[int] = None


class CovBlocks(NamedTuple):
    s11: float
    s12: np.ndarray
    s22: np.ndarray


@dataclass(frozen=True)
class PredictiveSeries:
    site_id: str
    t_index: np.ndarray
    draws: np.ndarray          # (표본 수, T)
    unit: str = "sqrt-ppb"

    def __post_init__(self):
        if self.draws.ndim != 2 or self.draws.shape[1] != self.t_index.shape[0]:
            raise ContractError(f"draws {self.draws.shape} 와 t_index {self.t_index.shape} 가 맞지 않습니다.")
        if self.draws.shape[0] == 0:
            raise ContractError("예측 표본이 없습니다.")

    @property
    def median(self) -> np.ndarray:
        return np.quantile(self.draws, 0.5, axis=0, method="linear")

    def interval(self, level: float) -> Tuple[np.ndarray, np.ndarray]:
        """등꼬리(equal-tailed) 중심 구간"""
        if not 0.0 < level < 1.0:
            raise ParameterDomainError(f"명목 수준은 (0, 1) 안이어야 합니다: {level}")
        lo, hi = np.quantile(self.draws, [(1.0 - level) / 2.0, (1.0 + level) / 2.0], axis=0, method="linear")
        return lo, hi

    def summarize(self, levels: Sequence[float]) -> pd.DataFrame:
        frame = {"t": self.t_index, "median": self.median}
        for level in sorted(levels):
            lo, hi = self.interval(level)
            tag = f"{level * 100:g}"
            frame[f"lower_{tag}"] = lo
            frame[f"upper_{tag}"] = hi
        return pd.DataFrame(frame)

    def to_ppb(self) -> "PredictiveSeries":
        # 단순 제곱 역변환 (편향 보정 없음)
        return PredictiveSeries(self.site_id, self.t_index, self.draws ** 2, unit="ppb")


@dataclass(frozen=True)
class CoverageRow:
    site_id: str
    level: float
    week: Optional[int]
    inside: int
    evaluated: int

    @property
    def coverage(self) -> float:
        return self.inside / self.evaluated


@dataclass
class CoverageReport:
    rows: List[CoverageRow] = field(default_factory=list)

    def overall(self, site_id: str, level: float) -> float:
        for row in self.rows:
            if row.site_id == site_id and row.level == level and row.week is None:
                return row.coverage
        raise KeyError((site_id, level))

    def weekly(self, site_id: str, level: float) -> List[CoverageRow]:
        return sorted(
            (r for r in self.rows if r.site_id == site_id and r.level == level and r.week is not None),
            key=lambda r: r.week,
        )

    def extend(self, other: "CoverageReport") -> "CoverageReport":
        self.rows.extend(other.rows)
        return self

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "site": r.site_id,
                    "level": r.level,
                    "week": "all" if r.week is None else r.week,
                    "inside": r.inside,
                    "evaluated": r.evaluated,
                    "coverage": r.coverage,
                }
                for r in self.rows
            ],
            columns=["site", "level", "week", "inside", "evaluated", "coverage"],
        )


# -----------------------------------------------------------
#  [지점 / 공분산 블록]
# -----------------------------------------------------------

### 보조
def _hull_points(stations: StationSet, coord: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if stations.metric == "great_circle":
        # (lat, lon) -> (lon, lat) 평면 근사
        return stations.coords[:, ::-1], coord[::-1]
    return stations.coords, coord


def make_ungauged_site(stations: StationSet, site_id: str, coord) -> UngaugedSite:
    coord = np.asarray(coord, dtype=float)
    d = stations.distances_from(coord)

    pts, q = _hull_points(stations, coord)
    try:
        in_hull = bool(Delaunay(pts).find_simplex(q[None, :])[0] >= 0)
    except (QhullError, ValueError):
        in_hull = False
    if not in_hull:
        logger.warning(f"⚠️ 미관측 지점 '{site_id}' 가 관측소 볼록껍질 밖에 있습니다 (외삽).")

    zero = np.flatnonzero(d <= 1e-9)
    collocated = int(zero[0]) if zero.size else None
    return UngaugedSite(site_id, coord, d, in_hull, collocated)


def augmented_distances(stations: StationSet, site: UngaugedSite) -> np.ndarray:
    """V* : 0번 인덱스가 미관측 지점인 (n+1)×(n+1) 거리행렬"""
    if site.dist_to_gauged.shape != (stations.n,):
        raise ContractError(f"거리 벡터 {site.dist_to_gauged.shape} 가 관측소 수 {stations.n} 과 맞지 않습니다.")
    n = stations.n
    V_star = np.zeros((n + 1, n + 1))
    V_star[0, 1:] = site.dist_to_gauged
    V_star[1:, 0] = site.dist_to_gauged
    V_star[1:, 1:] = stations.V
    return V_star


def partition_cov(theta: float, V_star: np.ndarray) -> CovBlocks:
    S = exp_correlation(V_star, theta)
    return CovBlocks(float(S[0, 0]), S[0, 1:].copy(), S[1:, 1:].copy())


def kriging_weights(blocks: CovBlocks) -> Tuple[np.ndarray, float]:
    """(Σ₁₂Σ₂₂⁻¹, Σ₁₁ - Σ₁₂Σ₂₂⁻¹Σ₂₁)"""
    hit = np.flatnonzero(blocks.s12 == 1.0)
    if hit.size:
        # 관측소와 같은 위치: 해당 관측소 하나만 가중치 1
        w = np.zeros_like(blocks.s12)
        w[hit[0]] = 1.0
        return w, 0.0

    cf = robust_cho_factor(blocks.s22)
    w = cho_solve(cf, blocks.s12, check_finite=False)
    schur = blocks.s11 - float(w @ blocks.s12)
    if schur < -SCHUR_TOLERANCE:
        raise NumericalBreakdownError(f"음수 조건부 분산 {schur:.3e}")
    return w, max(schur, 0.0)


# -----------------------------------------------------------
#  [조건부 분포]
# -----------------------------------------------------------

def ungauged_state_moments(
    alpha_prev_s: float,
    alpha_t: np.ndarray,
    alpha_prev: np.ndarray,
    tau_j2: float,
    sigma2: float,
    blocks: CovBlocks,
) -> Tuple[float, float]:
    w, schur = kriging_weights(blocks)
    if schur == 0.0 and np.count_nonzero(w) == 1 and w.max() == 1.0:
        i = int(np.argmax(w))
        return float(alpha_t[i] + (alpha_prev_s - alpha_prev[i])), 0.0
    mean = alpha_prev_s + float(w @ (alpha_t - alpha_prev))
    return mean, sigma2 * tau_j2 * schur


def sample_ungauged_state(
    j: int,
    alpha_prev_s: float,
    alpha_t: np.ndarray,
    alpha_prev: np.ndarray,
    lambda_j: float,
    tau_j2: float,
    sigma2: float,
    blocks: CovBlocks,
    rng: np.random.Generator,
) -> float:
    if j not in (1, 2):
        raise ContractError(f"조화항 번호 j 는 1 또는 2 여야 합니다: {j}")
    if lambda_j <= 0.0:
        raise ParameterDomainError(f"λ_{j} 는 양수여야 합니다: {lambda_j}")
    mean, var = ungauged_state_moments(alpha_prev_s, alpha_t, alpha_prev, tau_j2, sigma2, blocks)
    return mean + np.sqrt(var) * rng.standard_normal()


def response_moments(
    t: int,
    beta_t: float,
    alpha_s: Tuple[float, float],
    alpha_t: Tuple[np.ndarray, np.ndarray],
    a: PhaseLike,
    sigma2: float,
    y_t: np.ndarray,
    blocks: CovBlocks,
) -> Tuple[float, float]:
    a1, a2 = a
    s1, s2 = harmonic(t, 1, a1), harmonic(t, 2, a2)
    w, schur = kriging_weights(blocks)
    if schur == 0.0 and np.count_nonzero(w) == 1 and w.max() == 1.0:
        i = int(np.argmax(w))
        mean = y_t[i] + s1 * (alpha_s[0] - alpha_t[0][i]) + s2 * (alpha_s[1] - alpha_t[1][i])
        return float(mean), 0.0

    resid = y_t - beta_t - s1 * alpha_t[0] - s2 * alpha_t[1]
    mean = beta_t + s1 * alpha_s[0] + s2 * alpha_s[1] + float(w @ resid)
    return mean, sigma2 * schur


def predict_response(
    t: int,
    beta_t: float,
    alpha_s: Tuple[float, float],
    alpha_t: Tuple[np.ndarray, np.ndarray],
    a: PhaseLike,
    lam: float,
    sigma2: float,
    y_t: np.ndarray,
    blocks: CovBlocks,
    rng: np.random.Generator,
) -> float:
    if lam <= 0.0:
        raise ParameterDomainError(f"λ 는 양수여야 합니다: {lam}")
    mean, var = response_moments(t, beta_t, alpha_s, alpha_t, a, sigma2, y_t, blocks)
    return mean + np.sqrt(var) * rng.standard_normal()


# -----------------------------------------------------------
#  [표본 하나당 예측 궤적]
# -----------------------------------------------------------

def initial_ungauged_moments(m0: np.ndarray, C0: np.ndarray, n: int) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    """관측소 사전분포 α 블록의 평균과 분산(σ² 단위)을 j=1,2 별로 평균"""
    d = np.diag(C0)
    means = (float(np.mean(m0[1:n + 1])), float(np.mean(m0[n + 1:2 * n + 1])))
    variances = (float(np.mean(d[1:n + 1])), float(np.mean(d[n + 1:2 * n + 1])))
    return means, variances


def sample_initial_ungauged_state(
    snap: ChainSnapshot,
    n: int,
    m0: np.ndarray,
    C0: np.ndarray,
    collocated_index: Optional[int],
    rng: np.random.Generator,
) -> Tuple[float, float]:
    """
    t=0 의 (α^s_10, α^s_20).
    관측소와 같은 위치면 그 관측소의 α₀ 를 그대로 쓰고, 아니면 사전 주변분포에서 뽑습니다.
    """
    z0 = rng.standard_normal(2)
    if collocated_index is not None:
        _, a1_0, a2_0 = split_state(snap.x0)
        return float(a1_0[collocated_index]), float(a2_0[collocated_index])
    means, variances = initial_ungauged_moments(m0, C0, n)
    return tuple(float(mu + np.sqrt(snap.sigma2 * var) * z) for mu, var, z in zip(means, variances, z0))


### 보조
def _state_path(alpha0_s, alpha_all, w, schur, scale, collocated, rng, T):
    # α^s_t = α^s_{t-1} + w·(α_t - α_{t-1}) + N(0, scale·schur)
    if collocated is not None:
        rng.standard_normal(T)
        return alpha_all[1:, collocated].copy()
    steps = np.diff(alpha_all, axis=0) @ w + np.sqrt(scale * schur) * rng.standard_normal(T)
    return alpha0_s + np.cumsum(steps)


# 주요 함수
def predict_site(
    snapshots: Sequence[ChainSnapshot],
    t_index: np.ndarray,
    stations: StationSet,
    site: UngaugedSite,
    cfg: ModelConfig,
    rng: np.random.Generator,
) -> PredictiveSeries:
    """
    스냅샷마다 α^s_{0:T} 를 재귀적으로 뽑고 y^s_t 를 한 번씩 뽑아
    PredictiveSeries 로 모읍니다.
    """
    if not snapshots:
        raise ContractError("보간에 사용할 사후 스냅샷이 없습니다.")
    n = stations.n
    T = t_index.shape[0]
    gamma = cfg.gamma
    m0, C0 = cfg.initial_state(n)
    V_star = augmented_distances(stations, site)
    ci = site.collocated_index

    w1, q1 = kriging_weights(partition_cov(gamma.lambda1, V_star))
    w2, q2 = kriging_weights(partition_cov(gamma.lambda2, V_star))
    resp_cache: Dict[float, Tuple[np.ndarray, float]] = {}

    draws = np.empty((len(snapshots), T))
    for s, snap in enumerate(snapshots):
        if snap.x.shape != (T, 2 * n + 1) or snap.y.shape != (n, T):
            raise ContractError(f"스냅샷 차원 {snap.x.shape}/{snap.y.shape} 가 (T={T}, n={n}) 과 맞지 않습니다.")
        beta, a1, a2 = split_state(snap.x)
        _, a1_all, a2_all = split_state(StateTrajectory(snap.x, snap.x0).with_origin())
        alpha_s0 = sample_initial_ungauged_state(snap, n, m0, C0, ci, rng)

        alpha1_s = _state_path(alpha_s0[0], a1_all, w1, q1, snap.sigma2 * gamma.tau1_2, ci, rng, T)
        alpha2_s = _state_path(alpha_s0[1], a2_all, w2, q2, snap.sigma2 * gamma.tau2_2, ci, rng, T)

        S1, S2 = harmonic_table(t_index, snap.a)
        z = rng.standard_normal(T)
        if ci is not None:
            y_i = snap.y[ci]
            draws[s] = y_i + S1 * (alpha1_s - a1[:, ci]) + S2 * (alpha2_s - a2[:, ci])
            continue

        for lam_value in np.unique(snap.lam):
            key = float(lam_value)
            if key not in resp_cache:
                resp_cache[key] = kriging_weights(partition_cov(key, V_star))
        Wt = np.stack([resp_cache[float(v)][0] for v in snap.lam])        # (T, n)
        qt = np.array([resp_cache[float(v)][1] for v in snap.lam])        # (T,)

        resid = snap.y.T - beta[:, None] - S1[:, None] * a1 - S2[:, None] * a2
        mean = beta + S1 * alpha1_s + S2 * alpha2_s + np.sum(Wt * resid, axis=1)
        draws[s] = mean + np.sqrt(snap.sigma2 * qt) * z

    return PredictiveSeries(site.id, np.asarray(t_index).copy(), draws)


# -----------------------------------------------------------
#  [커버리지]
# -----------------------------------------------------------

def coverage(
    series: PredictiveSeries,
    truth: np.ndarray,
    truth_mask: np.ndarray,
    levels: Sequence[float],
    week_hours: Optional[int] = None,
) -> CoverageReport:
    """
    명목 수준별로 참값이 중심 구간 안에 들어간 비율.
    week_hours 가 주어지면 패널 시작 기준 주 단위 행도 함께 만듭니다.
    """
    truth = np.asarray(truth, dtype=float)
    truth_mask = np.asarray(truth_mask, dtype=bool) & np.isfinite(truth)
    if truth.shape != series.t_index.shape or truth_mask.shape != truth.shape:
        raise ContractError(f"참값 {truth.shape} 와 예측 시계열 {series.t_index.shape} 가 맞지 않습니다.")
    if not truth_mask.any():
        raise EmptyReportError(f"'{series.site_id}' 에 평가할 수 있는 시간이 없습니다.")

    report = CoverageReport()
    for level in sorted(levels):
        lo, hi = series.interval(level)
        inside = truth_mask & (truth >= lo) & (truth <= hi)
        report.rows.append(CoverageRow(series.site_id, level, None, int(inside.sum()), int(truth_mask.sum())))

        if week_hours:
            week = np.arange(truth.shape[0]) // week_hours
            for k in range(int(week.max()) + 1):
                sel = week == k
                evaluated = int(truth_mask[sel].sum())
                if evaluated == 0:
                    logger.warning(f"⚠️ '{series.site_id}' {k + 1}주차에는 평가할 시간이 없어 건너뜁니다.")
                    continue
                report.rows.append(CoverageRow(series.site_id, level, k + 1, int(inside[sel].sum()), evaluated))
    return report
