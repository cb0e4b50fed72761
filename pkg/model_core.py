"""
모형 구조: 관측소/관측 패널 타입, 조화 회귀항, 설계행렬 F_t, 공분산 생성기.

모든 함수는 입력만으로 결과가 정해지는 순수 함수입니다.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import block_diag, cho_factor, LinAlgError
from scipy.spatial.distance import cdist

from classes import Gamma
from errors import ContractError, NumericalBreakdownError, ParameterDomainError

logger = logging.getLogger(__name__)

Metric = Literal["euclidean", "great_circle"]

# 평균 지구 반경 (km)
EARTH_RADIUS_KM = 6371.0088

# 24시간, 12시간 주기
HARMONIC_PERIODS = (24, 12)

PhaseLike = Union["HarmonicSpec", Sequence[float]]


# -----------------------------------------------------------
#  [거리 계산]
# -----------------------------------------------------------

def great_circle_distance(lon1, lat1, lon2, lat2):
    """두 점 사이의 대원 각거리(도)를 계산합니다. 입력은 도 단위."""
    lon1, lat1, lon2, lat2 = map(np.radians, (lon1, lat1, lon2, lat2))
    dlon = lon2 - lon1
    num = np.sqrt(
        (np.cos(lat2) * np.sin(dlon)) ** 2
        + (np.cos(lat1) * np.sin(lat2) - np.sin(lat1) * np.cos(lat2) * np.cos(dlon)) ** 2
    )
    den = np.sin(lat1) * np.sin(lat2) + np.cos(lat1) * np.cos(lat2) * np.cos(dlon)
    return np.degrees(np.arctan2(num, den))


def pairwise_distances(a: np.ndarray, b: np.ndarray, metric: Metric) -> np.ndarray:
    """
    a (k×2), b (m×2) 좌표 사이의 km 거리 행렬.
    great_circle 이면 좌표는 (lat, lon) 순서입니다.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if metric == "euclidean":
        return cdist(a, b)
    if metric == "great_circle":
        deg = great_circle_distance(a[:, None, 1], a[:, None, 0], b[None, :, 1], b[None, :, 0])
        return np.radians(deg) * EARTH_RADIUS_KM
    raise ContractError(f"알 수 없는 거리 척도입니다: {metric}")


# -----------------------------------------------------------
#  [도메인 타입]
# -----------------------------------------------------------

@dataclass(frozen=True)
class StationSet:
    ids: Tuple[str, ...]
    coords: np.ndarray
    metric: Metric
    V: np.ndarray

    def __post_init__(self):
        n = len(self.ids)
        if len(set(self.ids)) != n:
            raise ContractError(f"관측소 id 가 중복되었습니다: {self.ids}")
        if self.coords.shape != (n, 2) or self.V.shape != (n, n):
            raise ContractError(f"좌표 {self.coords.shape} / 거리행렬 {self.V.shape} 이 n={n} 과 맞지 않습니다.")
        if not np.allclose(self.V, self.V.T, rtol=0.0, atol=1e-9):
            raise ContractError("거리행렬 V 가 대칭이 아닙니다.")
        if np.any(np.diag(self.V) != 0.0):
            raise ContractError("거리행렬 V 의 대각 성분은 0 이어야 합니다.")
        off = self.V[~np.eye(n, dtype=bool)]
        if np.any(off <= 0.0):
            i, j = np.argwhere((self.V <= 0.0) & ~np.eye(n, dtype=bool))[0]
            raise ContractError(f"관측소 {self.ids[i]} 와 {self.ids[j]} 의 좌표가 같습니다.")

    @classmethod
    def from_coords(cls, ids: Sequence[str], coords, metric: Metric = "euclidean") -> "StationSet":
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        V = pairwise_distances(coords, coords, metric)
        V = (V + V.T) / 2.0
        np.fill_diagonal(V, 0.0)
        return cls(ids=tuple(str(i) for i in ids), coords=coords, metric=metric, V=V)

    @property
    def n(self) -> int:
        return len(self.ids)

    def index(self, site_id: str) -> int:
        try:
            return self.ids.index(site_id)
        except ValueError:
            raise ContractError(f"관측소 id '{site_id}' 가 없습니다.")

    def distances_from(self, coord) -> np.ndarray:
        return pairwise_distances(np.asarray(coord, dtype=float)[None, :], self.coords, self.metric)[0]

    def subset(self, site_ids: Sequence[str]) -> "StationSet":
        idx = [self.index(s) for s in site_ids]
        return StationSet(
            ids=tuple(self.ids[i] for i in idx),
            coords=self.coords[idx],
            metric=self.metric,
            V=self.V[np.ix_(idx, idx)],
        )


@dataclass(frozen=True)
class ObservationPanel:
    """
    n×T 제곱근 농도 패널. 결측은 NaN, mask 가 True 인 곳만 관측값.
    t_index[k] 는 k 번째 열의 절대 시간(시 단위, 1부터).
    """
    y: np.ndarray
    mask: np.ndarray
    t_index: np.ndarray
    site_ids: Tuple[str, ...]
    unit: str = "sqrt-ppb"

    def __post_init__(self):
        if self.y.ndim != 2 or self.mask.shape != self.y.shape:
            raise ContractError(f"y {self.y.shape} 와 mask {self.mask.shape} 의 크기가 맞지 않습니다.")
        n, T = self.y.shape
        if len(self.site_ids) != n:
            raise ContractError(f"site_ids 개수 {len(self.site_ids)} 가 n={n} 과 다릅니다.")
        if self.t_index.shape != (T,):
            raise ContractError(f"t_index 길이 {self.t_index.shape} 가 T={T} 와 다릅니다.")
        if T > 0 and (self.t_index[0] < 1 or np.any(np.diff(self.t_index) <= 0)):
            raise ContractError("t_index 는 1 이상이고 단조 증가해야 합니다.")
        if not np.all(np.isfinite(self.y[self.mask])):
            raise ContractError("관측된 위치(mask=True)의 값은 유한해야 합니다.")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[1]

    @property
    def fully_missing(self) -> np.ndarray:
        """한 시점 전체가 결측인 열 표시"""
        return ~self.mask.any(axis=0)

    @property
    def is_filled(self) -> bool:
        return bool(np.all(np.isfinite(self.y)))

    @property
    def missing_fraction(self) -> float:
        return float(1.0 - self.mask.mean()) if self.mask.size else 0.0

    def with_values(self, y_filled: np.ndarray) -> "ObservationPanel":
        # 관측값은 그대로 두고 결측 자리만 채운 패널
        if y_filled.shape != self.y.shape:
            raise ContractError(f"채운 값 {y_filled.shape} 와 패널 {self.y.shape} 의 크기가 다릅니다.")
        merged = np.where(self.mask, self.y, y_filled)
        return replace(self, y=merged)

    def columns(self, start: int, stop: int) -> "ObservationPanel":
        return replace(
            self,
            y=self.y[:, start:stop].copy(),
            mask=self.mask[:, start:stop].copy(),
            t_index=self.t_index[start:stop].copy(),
        )

    def sites(self, site_ids: Sequence[str]) -> "ObservationPanel":
        idx = [self.site_ids.index(s) for s in site_ids]
        return replace(self, y=self.y[idx].copy(), mask=self.mask[idx].copy(), site_ids=tuple(site_ids))

    def site_means(self) -> np.ndarray:
        """관측소별 관측값 평균. 관측이 하나도 없는 관측소는 전체 평균."""
        counts = self.mask.sum(axis=1)
        sums = np.where(self.mask, self.y, 0.0).sum(axis=1)
        overall = sums.sum() / counts.sum() if counts.sum() > 0 else 0.0
        with np.errstate(invalid="ignore", divide="ignore"):
            means = np.where(counts > 0, sums / np.maximum(counts, 1), overall)
        return means

    def initial_fill(self) -> np.ndarray:
        return np.where(self.mask, self.y, self.site_means()[:, None])


@dataclass(frozen=True)
class HarmonicSpec:
    """24h/12h 주기 조화항의 위상 모수 a = (a₁, a₂)"""
    a1: float
    a2: float
    periods: Tuple[int, int] = field(default=HARMONIC_PERIODS, init=False)

    @classmethod
    def of(cls, a: PhaseLike) -> "HarmonicSpec":
        if isinstance(a, HarmonicSpec):
            return a
        a1, a2 = a
        return cls(float(a1), float(a2))

    def values(self, t: int) -> Tuple[float, float]:
        return harmonic(t, 1, self.a1), harmonic(t, 2, self.a2)


@dataclass(frozen=True)
class StateVector:
    beta: float
    alpha1: np.ndarray
    alpha2: np.ndarray

    @classmethod
    def from_array(cls, x: np.ndarray) -> "StateVector":
        beta, alpha1, alpha2 = split_state(x)
        return cls(float(beta), alpha1, alpha2)

    def to_array(self) -> np.ndarray:
        return np.concatenate(([self.beta], self.alpha1, self.alpha2))


def split_state(x: np.ndarray):
    """(…, 2n+1) 배열을 (β, α₁, α₂) 로 나눕니다. 앞쪽 축은 그대로 유지."""
    p = x.shape[-1]
    if p < 3 or p % 2 == 0:
        raise ContractError(f"상태 차원 {p} 는 2n+1 꼴이어야 합니다.")
    n = (p - 1) // 2
    return x[..., 0], x[..., 1:n + 1], x[..., n + 1:]


# -----------------------------------------------------------
#  [연산]
# -----------------------------------------------------------

# πk/12 (k=0..23) 의 cos, sin 표. 0, ±1 이 되어야 하는 칸은 정확한 값으로 맞춤
_ANGLES = np.pi * np.arange(24) / 12.0
_COS24 = np.where(np.abs(np.cos(_ANGLES)) < 1e-12, 0.0, np.cos(_ANGLES))
_SIN24 = np.where(np.abs(np.sin(_ANGLES)) < 1e-12, 0.0, np.sin(_ANGLES))
_COS24[[0, 12]] = [1.0, -1.0]
_SIN24[[6, 18]] = [1.0, -1.0]


def harmonic(t: int, j: int, a_j: float) -> float:
    """S_jt(a_j) = cos(πtj/12) + a_j·sin(πtj/12)"""
    k = (int(t) * int(j)) % 24
    return float(_COS24[k] + a_j * _SIN24[k])


def harmonic_table(t_index: np.ndarray, a: PhaseLike) -> Tuple[np.ndarray, np.ndarray]:
    """t_index 전체에 대한 (S₁ₜ, S₂ₜ) 벡터"""
    spec = HarmonicSpec.of(a)
    c1, s1, c2, s2 = harmonic_basis(t_index)
    return c1 + spec.a1 * s1, c2 + spec.a2 * s2


def design_matrix(t: int, n: int, a: PhaseLike) -> np.ndarray:
    """F_t' (n×(2n+1)): i 행은 0열에 1, i열에 S₁ₜ, n+i열에 S₂ₜ"""
    if n < 1:
        raise ContractError(f"관측소 수 n 은 1 이상이어야 합니다: {n}")
    s1, s2 = HarmonicSpec.of(a).values(t)
    return design_from_values(n, s1, s2)


def design_from_values(n: int, s1: float, s2: float) -> np.ndarray:
    F = np.zeros((n, 2 * n + 1))
    F[:, 0] = 1.0
    idx = np.arange(n)
    F[idx, 1 + idx] = s1
    F[idx, 1 + n + idx] = s2
    return F


def exp_correlation(V: np.ndarray, theta: float) -> np.ndarray:
    if not np.isfinite(theta) or theta <= 0.0:
        raise ParameterDomainError(f"range 모수는 양수여야 합니다: θ={theta}")
    return np.exp(-np.asarray(V, dtype=float) / theta)


def _check_gamma(gamma: Gamma):
    for name in ("tau_y2", "tau1_2", "lambda1", "tau2_2", "lambda2"):
        value = getattr(gamma, name, None)
        if value is None or not np.isfinite(value) or value <= 0.0:
            raise ParameterDomainError(f"γ.{name} 는 양수여야 합니다: {value}")


def state_noise_cov(gamma: Gamma, V: np.ndarray) -> np.ndarray:
    """W = blockdiag(τ_y², τ₁²·exp(-V/λ₁), τ₂²·exp(-V/λ₂))"""
    _check_gamma(gamma)
    return block_diag(
        np.array([[gamma.tau_y2]]),
        gamma.tau1_2 * exp_correlation(V, gamma.lambda1),
        gamma.tau2_2 * exp_correlation(V, gamma.lambda2),
    )


def scale_gamma_for_span(gamma: Gamma, T_weeks: int) -> Gamma:
    """τ 성분만 T_weeks 로 나눕니다. λ₁, λ₂ 는 그대로."""
    if T_weeks < 1:
        raise ParameterDomainError(f"T_weeks 는 1 이상이어야 합니다: {T_weeks}")
    if T_weeks == 1:
        return gamma
    return gamma.model_copy(update={
        "tau_y2": gamma.tau_y2 / T_weeks,
        "tau1_2": gamma.tau1_2 / T_weeks,
        "tau2_2": gamma.tau2_2 / T_weeks,
    })


# -----------------------------------------------------------
#  [수치 보조]
# -----------------------------------------------------------

def symmetrize(M: np.ndarray) -> np.ndarray:
    return (M + M.T) / 2.0


def robust_cho_factor(M: np.ndarray, t: Optional[int] = None):
    """
    Cholesky 분해. 실패하면 1e-10·mean(diag) 만큼 대각에 더해 한 번만 재시도.
    """
    try:
        return cho_factor(M, lower=True, check_finite=False)
    except LinAlgError:
        jitter = 1e-10 * float(np.mean(np.diag(M)))
        logger.debug(f"⚠️ Cholesky 실패, jitter {jitter:.3e} 로 재시도 (t={t})")
        try:
            if not np.isfinite(jitter) or jitter <= 0.0:
                raise LinAlgError("jitter 가 양수가 아님")
            return cho_factor(M + jitter * np.eye(M.shape[0]), lower=True, check_finite=False)
        except LinAlgError:
            raise NumericalBreakdownError("양의 정부호가 아닌 공분산 행렬", t=t)


def draw_mvn(rng: np.random.Generator, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """
    N(mean, cov) 한 번 추출. cov 가 특이(반정부호)해도 동작하며,
    cov 가 0 행렬이면 mean 을 그대로 돌려줍니다.
    """
    z = rng.standard_normal(mean.shape[0])
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(symmetrize(cov))
        L = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return mean + L @ z


def harmonic_basis(t_index: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(cos(πt/12), sin(πt/12), cos(2πt/12), sin(2πt/12)) 벡터"""
    t = np.asarray(t_index, dtype=np.int64)
    k1, k2 = t % 24, (2 * t) % 24
    return _COS24[k1], _SIN24[k1], _COS24[k2], _SIN24[k2]
