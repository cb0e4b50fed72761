"""
Kalman forward filter + backward sampler (FFBS), 진화행렬 G_t = I.

공분산은 모두 σ² 를 뺀 scale 행렬(C_t, Q_t)로 들고 다닙니다.
그래서 σ² Gibbs 단계에서 다시 필터링할 필요가 없습니다.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterator, Optional, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, pinvh

from classes import ModelConfig
from errors import ContractError, NumericalBreakdownError, ParameterDomainError
from model_core import (
    ObservationPanel,
    PhaseLike,
    design_from_values,
    draw_mvn,
    exp_correlation,
    harmonic_table,
    robust_cho_factor,
    state_noise_cov,
    symmetrize,
)

logger = logging.getLogger(__name__)

LambdaLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class FilterState:
    m: np.ndarray
    C: np.ndarray
    e: np.ndarray
    Q: np.ndarray


@dataclass(frozen=True)
class FilterResult:
    """forward_filter 결과. 시점별 모멘트는 첫 축이 시간."""
    m: np.ndarray        # (T, p)
    C: np.ndarray        # (T, p, p)
    e: np.ndarray        # (T, n)
    Q: np.ndarray        # (T, n, n)
    m0: np.ndarray
    C0: np.ndarray
    W: np.ndarray
    logdet_sum: float    # Σ log|Q_t|
    quad_sum: float      # Σ e_t' Q_t⁻¹ e_t

    def __len__(self) -> int:
        return self.m.shape[0]

    def __getitem__(self, k: int) -> FilterState:
        return FilterState(self.m[k], self.C[k], self.e[k], self.Q[k])

    def __iter__(self) -> Iterator[FilterState]:
        for k in range(len(self)):
            yield self[k]

    @property
    def n(self) -> int:
        return self.e.shape[1]

    @property
    def p(self) -> int:
        return self.m.shape[1]


@dataclass(frozen=True)
class StateTrajectory:
    x: np.ndarray            # (T, p)
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.x)):
            raise NumericalBreakdownError("상태 궤적에 유한하지 않은 값이 있습니다.")

    @property
    def T(self) -> int:
        return self.x.shape[0]

    def with_origin(self) -> np.ndarray:
        """x₀ 를 맨 앞에 붙인 (T+1, p) 배열"""
        if self.x0 is None:
            raise ContractError("x0 가 없는 궤적입니다.")
        return np.vstack([self.x0[None, :], self.x])


### 보조
def lambda_per_column(lam: LambdaLike, T: int) -> np.ndarray:
    lam_arr = np.full(T, float(lam)) if np.ndim(lam) == 0 else np.asarray(lam, dtype=float)
    if lam_arr.shape != (T,):
        raise ContractError(f"λ 벡터 길이 {lam_arr.shape} 가 T={T} 와 다릅니다.")
    if np.any(~np.isfinite(lam_arr)) or np.any(lam_arr <= 0.0):
        raise ParameterDomainError(f"λ 는 양수여야 합니다: {lam}")
    return lam_arr


### 보조
def correlation_cache(V: np.ndarray, lam_arr: np.ndarray) -> Dict[float, np.ndarray]:
    # 고정 λ* 모드에서는 주마다 λ 가 바뀌므로 값별로 한 번만 계산
    return {float(v): exp_correlation(V, float(v)) for v in np.unique(lam_arr)}


# 주요 함수
def forward_filter(
    panel: ObservationPanel,
    V: np.ndarray,
    lam: LambdaLike,
    a: PhaseLike,
    cfg: ModelConfig,
    m0: Optional[np.ndarray] = None,
    C0: Optional[np.ndarray] = None,
    W: Optional[np.ndarray] = None,
) -> FilterResult:
    """
    x_t = x_{t-1} + ω_t,  y_t = F_t'x_t + ν_t,  ν_t ~ N(0, σ²exp(-V/λ)) 에 대한 Kalman 필터.

    Args:
        panel: 결측이 모두 채워진 패널.
        V: 관측소 거리행렬 (n×n).
        lam: range 모수 λ. 스칼라 또는 열마다 하나씩인 길이 T 벡터.
        a: 위상 모수 (a₁, a₂).
        cfg: m₀, C₀, W 의 기본값을 제공.
        m0, C0, W: 주어지면 cfg 의 값 대신 사용.

    Returns:
        FilterResult: 시점별 (m_t, C_t, e_t, Q_t) 와 두 누적량.
    """
    n, T = panel.y.shape
    p = 2 * n + 1
    if V.shape != (n, n):
        raise ContractError(f"거리행렬 {V.shape} 가 관측소 수 n={n} 과 맞지 않습니다.")
    if not panel.is_filled:
        raise ContractError("forward_filter 에는 결측이 채워진 패널만 넣을 수 있습니다.")

    default_m0, default_C0 = cfg.initial_state(n)
    m0 = default_m0 if m0 is None else np.asarray(m0, dtype=float)
    C0 = default_C0 if C0 is None else np.asarray(C0, dtype=float)
    W = state_noise_cov(cfg.gamma, V) if W is None else np.asarray(W, dtype=float)
    if m0.shape != (p,) or C0.shape != (p, p) or W.shape != (p, p):
        raise ContractError(f"m0 {m0.shape}, C0 {C0.shape}, W {W.shape} 가 상태 차원 {p} 와 맞지 않습니다.")

    lam_arr = lambda_per_column(lam, T)
    corr = correlation_cache(V, lam_arr)
    S1, S2 = harmonic_table(panel.t_index, a)

    ms = np.empty((T, p))
    Cs = np.empty((T, p, p))
    es = np.empty((T, n))
    Qs = np.empty((T, n, n))
    logdet_sum = 0.0
    quad_sum = 0.0

    m_prev, C_prev = m0, C0
    for k in range(T):
        t = int(panel.t_index[k])
        R = C_prev + W
        F = design_from_values(n, S1[k], S2[k])
        RFt = R @ F.T
        Q = F @ RFt + corr[float(lam_arr[k])]
        asym = float(np.max(np.abs(Q - Q.T))) if n > 1 else 0.0
        if asym > 1e-12 * max(1.0, float(np.max(np.abs(Q)))):
            logger.debug(f"⚠️ Q_t 비대칭 {asym:.3e} (t={t})")
        Q = symmetrize(Q)

        cf = robust_cho_factor(Q, t=t)
        e = panel.y[:, k] - F @ m_prev
        Qinv_e = cho_solve(cf, e, check_finite=False)
        A = cho_solve(cf, RFt.T, check_finite=False).T
        m = m_prev + A @ e
        C = symmetrize(R - A @ RFt.T)

        logdet_sum += 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
        quad_sum += float(e @ Qinv_e)

        ms[k], Cs[k], es[k], Qs[k] = m, C, e, Q
        m_prev, C_prev = m, C

    if not (np.isfinite(logdet_sum) and np.isfinite(quad_sum)):
        raise NumericalBreakdownError("필터 누적량이 유한하지 않습니다.")

    return FilterResult(
        m=ms, C=Cs, e=es, Q=Qs, m0=m0, C0=C0, W=W,
        logdet_sum=logdet_sum, quad_sum=quad_sum,
    )


### 보조
def _backward_step(m, C, W, x_next, sigma2, rng):
    # h_t = m_t + C_t(C_t+W)⁻¹(x_{t+1}-m_t),  H_t = C_t - C_t(C_t+W)⁻¹C_t
    P = C + W
    try:
        B = cho_solve(cho_factor(P, lower=True, check_finite=False), C, check_finite=False).T
    except LinAlgError:
        B = C @ pinvh(P)
    h = m + B @ (x_next - m)
    H = symmetrize(C - B @ C)
    return draw_mvn(rng, h, sigma2 * H)


# 주요 함수
def backward_sample(
    filt: FilterResult,
    sigma2: float,
    cfg: Optional[ModelConfig],
    rng: np.random.Generator,
) -> StateTrajectory:
    """
    x_T ~ N(m_T, σ²C_T) 부터 거꾸로 x_t | x_{t+1} 를 뽑고,
    마지막으로 x₀ | x₁ 도 뽑아 함께 돌려줍니다.
    """
    if not np.isfinite(sigma2) or sigma2 <= 0.0:
        raise ParameterDomainError(f"σ² 는 양수여야 합니다: {sigma2}")
    T, p = filt.m.shape
    if filt.C.shape != (T, p, p) or filt.W.shape != (p, p) or filt.m0.shape != (p,):
        raise ContractError("필터 결과의 차원이 서로 맞지 않습니다.")
    if cfg is not None and filt.n != (p - 1) // 2:
        raise ContractError(f"필터 관측 차원 {filt.n} 과 상태 차원 {p} 가 맞지 않습니다.")

    x = np.empty((T, p))
    x[T - 1] = draw_mvn(rng, filt.m[T - 1], sigma2 * filt.C[T - 1])
    for k in range(T - 2, -1, -1):
        x[k] = _backward_step(filt.m[k], filt.C[k], filt.W, x[k + 1], sigma2, rng)
    x0 = _backward_step(filt.m0, filt.C0, filt.W, x[0], sigma2, rng)
    return StateTrajectory(x=x, x0=x0)
