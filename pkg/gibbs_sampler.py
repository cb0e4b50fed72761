"""
Metropolis-within-Gibbs 샘플러.

한 번의 반복은 세 블록으로 이루어집니다.
  (1) λ (MH, 고정 λ* 모드에서는 생략), σ² (켤레 IG), x_{1:T} (FFBS)
  (2) 결측 yᵐ 대치
  (3) 위상 모수 (a₁, a₂)
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import cho_solve
from scipy.stats import invgamma
from tqdm import tqdm

from classes import InverseGammaPrior, ModelConfig, PhasePrior
from errors import ConfigError, ContractError, NumericalBreakdownError, ParameterDomainError
from ffbs import FilterResult, StateTrajectory, backward_sample, correlation_cache, forward_filter, lambda_per_column
from model_core import (
    ObservationPanel,
    PhaseLike,
    StationSet,
    design_from_values,
    exp_correlation,
    harmonic_basis,
    harmonic_table,
    robust_cho_factor,
    split_state,
    state_noise_cov,
    symmetrize,
)
from tools.stopwatch import end_stopwatch, start_stopwatch

logger = logging.getLogger(__name__)


# -----------------------------------------------------------
#  [데이터 모델 정의]
# -----------------------------------------------------------

@dataclass(frozen=True)
class MhState:
    lam: float
    tau2: float
    accepted: int = 0
    proposed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0.0):
            raise ParameterDomainError(f"λ 는 양수여야 합니다: {self.lam}")
        if not (np.isfinite(self.tau2) and self.tau2 > 0.0):
            raise ParameterDomainError(f"MH tuning τ² 는 양수여야 합니다: {self.tau2}")

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 0.0


@dataclass(frozen=True)
class ChainMode:
    kind: Literal["full-MH", "fixed-lambda"] = "full-MH"
    lambda_star: Optional[Union[float, np.ndarray]] = None

    def __post_init__(self):
        if self.kind == "fixed-lambda" and self.lambda_star is None:
            raise ConfigError("fixed-lambda 모드에는 λ* 값이 필요합니다.")

    @classmethod
    def fixed(cls, lambda_star) -> "ChainMode":
        return cls(kind="fixed-lambda", lambda_star=lambda_star)


FULL_MH = ChainMode()


@dataclass(frozen=True)
class ChainSnapshot:
    """thin 간격으로 저장하는 한 반복의 전체 상태"""
    iteration: int
    lam: np.ndarray          # (T,) 열마다의 λ
    sigma2: float
    a: Tuple[float, float]
    x: np.ndarray            # (T, 2n+1)
    x0: np.ndarray           # (2n+1,)
    y: np.ndarray            # (n, T) 대치가 끝난 패널 값


@dataclass
class PosteriorDraws:
    lam: np.ndarray
    sigma2: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    accepted: np.ndarray
    iteration_index: np.ndarray
    accept_count: int
    iterations: int
    mode: str = "full-MH"
    snapshots: List[ChainSnapshot] = field(default_factory=list)
    iteration_seconds: List[float] = field(default_factory=list)
    label: str = "chain"

    def __post_init__(self):
        if self.accept_count > self.iterations:
            raise ContractError(f"accept_count({self.accept_count}) > iterations({self.iterations})")
        if np.any(self.lam <= 0.0) or np.any(self.sigma2 <= 0.0):
            raise ContractError("λ, σ² 기록은 모두 양수여야 합니다.")

    @property
    def acceptance_rate(self) -> float:
        return self.accept_count / self.iterations if self.iterations else 0.0

    @property
    def n_kept(self) -> int:
        return int(self.lam.shape[0])

    def traces(self) -> Dict[str, np.ndarray]:
        return {"lambda": self.lam, "sigma2": self.sigma2, "a1": self.a1, "a2": self.a2}

    def to_records(self) -> List[dict]:
        return [
            {
                "iteration": int(it),
                "lambda": float(lam),
                "sigma2": float(s2),
                "a1": float(a1),
                "a2": float(a2),
                "accepted": bool(acc),
            }
            for it, lam, s2, a1, a2, acc in zip(
                self.iteration_index, self.lam, self.sigma2, self.a1, self.a2, self.accepted
            )
        ]

    @classmethod
    def merge(cls, parts: Sequence["PosteriorDraws"]) -> "PosteriorDraws":
        """여러 체인 결과를 읽기 전용으로 합칩니다."""
        if not parts:
            raise ContractError("합칠 체인이 없습니다.")
        return cls(
            lam=np.concatenate([p.lam for p in parts]),
            sigma2=np.concatenate([p.sigma2 for p in parts]),
            a1=np.concatenate([p.a1 for p in parts]),
            a2=np.concatenate([p.a2 for p in parts]),
            accepted=np.concatenate([p.accepted for p in parts]),
            iteration_index=np.concatenate([p.iteration_index for p in parts]),
            accept_count=sum(p.accept_count for p in parts),
            iterations=sum(p.iterations for p in parts),
            mode=parts[0].mode,
            snapshots=[s for p in parts for s in p.snapshots],
            iteration_seconds=[s for p in parts for s in p.iteration_seconds],
            label="+".join(p.label for p in parts),
        )


# -----------------------------------------------------------
#  [블록 (1): λ, σ²]
# -----------------------------------------------------------

def lambda_log_target(
    lam: float,
    accum: FilterResult,
    prior: InverseGammaPrior,
    prior_sigma2: InverseGammaPrior,
    n: int,
    T: int,
) -> float:
    """
    log p(λ) - ½Σlog|Q_t| - (α + nT/2)·log(β + ½Σe'Q⁻¹e)

    (α, β) 는 σ² 의 사전분포 모수입니다 (σ² 를 적분해서 없앤 결과).
    accum 은 logdet_sum, quad_sum 속성을 가진 객체면 됩니다.
    """
    logdet, quad = float(accum.logdet_sum), float(accum.quad_sum)
    if not (np.isfinite(logdet) and np.isfinite(quad)):
        raise NumericalBreakdownError(f"λ={lam} 에서 필터 누적량이 유한하지 않습니다.")
    log_prior = float(invgamma.logpdf(lam, a=prior.alpha, scale=prior.beta))
    shape = prior_sigma2.alpha + n * T / 2.0
    return log_prior - 0.5 * logdet - shape * math.log(prior_sigma2.beta + 0.5 * quad)


def mh_lambda_step(
    state: MhState,
    log_target: Callable[[float], float],
    rng: np.random.Generator,
) -> MhState:
    """λ* = λ·e^Z, Z ~ N(0, τ²). 수용확률 min{1, p(λ*)λ* / p(λ)λ}."""
    z = rng.normal(0.0, math.sqrt(state.tau2))
    lam_star = state.lam * math.exp(z)
    u = rng.random()

    log_ratio = log_target(lam_star) - log_target(state.lam) + math.log(lam_star) - math.log(state.lam)
    if math.isnan(log_ratio):
        raise NumericalBreakdownError(f"MH 수용비가 NaN 입니다 (λ={state.lam}, λ*={lam_star})")

    if u < math.exp(min(0.0, log_ratio)):
        return MhState(lam=lam_star, tau2=state.tau2, accepted=state.accepted + 1, proposed=state.proposed + 1)
    return MhState(lam=state.lam, tau2=state.tau2, accepted=state.accepted, proposed=state.proposed + 1)


def sigma2_posterior(accum: FilterResult, prior: InverseGammaPrior, n: int, T: int) -> Tuple[float, float]:
    """갱신된 IG 의 (shape, scale) = (α + nT/2, β + ½Σe'Q⁻¹e)"""
    quad = float(accum.quad_sum)
    if not np.isfinite(quad) or quad < 0.0:
        raise NumericalBreakdownError(f"이차형식 Σe'Q⁻¹e 가 음수이거나 유한하지 않습니다: {quad}")
    return prior.alpha + n * T / 2.0, prior.beta + 0.5 * quad


def sigma2_gibbs(
    accum: FilterResult,
    prior: InverseGammaPrior,
    n: int,
    T: int,
    rng: np.random.Generator,
) -> float:
    shape, scale = sigma2_posterior(accum, prior, n, T)
    # 1/σ² ~ Gamma(shape, rate=scale)
    return scale / rng.gamma(shape)


# -----------------------------------------------------------
#  [블록 (2): 결측 대치]
# -----------------------------------------------------------

def missing_conditional(
    y_col: np.ndarray,
    mask_col: np.ndarray,
    mean: np.ndarray,
    cov: np.ndarray,
    t: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    (yᵐ | yᵒ) ~ N(μ**, Σ**) 의 결측 위치, 평균, 공분산.
    관측이 하나도 없으면 주변분포 N(mean, cov) 를 그대로 돌려줍니다.
    """
    miss = np.flatnonzero(~mask_col)
    obs = np.flatnonzero(mask_col)
    if miss.size == 0:
        return miss, np.empty(0), np.empty((0, 0))
    if obs.size == 0:
        return miss, mean.copy(), cov.copy()

    cf = robust_cho_factor(cov[np.ix_(obs, obs)], t=t)
    K = cho_solve(cf, cov[np.ix_(obs, miss)], check_finite=False).T
    mu = mean[miss] + K @ (y_col[obs] - mean[obs])
    S = symmetrize(cov[np.ix_(miss, miss)] - K @ cov[np.ix_(obs, miss)])
    return miss, mu, S


def impute_missing(
    panel: ObservationPanel,
    k: int,
    x_t: np.ndarray,
    lam: float,
    sigma2: float,
    a: PhaseLike,
    V: np.ndarray,
    rng: np.random.Generator,
    corr: Optional[np.ndarray] = None,
) -> np.ndarray:
    """k 번째 열의 결측값을 조건부 정규분포에서 뽑아 채운 열을 돌려줍니다."""
    n = panel.n
    if x_t.shape != (2 * n + 1,):
        raise ContractError(f"상태 x_t 차원 {x_t.shape} 가 n={n} 과 맞지 않습니다.")
    y_col = panel.y[:, k].copy()
    mask_col = panel.mask[:, k]
    if mask_col.all():
        return y_col

    t = int(panel.t_index[k])
    S1, S2 = harmonic_table(panel.t_index[k:k + 1], a)
    mean = design_from_values(n, S1[0], S2[0]) @ x_t
    cov = sigma2 * (exp_correlation(V, lam) if corr is None else corr)

    miss, mu, S = missing_conditional(y_col, mask_col, mean, cov, t=t)
    if not mask_col.any():
        logger.debug(f"💡 t={t} 열 전체가 결측이라 주변분포에서 뽑습니다.")
    L = _psd_factor(S)
    y_col[miss] = mu + L @ rng.standard_normal(miss.size)
    return y_col


def impute_panel(
    panel: ObservationPanel,
    x: np.ndarray,
    lam: Union[float, np.ndarray],
    sigma2: float,
    a: PhaseLike,
    V: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """결측이 있는 모든 열을 시간 순서대로 대치한 (n, T) 배열"""
    lam_arr = lambda_per_column(lam, panel.T)
    corr = correlation_cache(V, lam_arr)
    y = np.where(panel.mask, panel.y, 0.0)
    for k in np.flatnonzero(~panel.mask.all(axis=0)):
        y[:, k] = impute_missing(panel, k, x[k], float(lam_arr[k]), sigma2, a, V, rng, corr=corr[float(lam_arr[k])])
    return y


### 보조
def _psd_factor(S: np.ndarray) -> np.ndarray:
    if S.size == 0:
        return S
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(S)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


# -----------------------------------------------------------
#  [블록 (3): 위상 모수]
# -----------------------------------------------------------

def phase_posteriors(
    x: np.ndarray,
    lam: Union[float, np.ndarray],
    sigma2: float,
    panel: ObservationPanel,
    prior: PhasePrior,
    V: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    t ≢ 0 (mod 12) 인 시점마다 a 의 켤레 정규 사후분포를 계산합니다.

    잔차 r_t = y_t - β_t - cos(πt/12)α₁ₜ - cos(2πt/12)α₂ₜ 를
    설계열 (sin(πt/12)α₁ₜ, sin(2πt/12)α₂ₜ), 오차공분산 σ²exp(-V/λ) 로 회귀합니다.

    Returns:
        (사용한 열 번호, 평균 (K,2), 공분산 (K,2,2))
    """
    n, T = panel.y.shape
    if x.shape != (T, 2 * n + 1):
        raise ContractError(f"상태 궤적 {x.shape} 와 패널 {panel.y.shape} 가 맞지 않습니다.")
    if not panel.is_filled:
        raise ContractError("위상 모수 추출에는 대치가 끝난 패널이 필요합니다.")

    keep = np.flatnonzero(panel.t_index % 12 != 0)
    if keep.size == 0:
        raise ConfigError("t ≡ 0 (mod 12) 가 아닌 시점이 없어 위상 모수를 추출할 수 없습니다.")

    lam_arr = lambda_per_column(lam, T)[keep]
    corr = correlation_cache(V, lam_arr)
    c1, s1, c2, s2 = (v[keep] for v in harmonic_basis(panel.t_index))
    beta, alpha1, alpha2 = split_state(x[keep])

    r = panel.y[:, keep].T - (beta[:, None] + c1[:, None] * alpha1 + c2[:, None] * alpha2)
    X = np.stack([s1[:, None] * alpha1, s2[:, None] * alpha2], axis=-1)      # (K, n, 2)

    mu0 = prior.mean_array()
    Sig0 = prior.cov_array()
    obs_cov = sigma2 * np.stack([corr[float(v)] for v in lam_arr])            # (K, n, n)

    XS0 = X @ Sig0                                                             # (K, n, 2)
    S = np.einsum("kni,kmi->knm", XS0, X) + obs_cov                           # XΣ°X' + σ²V_λ
    try:
        G = np.linalg.solve(S, XS0)                                            # S⁻¹XΣ°
    except np.linalg.LinAlgError:
        raise NumericalBreakdownError("위상 사후분포 계산 중 특이 행렬")
    resid = r - X @ mu0
    mean = mu0 + np.einsum("kni,kn->ki", G, resid)
    cov = Sig0 - np.einsum("kni,knj->kij", XS0, G)
    cov = (cov + np.swapaxes(cov, 1, 2)) / 2.0
    return keep, mean, cov


def sample_phase(
    x: np.ndarray,
    lam: Union[float, np.ndarray],
    sigma2: float,
    panel: ObservationPanel,
    prior: PhasePrior,
    V: np.ndarray,
    rng: np.random.Generator,
) -> Tuple[float, float]:
    """시점별로 a 를 하나씩 뽑고 성분별 중앙값을 돌려줍니다."""
    _, mean, cov = phase_posteriors(x, lam, sigma2, panel, prior, V)
    vals, vecs = np.linalg.eigh(cov)
    L = vecs * np.sqrt(np.clip(vals, 0.0, None))[:, None, :]
    draws = mean + np.einsum("kij,kj->ki", L, rng.standard_normal(mean.shape))
    med = np.median(draws, axis=0)
    return float(med[0]), float(med[1])


# -----------------------------------------------------------
#  [체인 실행]
# -----------------------------------------------------------

def _draw_inverse_gamma(prior: InverseGammaPrior, rng: np.random.Generator) -> float:
    return prior.beta / rng.gamma(prior.alpha)


# 주요 함수
def run_chain(
    panel: ObservationPanel,
    stations: StationSet,
    cfg: ModelConfig,
    mode: ChainMode = FULL_MH,
    rng: Optional[np.random.Generator] = None,
    thin: int = 10,
    progress: bool = False,
    label: str = "chain",
) -> PosteriorDraws:
    """
    Metropolis-within-Gibbs 체인 한 개를 돌립니다.

    burn-in 이후의 모든 반복을 기록하고(수용 여부와 무관),
    thin 번째 반복마다 (x, yᵐ, λ, σ², a) 스냅샷을 저장합니다.
    """
    if tuple(panel.site_ids) != tuple(stations.ids):
        raise ContractError(f"패널 관측소 {panel.site_ids} 와 StationSet {stations.ids} 순서가 다릅니다.")
    if thin < 1:
        raise ConfigError(f"thin 은 1 이상이어야 합니다: {thin}")

    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    n, T = panel.y.shape
    V = stations.V
    m0, C0 = cfg.initial_state(n)
    W = state_noise_cov(cfg.gamma, V)

    # 1단계: 초기값
    fixed = mode.kind == "fixed-lambda"
    if fixed:
        lam_sched = lambda_per_column(mode.lambda_star, T)
        lam_record = float(np.median(lam_sched))
        mh = None
    else:
        mh = MhState(lam=_draw_inverse_gamma(cfg.prior_lambda, rng), tau2=cfg.mh_tuning)
    sigma2 = _draw_inverse_gamma(cfg.prior_sigma2, rng)
    a = tuple(float(v) for v in cfg.prior_a.mean)
    y_fill = panel.initial_fill()

    kept = {"lam": [], "sigma2": [], "a1": [], "a2": [], "accepted": [], "iteration": []}
    snapshots: List[ChainSnapshot] = []
    seconds: List[float] = []
    accept_count = 0

    logger.info(
        f"💡 [{label}] 체인 시작: n={n}, T={T}, mode={mode.kind}, "
        f"iterations={cfg.iterations}, burn_in={cfg.burn_in}"
    )

    for j in tqdm(range(1, cfg.iterations + 1), desc=f"MCMC sampling [{label}]", disable=not progress):
        watch = f"{label}:{id(panel)}:{j}"
        start_stopwatch(watch)
        try:
            current = panel.with_values(y_fill)

            # 블록 (1)
            if fixed:
                filt = forward_filter(current, V, lam_sched, a, cfg, m0=m0, C0=C0, W=W)
                lam_now = lam_sched
                accepted = True
            else:
                filters: Dict[float, FilterResult] = {}

                def log_target(lam_value: float) -> float:
                    if lam_value not in filters:
                        filters[lam_value] = forward_filter(current, V, lam_value, a, cfg, m0=m0, C0=C0, W=W)
                    return lambda_log_target(lam_value, filters[lam_value], cfg.prior_lambda, cfg.prior_sigma2, n, T)

                before = mh.accepted
                mh = mh_lambda_step(mh, log_target, rng)
                accepted = mh.accepted > before
                filt = filters[mh.lam]
                lam_now = mh.lam

            sigma2 = sigma2_gibbs(filt, cfg.prior_sigma2, n, T, rng)
            traj: StateTrajectory = backward_sample(filt, sigma2, cfg, rng)

            # 블록 (2)
            y_fill = impute_panel(panel, traj.x, lam_now, sigma2, a, V, rng)
            filled = panel.with_values(y_fill)

            # 블록 (3)
            a = sample_phase(traj.x, lam_now, sigma2, filled, cfg.prior_a, V, rng)
        except NumericalBreakdownError as e:
            end_stopwatch(watch)
            logger.error(f"❌ [{label}] 수치 오류: {e}")
            raise e.at_iteration(j) from e

        accept_count += int(accepted)
        seconds.append(end_stopwatch(watch))

        if j > cfg.burn_in:
            kept["lam"].append(lam_record if fixed else mh.lam)
            kept["sigma2"].append(sigma2)
            kept["a1"].append(a[0])
            kept["a2"].append(a[1])
            kept["accepted"].append(accepted)
            kept["iteration"].append(j)
            if (j - cfg.burn_in) % thin == 0:
                snapshots.append(ChainSnapshot(
                    iteration=j,
                    lam=lambda_per_column(lam_now, T).copy(),
                    sigma2=sigma2,
                    a=a,
                    x=traj.x,
                    x0=traj.x0,
                    y=y_fill.copy(),
                ))

    draws = PosteriorDraws(
        lam=np.asarray(kept["lam"], dtype=float),
        sigma2=np.asarray(kept["sigma2"], dtype=float),
        a1=np.asarray(kept["a1"], dtype=float),
        a2=np.asarray(kept["a2"], dtype=float),
        accepted=np.asarray(kept["accepted"], dtype=bool),
        iteration_index=np.asarray(kept["iteration"], dtype=int),
        accept_count=accept_count,
        iterations=cfg.iterations,
        mode=mode.kind,
        snapshots=snapshots,
        iteration_seconds=seconds,
        label=label,
    )
    logger.info(f"✅ [{label}] 체인 종료: acceptance={draws.acceptance_rate:.2f}, 저장 스냅샷 {len(snapshots)}개")
    return draws
