"""
1차 다항 DLM (n=1, T=2) 의 닫힌 형식 결과.

    y_it = β_t + ε_it,  β_t = β_{t-1} + δ_t,  β₀ ~ N(0, σ_β²)

0번 지점은 미관측, 1번 지점은 관측소이며 두 지점 사이 거리는 d₀₁ 입니다.
예측분산, 그 차이(gap), 편미분, 역설 조건을 계산하며
다른 모듈 테스트의 기준값(oracle)으로도 씁니다.

모든 예측분산은 V = e·u·(2 - k·e·u) 꼴로 쓸 수 있습니다.
(e = σ_ε², u = 1 - exp(-d₀₁/λ), k 는 분산마다 다른 계수)
"""
import logging
from dataclasses import dataclass
from typing import Dict, Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, NonNegativeFloat, PositiveFloat

from errors import ParameterDomainError

logger = logging.getLogger(__name__)

VarianceName = Literal["var_y01_y11", "var_y02_y12", "var_y01_y11_y12", "var_y02_y11_y12"]
Direction = Literal["d01", "sigma_eps2", "lambda"]

VARIANCE_NAMES = ("var_y01_y11", "var_y02_y12", "var_y01_y11_y12", "var_y02_y11_y12")

# 증가 방향으로 바꿨을 때 분산이 늘어나야 하는 부호 (λ 는 감소 방향)
DIRECTION_SIGN = {"d01": 1.0, "sigma_eps2": 1.0, "lambda": -1.0}


class PolyDlmParams(BaseModel):
    """σ_β², σ_δ² 는 0 을 허용합니다 (신호가 없는 극한 확인용)."""
    model_config = ConfigDict(frozen=True)

    sigma_beta2: NonNegativeFloat
    sigma_delta2: NonNegativeFloat
    sigma_eps2: PositiveFloat
    lam: PositiveFloat
    d01: NonNegativeFloat

    @property
    def rho(self) -> float:
        return float(np.exp(-self.d01 / self.lam))

    def replace(self, **kwargs) -> "PolyDlmParams":
        return self.model_copy(update=kwargs)


def make_params(sigma_beta2, sigma_delta2, sigma_eps2, lam, d01) -> PolyDlmParams:
    """검증 실패를 ParameterDomainError 로 바꿔 주는 생성 함수"""
    try:
        return PolyDlmParams(
            sigma_beta2=sigma_beta2, sigma_delta2=sigma_delta2, sigma_eps2=sigma_eps2, lam=lam, d01=d01
        )
    except ValueError as e:
        raise ParameterDomainError(str(e))


@dataclass(frozen=True)
class TheoremOneResult:
    var_y01_y11: float
    var_y02_y12: float
    var_y01_y11_y12: float
    var_y02_y11_y12: float
    delta: float
    m1: float
    m2: float

    def as_dict(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in VARIANCE_NAMES}


@dataclass(frozen=True)
class TheoremTwoGaps:
    reduction_t1: float   # Var(y01|y11) - Var(y01|y11,y12)
    reduction_t2: float   # Var(y02|y12) - Var(y02|y11,y12)
    spread_joint: float   # Var(y02|y11,y12) - Var(y01|y11,y12)
    spread_single: float   # Var(y02|y12) - Var(y01|y11)
    reduction_margin: float  # reduction_t1 - reduction_t2
    spread_margin: float  # spread_joint - spread_single

    def as_dict(self) -> Dict[str, float]:
        return dict(self.__dict__)


# -----------------------------------------------------------
#  [공분산 구조]
# -----------------------------------------------------------

def moment_structure(p: PolyDlmParams, t: int, s: int, same_site: bool) -> float:
    if t < 1 or s < 1:
        raise ParameterDomainError(f"시점은 1 이상이어야 합니다: t={t}, s={s}")
    if t != s:
        return p.sigma_beta2 + min(t, s) * p.sigma_delta2
    if same_site:
        return p.sigma_beta2 + t * p.sigma_delta2 + p.sigma_eps2
    return p.sigma_beta2 + t * p.sigma_delta2 + p.sigma_eps2 * p.rho


def correlations(p: PolyDlmParams, t: int, s: int) -> float:
    """t=s 이면 서로 다른 두 지점의 동시점 상관, 아니면 시점 간 상관"""
    num = moment_structure(p, t, s, same_site=False)
    return num / np.sqrt(moment_structure(p, t, t, True) * moment_structure(p, s, s, True))


def joint_covariance(p: PolyDlmParams) -> np.ndarray:
    """y = (y01, y11, y02, y12)' 의 4×4 공분산"""
    b = p.sigma_beta2 + p.sigma_delta2
    corr = np.array([[1.0, p.rho], [p.rho, 1.0]])
    S = b * np.ones((4, 4))
    S[:2, :2] += p.sigma_eps2 * corr
    S[2:, 2:] += p.sigma_delta2 * np.ones((2, 2)) + p.sigma_eps2 * corr
    return S


def stabilized(p: PolyDlmParams, T: int) -> PolyDlmParams:
    """σ_δ² 를 σ_δ²/T 로 바꾼 모수"""
    if T < 1:
        raise ParameterDomainError(f"T 는 1 이상이어야 합니다: {T}")
    return p.replace(sigma_delta2=p.sigma_delta2 / T)


# -----------------------------------------------------------
#  [예측분산]
# -----------------------------------------------------------

def theorem1(p: PolyDlmParams) -> TheoremOneResult:
    sb, sd, se, rho = p.sigma_beta2, p.sigma_delta2, p.sigma_eps2, p.rho
    A = sb + sd + se
    B = sb + 2.0 * sd + se
    b = sb + sd

    delta = A * B - b ** 2
    m1 = B * (A ** 2 - (b + se * rho) ** 2) - 2.0 * b ** 2 * (se - se * rho)
    m2 = A * (B ** 2 - (sb + 2.0 * sd + se * rho) ** 2) - 2.0 * b ** 2 * (se - se * rho)

    return TheoremOneResult(
        var_y01_y11=(A ** 2 - (b + se * rho) ** 2) / A,
        var_y02_y12=(B ** 2 - (sb + 2.0 * sd + se * rho) ** 2) / B,
        var_y01_y11_y12=m1 / delta,
        var_y02_y11_y12=m2 / delta,
        delta=delta,
        m1=m1,
        m2=m2,
    )


def conditional_variance(S: np.ndarray, target: int, given) -> float:
    """공분산 S 에서 Var(y_target | y_given)"""
    g = list(given)
    s12 = S[target, g]
    return float(S[target, target] - s12 @ np.linalg.solve(S[np.ix_(g, g)], s12))


def brute_force_variances(p: PolyDlmParams) -> Dict[str, float]:
    S = joint_covariance(p)
    return {
        "var_y01_y11": conditional_variance(S, 0, [1]),
        "var_y02_y12": conditional_variance(S, 2, [3]),
        "var_y01_y11_y12": conditional_variance(S, 0, [1, 3]),
        "var_y02_y11_y12": conditional_variance(S, 2, [1, 3]),
    }


# -----------------------------------------------------------
#  [gap / 역설]
# -----------------------------------------------------------

def theorem2_gaps(p: PolyDlmParams) -> TheoremTwoGaps:
    sb, sd, se = p.sigma_beta2, p.sigma_delta2, p.sigma_eps2
    u = 1.0 - p.rho
    A = sb + sd + se
    B = sb + 2.0 * sd + se
    delta = theorem1(p).delta

    r1 = se ** 2 * (sb + sd) ** 2 * u ** 2 / (delta * A)
    r2 = se ** 2 * (sb + sd) ** 2 * u ** 2 / (delta * B)
    s_joint = se ** 2 * sd * u ** 2 / delta
    s_single = se ** 2 * sd * u ** 2 / (A * B)
    return TheoremTwoGaps(r1, r2, s_joint, s_single, r1 - r2, s_joint - s_single)


def reduction_t2_rho_squared(p: PolyDlmParams) -> float:
    """
    (1 - exp(-d₀₁/λ)²) 묶음으로 계산한 y02 분산 감소량.
    차분과 비교하면 맞지 않으며, theorem2_gaps 는 (1 - exp(-d₀₁/λ))² 를 사용합니다.
    """
    sb, sd, se = p.sigma_beta2, p.sigma_delta2, p.sigma_eps2
    B = sb + 2.0 * sd + se
    return se ** 2 * (sb + sd) ** 2 * (1.0 - p.rho ** 2) / (theorem1(p).delta * B)


def paradox_threshold(sigma_beta2: float, sigma_delta2: float) -> float:
    """σ_β²(1 + σ_β²/σ_δ²). σ_δ² = 0 이면 무한대."""
    if sigma_delta2 == 0.0:
        return float("inf")
    return sigma_beta2 * (1.0 + sigma_beta2 / sigma_delta2)


def corollary2_paradox(p: PolyDlmParams) -> bool:
    """Var(y01|y11) < Var(y02|y11,y12) 인지 (데이터가 많을수록 분산이 커지는 경우)"""
    if p.d01 == 0.0:
        return False
    return p.sigma_eps2 > paradox_threshold(p.sigma_beta2, p.sigma_delta2)


# -----------------------------------------------------------
#  [편미분]
# -----------------------------------------------------------

### 보조
def _k_and_dk(p: PolyDlmParams, name: VarianceName):
    # V = e·u·(2 - k·e·u) 에서 k 와 ∂k/∂e
    sb, sd, se = p.sigma_beta2, p.sigma_delta2, p.sigma_eps2
    A = sb + sd + se
    B = sb + 2.0 * sd + se
    delta = A * (B) - (sb + sd) ** 2
    if name == "var_y01_y11":
        return 1.0 / A, -1.0 / A ** 2
    if name == "var_y02_y12":
        return 1.0 / B, -1.0 / B ** 2
    if name == "var_y01_y11_y12":
        return B / delta, (delta - B * (A + B)) / delta ** 2
    if name == "var_y02_y11_y12":
        return A / delta, (delta - A * (A + B)) / delta ** 2
    raise ParameterDomainError(f"알 수 없는 분산 이름: {name}")


def variance_partials(p: PolyDlmParams) -> Dict[str, Dict[str, float]]:
    """네 예측분산 각각의 ∂/∂d₀₁, ∂/∂λ, ∂/∂σ_ε² (닫힌 형식)"""
    e, rho, lam, d = p.sigma_eps2, p.rho, p.lam, p.d01
    u = 1.0 - rho
    out = {}
    for name in VARIANCE_NAMES:
        k, dk = _k_and_dk(p, name)
        dV_du = 2.0 * e * (1.0 - k * e * u)
        out[name] = {
            "d01": rho / lam * dV_du,
            "lambda": -d * rho / lam ** 2 * dV_du,
            "sigma_eps2": 2.0 * u - 2.0 * k * e * u ** 2 - e ** 2 * u ** 2 * dk,
        }
    return out


def reference_partials(p: PolyDlmParams) -> Dict[str, Dict[str, float]]:
    """
    Var(y01|y11), Var(y01|y11,y12) 의 편미분을 참고용 전개식 그대로 계산.

    - Var(y01|y11) 의 ∂/∂d₀₁ 은 2d₀₁/λ 계수를 써서 d₀₁=1 일 때만 닫힌 형식과 일치합니다.
    - Var(y01|y11,y12) 의 ∂/∂σ_ε² 는 차원이 맞지 않아 여기서 제외합니다.
    """
    sb, sd, se, lam, d, rho = p.sigma_beta2, p.sigma_delta2, p.sigma_eps2, p.lam, p.d01, p.rho
    b = sb + sd
    A = b + se
    u = 1.0 - rho
    ratio = (b + se * rho) / A

    c = (sb + sd) * (sd + se) / (se * (sb + 2.0 * sd + se))
    ratio2 = (c + rho) / (1.0 + c)
    return {
        "var_y01_y11": {
            "d01": 2.0 * d / lam * rho * se * ratio,
            "lambda": -2.0 * d / lam ** 2 * rho * se * ratio,
            "sigma_eps2": u * (2.0 - u * se * (se + 2.0 * sb + 2.0 * sd) / A ** 2),
        },
        "var_y01_y11_y12": {
            "d01": 2.0 / lam * rho * se * ratio2,
            "lambda": -2.0 * d / lam ** 2 * rho * se * ratio2,
        },
    }


def finite_difference(p: PolyDlmParams, name: VarianceName, direction: Direction, rel_step: float = 1e-6) -> float:
    """중심 차분. 인자가 0 이면 절대 간격 rel_step 사용."""
    field_name = {"d01": "d01", "lambda": "lam", "sigma_eps2": "sigma_eps2"}[direction]
    x = getattr(p, field_name)
    h = rel_step * x if x != 0.0 else rel_step
    hi = getattr(theorem1(p.replace(**{field_name: x + h})), name)
    lo = getattr(theorem1(p.replace(**{field_name: max(x - h, 0.0)})), name)
    return (hi - lo) / (x + h - max(x - h, 0.0))


def corollary1_check(p: PolyDlmParams, direction: Direction, rel_tol: float = 1e-4) -> Dict[str, Dict[str, object]]:
    """
    direction 쪽으로 움직일 때 네 분산이 증가하는지 판정.

    Returns:
        분산 이름마다 {closed_form, finite_difference, agrees, increasing}
    """
    closed = variance_partials(p)
    sign = DIRECTION_SIGN[direction]
    verdict = {}
    for name in VARIANCE_NAMES:
        cf = closed[name][direction]
        fd = finite_difference(p, name, direction)
        scale = max(abs(cf), abs(fd), 1e-300)
        verdict[name] = {
            "closed_form": cf,
            "finite_difference": fd,
            "agrees": abs(cf - fd) <= rel_tol * scale or abs(cf - fd) < 1e-12,
            "increasing": sign * cf >= 0.0,
        }
    return verdict


# -----------------------------------------------------------
#  [표 출력]
# -----------------------------------------------------------

def variance_grid(base: PolyDlmParams, d01_values) -> pd.DataFrame:
    """d₀₁ 격자에 대한 분산·gap·역설 표 (그림용 데이터)"""
    rows = []
    for d in d01_values:
        p = base.replace(d01=float(d))
        t1 = theorem1(p)
        gaps = theorem2_gaps(p)
        rows.append({"d01": float(d), **t1.as_dict(), **gaps.as_dict(), "paradox": corollary2_paradox(p)})
    return pd.DataFrame(rows)
