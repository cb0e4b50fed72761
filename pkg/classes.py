import json
from pathlib import Path
from typing import Any, ClassVar, Dict, FrozenSet, List, Literal, Optional, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    field_validator,
    model_validator,
)

from base_dir import BASE_OUTPUT_DIR, SHOW_PROGRESS
from errors import ConfigError, ContractError

# -----------------------------------------------------------
#  [설정 데이터 모델 정의]
#  실행 설정 파일(JSON)의 키 이름과 1:1로 대응합니다.
# -----------------------------------------------------------

# 17주 패널에 쓰는 주간 고정 λ* 기본값
DEFAULT_WEEKLY_LAMBDA_STAR: Tuple[float, ...] = (
    54.2, 178.5, 83.7, 405.4, 86.6, 59.7, 199.3, 144.1, 322.7,
    142.2, 172.7, 187.9, 315.8, 419.0, 99.8, 260.3, 284.8,
)

StudyKind = Literal["single", "weekly", "full-span", "fixed-lambda", "tau-scaled"]


class Gamma(BaseModel):
    """상태 잡음 공분산 W를 결정하는 고정 모수 (τ_y², τ₁², λ₁, τ₂², λ₂)"""
    model_config = ConfigDict(frozen=True)

    tau_y2: PositiveFloat = 0.02
    tau1_2: PositiveFloat = 0.0002
    lambda1: PositiveFloat = 25.0
    tau2_2: PositiveFloat = 0.0004
    lambda2: PositiveFloat = 25.0


class InverseGammaPrior(BaseModel):
    # X ~ IG(α, β) <=> 1/X ~ Gamma(shape=α, rate=β)
    model_config = ConfigDict(frozen=True)

    alpha: PositiveFloat
    beta: PositiveFloat


class PhasePrior(BaseModel):
    model_config = ConfigDict(frozen=True)

    mean: Tuple[float, float] = (2.5, 9.8)
    cov: Tuple[Tuple[float, float], Tuple[float, float]] = ((0.5, 0.0), (0.0, 0.5))

    @field_validator("cov")
    @classmethod
    def _cov_is_spd(cls, v):
        m = np.asarray(v, dtype=float)
        if not np.allclose(m, m.T):
            raise ValueError("prior_a.cov 는 대칭이어야 합니다.")
        try:
            np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            raise ValueError("prior_a.cov 는 양의 정부호(SPD)여야 합니다.")
        return v

    def mean_array(self) -> np.ndarray:
        return np.asarray(self.mean, dtype=float)

    def cov_array(self) -> np.ndarray:
        return np.asarray(self.cov, dtype=float)


class InitState(BaseModel):
    """x₀ ~ N(m₀, σ²C₀)"""
    model_config = ConfigDict(frozen=True)

    m0: List[float]
    C0: List[List[float]]

    @model_validator(mode="after")
    def _check(self):
        m0 = np.asarray(self.m0, dtype=float)
        C0 = np.asarray(self.C0, dtype=float)
        p = m0.shape[0]
        if p < 3 or p % 2 == 0:
            raise ValueError(f"m0 길이는 2n+1 이어야 합니다. (받은 길이 {p})")
        if C0.shape != (p, p):
            raise ValueError(f"C0 크기 {C0.shape} 가 m0 길이 {p} 와 맞지 않습니다.")
        if not np.allclose(C0, C0.T):
            raise ValueError("C0 는 대칭이어야 합니다.")
        try:
            np.linalg.cholesky(C0)
        except np.linalg.LinAlgError:
            raise ValueError("C0 는 양의 정부호(SPD)여야 합니다.")
        return self


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    gamma: Gamma = Field(default_factory=Gamma)
    prior_lambda: InverseGammaPrior = InverseGammaPrior(alpha=1.0, beta=5.0)
    prior_sigma2: InverseGammaPrior = InverseGammaPrior(alpha=2.0, beta=0.01)
    prior_a: PhasePrior = Field(default_factory=PhasePrior)
    init_state: Optional[InitState] = None
    mh_tuning: PositiveFloat = 0.5
    seed: int = 0
    iterations: PositiveInt = 4268
    burn_in: NonNegativeInt = 1000

    @model_validator(mode="after")
    def _burn_in_before_end(self):
        if self.burn_in >= self.iterations:
            raise ValueError(f"burn_in({self.burn_in}) 은 iterations({self.iterations}) 보다 작아야 합니다.")
        return self

    def initial_state(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        n개 관측소에 대한 (m₀, C₀)를 돌려줍니다.
        init_state가 없으면 기본값 m₀ = (2.85, -0.75·1ₙ, -0.08·1ₙ),
        C₀ = blockdiag(1, 0.01·Iₙ, 0.01·Iₙ)을 사용합니다.
        """
        p = 2 * n + 1
        if self.init_state is not None:
            m0 = np.asarray(self.init_state.m0, dtype=float)
            C0 = np.asarray(self.init_state.C0, dtype=float)
            if m0.shape[0] != p:
                raise ContractError(f"init_state 차원 {m0.shape[0]} 이 관측소 수 n={n} (2n+1={p}) 와 맞지 않습니다.")
            return m0, C0

        m0 = np.concatenate(([2.85], np.full(n, -0.75), np.full(n, -0.08)))
        C0 = np.diag(np.concatenate(([1.0], np.full(2 * n, 0.01))))
        return m0, C0

    def with_gamma(self, gamma: Gamma) -> "ModelConfig":
        return self.model_copy(update={"gamma": gamma})


class StudySpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: StudyKind = "single"
    weeks: Optional[PositiveInt] = None
    lambda_star: Optional[List[PositiveFloat]] = None
    t_weeks: Optional[PositiveInt] = None


class PredictionSite(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    coord: Tuple[float, float]


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    stations_path: Path
    observations_path: Path
    output_dir: Path = BASE_OUTPUT_DIR
    model: ModelConfig = Field(default_factory=ModelConfig)
    study: StudySpec = Field(default_factory=StudySpec)
    ungauged: List[str] = Field(default_factory=list)
    prediction_sites: List[PredictionSite] = Field(default_factory=list)
    levels: List[float] = Field(default_factory=lambda: [0.5, 0.8, 0.95])
    thin: PositiveInt = 10
    chains: PositiveInt = 1
    max_lag: PositiveInt = 40
    save_states: bool = False

    # 결과에 영향을 주지 않는 실행 옵션 (config hash 에서 제외, output_dir 포함)
    n_workers: Optional[PositiveInt] = None
    progress: bool = SHOW_PROGRESS

    NON_SEMANTIC_FIELDS: ClassVar[FrozenSet[str]] = frozenset({"output_dir", "n_workers", "progress"})

    @field_validator("stations_path", "observations_path")
    @classmethod
    def _file_exists(cls, v: Path):
        if not v.is_file():
            raise ValueError(f"파일을 찾을 수 없습니다: {v}")
        return v

    @field_validator("levels")
    @classmethod
    def _levels_in_unit_interval(cls, v: List[float]):
        if not v:
            raise ValueError("levels 는 비어 있을 수 없습니다.")
        if any(not (0.0 < lv < 1.0) for lv in v):
            raise ValueError(f"levels 는 (0, 1) 구간 안에 있어야 합니다: {v}")
        return sorted(set(v))

    @model_validator(mode="after")
    def _ungauged_unique(self):
        names = list(self.ungauged) + [s.id for s in self.prediction_sites]
        if len(names) != len(set(names)):
            raise ValueError(f"ungauged/prediction_sites 에 중복된 id 가 있습니다: {names}")
        return self

    def semantic_dump(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", exclude=set(self.NON_SEMANTIC_FIELDS))


### 보조
def _resolve(base: Path, value: Optional[str]) -> Optional[str]:
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else (base / p))


# 주요 함수
def load_run_config(
    config_path: str | Path,
    seed: Optional[int] = None,
    out: Optional[str | Path] = None,
    mode: Optional[str] = None,
) -> RunConfig:
    """
    JSON 실행 설정 파일을 읽어 RunConfig로 검증합니다.
    상대 경로는 설정 파일이 있는 폴더를 기준으로 해석하고,
    CLI 플래그(--seed, --out, --mode)가 주어지면 파일 값보다 우선합니다.
    """
    path = Path(config_path)
    if not path.is_file():
        raise ConfigError(f"설정 파일을 찾을 수 없습니다: {path}")

    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"설정 파일의 JSON 형식이 올바르지 않습니다: {e}")

    if not isinstance(raw, dict):
        raise ConfigError("설정 파일의 최상위는 객체여야 합니다.")

    base = path.resolve().parent
    for key in ("stations_path", "observations_path", "output_dir"):
        if key in raw:
            raw[key] = _resolve(base, raw[key])

    if seed is not None:
        raw.setdefault("model", {})["seed"] = seed
    if out is not None:
        raw["output_dir"] = str(out)
    if mode is not None:
        raw.setdefault("study", {})["kind"] = mode

    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"설정 검증 실패:\n{e}")
