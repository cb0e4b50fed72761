"""
MCMC 진단: trace, ACF/PACF, 사후 분위수, 수용률.
"""
import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np
import pandas as pd
from statsmodels.tsa.stattools import acf, pacf

from errors import ContractError
from gibbs_sampler import PosteriorDraws

logger = logging.getLogger(__name__)

QUANTILES = (0.025, 0.5, 0.975)


@dataclass(frozen=True)
class ParameterDiagnostics:
    name: str
    trace: np.ndarray
    acf: np.ndarray          # lag 0..max_lag, acf[0] = 1
    pacf: np.ndarray         # lag 1..max_lag
    quantiles: Dict[float, float]
    degenerate: bool = False


@dataclass
class Diagnostics:
    parameters: Dict[str, ParameterDiagnostics] = field(default_factory=dict)
    acceptance_rate: float = 0.0
    max_lag: int = 0

    def summary_frame(self) -> pd.DataFrame:
        rows = []
        for name, d in self.parameters.items():
            row = {"parameter": name}
            row.update({f"q{q * 100:g}": v for q, v in d.quantiles.items()})
            row["degenerate"] = d.degenerate
            rows.append(row)
        return pd.DataFrame(rows)

    def acf_frame(self) -> pd.DataFrame:
        rows = []
        for name, d in self.parameters.items():
            for h in range(len(d.acf)):
                rows.append({
                    "parameter": name,
                    "lag": h,
                    "acf": float(d.acf[h]),
                    "pacf": float(d.pacf[h - 1]) if h >= 1 else 1.0,
                })
        return pd.DataFrame(rows, columns=["parameter", "lag", "acf", "pacf"])

    def trace_frame(self) -> pd.DataFrame:
        return pd.DataFrame({name: d.trace for name, d in self.parameters.items()})


def sample_acf_pacf(x: np.ndarray, max_lag: int):
    """
    표본 ACF (자기공분산 비율) 와 Durbin-Levinson PACF.
    분산이 0 인 체인은 ACF 를 모두 1, PACF 는 lag1=1 나머지 0 으로 보고합니다.
    """
    x = np.asarray(x, dtype=float)
    if np.ptp(x) == 0.0:
        pacf_vals = np.zeros(max_lag)
        if max_lag >= 1:
            pacf_vals[0] = 1.0
        return np.ones(max_lag + 1), pacf_vals, True
    if max_lag == 0:
        return np.ones(1), np.zeros(0), False

    acf_vals = acf(x, nlags=max_lag, adjusted=False, fft=False)
    pacf_vals = pacf(x, nlags=max_lag, method="ldb")[1:]
    return np.asarray(acf_vals), np.asarray(pacf_vals), False


def _effective_lag(n_draws: int, max_lag: int, name: str) -> int:
    # PACF(ldb) 는 lag < n/2 까지만 계산 가능
    limit = min(max_lag, n_draws - 1, n_draws // 2 - 1)
    if limit < max_lag:
        msg = f"'{name}' 표본 {n_draws}개로는 max_lag={max_lag} 를 쓸 수 없어 {limit} 로 줄입니다."
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        logger.warning(f"⚠️ {msg}")
    return max(limit, 0)


# 주요 함수
def diagnostics(draws: PosteriorDraws, max_lag: int = 40, names: Sequence[str] = ("lambda", "sigma2", "a1", "a2")) -> Diagnostics:
    if draws.n_kept == 0:
        raise ContractError("burn-in 이후 표본이 없어 진단할 수 없습니다.")

    traces = draws.traces()
    out = Diagnostics(acceptance_rate=draws.acceptance_rate)
    lag = _effective_lag(draws.n_kept, max_lag, draws.label)
    out.max_lag = lag

    for name in names:
        trace = traces[name]
        acf_vals, pacf_vals, degenerate = sample_acf_pacf(trace, lag)
        qs = np.quantile(trace, QUANTILES, method="linear")
        out.parameters[name] = ParameterDiagnostics(
            name=name,
            trace=trace,
            acf=acf_vals,
            pacf=pacf_vals,
            quantiles={q: float(v) for q, v in zip(QUANTILES, qs)},
            degenerate=degenerate,
        )
        if degenerate:
            logger.info(f"💡 '{name}' 체인이 상수입니다 (고정 모수).")
    return out
