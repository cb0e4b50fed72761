"""
모형 자체에서 뽑은 합성 관측 자료(fixture) 생성기.

    python make_synthetic_panel.py --n 10 --held-out 2 --T 1344 --missing 0.1 --seed 7 --out dummy_data/synthetic

출력 폴더에 stations.csv, observations.csv, fixture_manifest.json, run_config.json 을 만듭니다.
"""
import argparse
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from base_dir import DUMMY_DATA_DIR
from classes import Gamma, ModelConfig
from ffbs import lambda_per_column
from model_core import (
    StationSet,
    design_from_values,
    exp_correlation,
    harmonic_table,
    state_noise_cov,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SyntheticPanel:
    stations: StationSet
    t_index: np.ndarray
    y: np.ndarray            # (n, T) 결측 처리 전 참값
    mask: np.ndarray         # (n, T)
    x: np.ndarray            # (T+1, 2n+1), 0번 행이 x₀
    lam: np.ndarray          # (T,)
    sigma2: float
    a: Tuple[float, float]
    gamma: Gamma
    held_out: Tuple[str, ...]
    missing_rate: float
    seed: int

    @property
    def mask_density(self) -> float:
        return float(self.mask.mean())


### 보조
def _random_coords(rng: np.random.Generator, n: int, extent: float) -> np.ndarray:
    # 서로 1e-6 km 이상 떨어진 좌표가 나올 때까지 다시 뽑음
    while True:
        coords = rng.uniform(0.0, extent, size=(n, 2))
        d = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
        if n == 1 or np.min(d[~np.eye(n, dtype=bool)]) > 1e-6:
            return coords


### 보조
def _chol(M: np.ndarray) -> np.ndarray:
    return np.linalg.cholesky(M + 1e-14 * np.eye(M.shape[0]))


# 주요 함수
def simulate_panel(
    n_sites: int,
    T: int,
    lam: Union[float, Sequence[float]] = 60.0,
    sigma2: float = 0.05,
    a: Tuple[float, float] = (2.5, 9.8),
    gamma: Optional[Gamma] = None,
    missing_rate: float = 0.0,
    held_out: int = 0,
    extent: float = 100.0,
    t_start: int = 1,
    seed: int = 0,
    coords: Optional[np.ndarray] = None,
) -> SyntheticPanel:
    """
    x₀ ~ N(m₀, σ²C₀), xₜ = xₜ₋₁ + N(0, σ²W), yₜ = F_t'xₜ + N(0, σ²exp(-V/λₜ))
    뒤쪽 held_out 개 관측소는 결측 없이 남겨 참값으로 사용합니다.
    """
    if n_sites < 1 or T < 1:
        raise ValueError(f"n_sites, T 는 1 이상이어야 합니다: n={n_sites}, T={T}")
    if not 0.0 <= missing_rate < 1.0:
        raise ValueError(f"missing_rate 는 [0, 1) 안이어야 합니다: {missing_rate}")
    if not 0 <= held_out < n_sites:
        raise ValueError(f"held_out 은 0 이상 n_sites 미만이어야 합니다: {held_out}")

    rng = np.random.default_rng(seed)
    gamma = gamma or Gamma()
    coords = _random_coords(rng, n_sites, extent) if coords is None else np.asarray(coords, dtype=float)
    ids = [f"S{i + 1:02d}" for i in range(n_sites)]
    stations = StationSet.from_coords(ids, coords)
    V = stations.V

    t_index = np.arange(t_start, t_start + T, dtype=np.int64)
    lam_arr = lambda_per_column(lam, T)
    m0, C0 = ModelConfig(gamma=gamma).initial_state(n_sites)
    L_W = _chol(sigma2 * state_noise_cov(gamma, V))
    L_obs: Dict[float, np.ndarray] = {}
    S1, S2 = harmonic_table(t_index, a)

    p = 2 * n_sites + 1
    x = np.empty((T + 1, p))
    x[0] = m0 + _chol(sigma2 * C0) @ rng.standard_normal(p)
    y = np.empty((n_sites, T))
    for k in range(T):
        x[k + 1] = x[k] + L_W @ rng.standard_normal(p)
        key = float(lam_arr[k])
        if key not in L_obs:
            L_obs[key] = _chol(sigma2 * exp_correlation(V, key))
        F = design_from_values(n_sites, S1[k], S2[k])
        y[:, k] = F @ x[k + 1] + L_obs[key] @ rng.standard_normal(n_sites)

    mask = rng.random((n_sites, T)) >= missing_rate
    if held_out:
        mask[-held_out:] = True

    return SyntheticPanel(
        stations=stations,
        t_index=t_index,
        y=y,
        mask=mask,
        x=x,
        lam=lam_arr,
        sigma2=float(sigma2),
        a=(float(a[0]), float(a[1])),
        gamma=gamma,
        held_out=tuple(ids[-held_out:]) if held_out else (),
        missing_rate=float(missing_rate),
        seed=int(seed),
    )


def write_fixture(out_dir, panel: SyntheticPanel, model: Optional[Dict] = None) -> Dict[str, Path]:
    """합성 패널을 ingest 가 읽는 형식으로 저장합니다."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    stations_path = out / "stations.csv"
    pd.DataFrame({
        "id": panel.stations.ids,
        "x": panel.stations.coords[:, 0],
        "y": panel.stations.coords[:, 1],
    }).to_csv(stations_path, index=False, lineterminator="\n")

    obs_path = out / "observations.csv"
    values = np.where(panel.mask, panel.y, np.nan)
    frame = pd.DataFrame(values.T, columns=list(panel.stations.ids))
    frame.insert(0, "time", panel.t_index)
    with open(obs_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("#unit=sqrt-ppb\n")
        frame.to_csv(f, index=False, na_rep="", lineterminator="\n")

    manifest_path = out / "fixture_manifest.json"
    manifest = {
        "n": panel.stations.n,
        "T": int(panel.t_index.shape[0]),
        "t_start": int(panel.t_index[0]),
        "mask_density": panel.mask_density,
        "missing_rate": panel.missing_rate,
        "seed": panel.seed,
        "held_out": list(panel.held_out),
        "truth": {
            "lambda": panel.lam.tolist() if np.ptp(panel.lam) > 0 else float(panel.lam[0]),
            "sigma2": panel.sigma2,
            "a": list(panel.a),
            "gamma": panel.gamma.model_dump(),
        },
    }
    manifest_path.write_text(json.dumps(manifest, indent=4, ensure_ascii=False) + "\n", encoding="utf-8")

    config_path = out / "run_config.json"
    run_config = {
        "stations_path": "stations.csv",
        "observations_path": "observations.csv",
        "model": model or {"gamma": panel.gamma.model_dump()},
        "ungauged": list(panel.held_out),
    }
    config_path.write_text(json.dumps(run_config, indent=4, ensure_ascii=False) + "\n", encoding="utf-8")

    logger.info(f"✅ 합성 fixture 생성: {out} (n={panel.stations.n}, T={panel.t_index.shape[0]}, 관측 비율 {panel.mask_density:.3f})")
    return {"stations": stations_path, "observations": obs_path, "manifest": manifest_path, "config": config_path}


def main(argv=None):
    parser = argparse.ArgumentParser(description="모형에서 합성 관측 자료를 생성합니다.")
    parser.add_argument("--n", type=int, default=10, help="관측소 수 (held-out 포함)")
    parser.add_argument("--T", type=int, default=336, help="시간 수")
    parser.add_argument("--held-out", type=int, default=2, help="참값용으로 남길 관측소 수")
    parser.add_argument("--missing", type=float, default=0.05, help="결측 비율")
    parser.add_argument("--lam", type=float, default=60.0)
    parser.add_argument("--sigma2", type=float, default=0.05)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=str(DUMMY_DATA_DIR / "synthetic"))
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    panel = simulate_panel(
        args.n, args.T,
        lam=args.lam, sigma2=args.sigma2,
        missing_rate=args.missing, held_out=args.held_out, seed=args.seed,
    )
    write_fixture(args.out, panel)


if __name__ == "__main__":
    main()
