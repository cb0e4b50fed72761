import json
import logging
from pathlib import Path
from typing import List

import numpy as np

from errors import ContractError
from gibbs_sampler import ChainSnapshot, PosteriorDraws

logger = logging.getLogger(__name__)

# 한 줄에 JSON 객체 하나 (line-delimited JSON)
# 첫 줄은 "kind": "header" 로 체인 요약을 담습니다.


### 보조
def _dump_line(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


### 보조
def _read_lines(path: Path) -> List[dict]:
    if not path.is_file():
        raise ContractError(f"파일을 찾을 수 없습니다: {path}")
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for k, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ContractError(f"{path} {k}번째 줄의 JSON 형식이 올바르지 않습니다: {e}")
    if not records or records[0].get("kind") != "header":
        raise ContractError(f"{path} 에 header 줄이 없습니다.")
    return records


def save_draws(file_path, draws: PosteriorDraws) -> Path:
    """
    burn-in 이후 모수 기록을 jsonl 파일로 저장합니다.

    Args:
        file_path: draws/<run>.jsonl 경로
        draws: run_chain (또는 merge) 결과
    """
    file = Path(file_path)
    file.parent.mkdir(parents=True, exist_ok=True)

    header = {
        "kind": "header",
        "label": draws.label,
        "mode": draws.mode,
        "accept_count": draws.accept_count,
        "iterations": draws.iterations,
        "n_kept": draws.n_kept,
    }
    with open(file, "w", encoding="utf-8", newline="\n") as f:
        f.write(_dump_line(header) + "\n")
        for rec in draws.to_records():
            f.write(_dump_line(rec) + "\n")

    logger.info(f"✅ 표본 {draws.n_kept}개 저장 -> {file}")
    return file


def load_draws(file_path) -> PosteriorDraws:
    records = _read_lines(Path(file_path))
    header, rows = records[0], records[1:]
    if len(rows) != header.get("n_kept", len(rows)):
        raise ContractError(f"{file_path}: header 의 n_kept={header.get('n_kept')} 와 기록 수 {len(rows)} 가 다릅니다.")

    def col(key, dtype):
        return np.asarray([r[key] for r in rows], dtype=dtype)

    return PosteriorDraws(
        lam=col("lambda", float),
        sigma2=col("sigma2", float),
        a1=col("a1", float),
        a2=col("a2", float),
        accepted=col("accepted", bool),
        iteration_index=col("iteration", int),
        accept_count=int(header["accept_count"]),
        iterations=int(header["iterations"]),
        mode=header.get("mode", "full-MH"),
        label=header.get("label", Path(file_path).stem),
    )


def save_states(file_path, snapshots: List[ChainSnapshot], label: str = "chain") -> Path:
    """thin 간격 스냅샷 (x, x₀, yᵐ 대치값, λ, σ², a) 저장. interpolate --from 에서 다시 읽습니다."""
    file = Path(file_path)
    file.parent.mkdir(parents=True, exist_ok=True)
    with open(file, "w", encoding="utf-8", newline="\n") as f:
        f.write(_dump_line({"kind": "header", "label": label, "count": len(snapshots)}) + "\n")
        for snap in snapshots:
            f.write(_dump_line({
                "iteration": snap.iteration,
                "lambda": snap.lam.tolist(),
                "sigma2": snap.sigma2,
                "a": list(snap.a),
                "x": snap.x.tolist(),
                "x0": snap.x0.tolist(),
                "y": snap.y.tolist(),
            }) + "\n")
    logger.info(f"✅ 스냅샷 {len(snapshots)}개 저장 -> {file}")
    return file


def load_states(file_path) -> List[ChainSnapshot]:
    records = _read_lines(Path(file_path))
    snaps = [
        ChainSnapshot(
            iteration=int(r["iteration"]),
            lam=np.asarray(r["lambda"], dtype=float),
            sigma2=float(r["sigma2"]),
            a=(float(r["a"][0]), float(r["a"][1])),
            x=np.asarray(r["x"], dtype=float),
            x0=np.asarray(r["x0"], dtype=float),
            y=np.asarray(r["y"], dtype=float),
        )
        for r in records[1:]
    ]
    if len(snaps) != records[0].get("count", len(snaps)):
        raise ContractError(f"{file_path}: 스냅샷 수가 header 와 다릅니다.")
    return snaps
