"""
실행 폴더, config hash, manifest.json, run_log.json 관리.

<output_dir>/runs/<hash[:12]>/   한 실행의 결과 묶음
<output_dir>/run_log.json         실행 목록 (is_latest 로 최신 표시)
"""
import datetime
import hashlib
import json
import logging
import shutil
from pathlib import Path
from typing import Any, Dict, Optional

from classes import RunConfig
from errors import ConfigError, ContractError

logger = logging.getLogger(__name__)

RUNS_DIRNAME = "runs"
RUN_LOG_NAME = "run_log.json"
MANIFEST_NAME = "manifest.json"
TIMING_NAME = "timing.json"
PARTIAL_NAME = "PARTIAL"


### 보조
# 파일 내용의 해시값을 계산
def sha256_of_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as f:
        while True:
            chunk = f.read(8192)
            if not chunk:
                break
            h.update(chunk)
    return h.hexdigest()


def config_hash(cfg: RunConfig) -> str:
    """결과에 영향을 주는 설정 필드만으로 만든 sha256"""
    canonical = json.dumps(cfg.semantic_dump(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def run_dir_for(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir) / RUNS_DIRNAME / config_hash(cfg)[:12]


### 보조
def _write_json(path: Path, data: Any):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=4, ensure_ascii=False) + "\n", encoding="utf-8")


def prepare_run_dir(run_dir: Path) -> Path:
    # 같은 설정의 이전 결과는 지우고 새로 씁니다.
    if run_dir.exists():
        logger.info(f"💡 기존 실행 폴더를 비웁니다: {run_dir}")
        shutil.rmtree(run_dir)
    run_dir.mkdir(parents=True)
    return run_dir


def write_manifest(run_dir: Path, manifest: Dict[str, Any]) -> Path:
    path = run_dir / MANIFEST_NAME
    _write_json(path, manifest)
    return path


def read_manifest(run_dir) -> Dict[str, Any]:
    path = Path(run_dir) / MANIFEST_NAME
    if not path.is_file():
        raise ContractError(f"manifest.json 이 없습니다: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ContractError(f"manifest.json 형식이 올바르지 않습니다: {e}")


def write_timing(run_dir: Path, timing: Dict[str, Any]) -> Path:
    path = run_dir / TIMING_NAME
    _write_json(path, timing)
    return path


def mark_partial(run_dir: Path, error: BaseException) -> Path:
    path = run_dir / PARTIAL_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(f"{type(error).__name__}: {error}\n", encoding="utf-8")
    logger.error(f"❌ 실행이 중단되어 PARTIAL 표시를 남깁니다: {path}")
    return path


def is_partial(run_dir) -> bool:
    return (Path(run_dir) / PARTIAL_NAME).exists()


# 주요 함수
def append_run_log(output_dir, run_id: str, summary: str, status: str = "complete") -> Path:
    """
    run_log.json 에 실행 한 건을 추가합니다.
    이전 항목들은 is_latest=False 로 바뀝니다.
    """
    log_path = Path(output_dir) / RUN_LOG_NAME
    if log_path.exists():
        try:
            log_data = json.loads(log_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            logger.warning(f"⚠️ {log_path} 의 JSON 형식이 올바르지 않아 초기화합니다.")
            log_data = {"runs": []}
    else:
        log_data = {"runs": []}

    for r in log_data.get("runs", []):
        r["is_latest"] = False

    log_data.setdefault("runs", []).append({
        "run": run_id,
        "timestamp": datetime.datetime.now().isoformat(),
        "summary": summary,
        "status": status,
        "is_latest": True,
    })
    _write_json(log_path, log_data)
    return log_path


def find_latest_run(output_dir) -> Optional[Dict[str, Any]]:
    log_path = Path(output_dir) / RUN_LOG_NAME
    if not log_path.exists():
        return None
    try:
        data = json.loads(log_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        logger.error(f"❌ 오류: '{log_path}' 의 내용이 유효한 JSON 형식이 아닙니다.")
        return None
    for entry in data.get("runs", []):
        if entry.get("is_latest") is True:
            return entry
    return None


def latest_run_dir(output_dir) -> Path:
    """run_log.json 에서 is_latest 로 표시된 실행 폴더"""
    latest = find_latest_run(output_dir)
    if latest is None:
        raise ConfigError(f"'{output_dir}' 에 실행 기록이 없습니다. --from 으로 실행 폴더를 지정하세요.")
    run_dir = Path(output_dir) / RUNS_DIRNAME / latest["run"]
    logger.info(f"💡 최신 실행 폴더 사용: {run_dir} ({latest.get('summary', '')})")
    return run_dir


def require_complete(run_dir) -> Path:
    run_dir = Path(run_dir)
    if is_partial(run_dir):
        reason = (run_dir / PARTIAL_NAME).read_text(encoding="utf-8").strip()
        raise ContractError(f"중단된 실행 폴더입니다 ({reason}): {run_dir}")
    return run_dir
