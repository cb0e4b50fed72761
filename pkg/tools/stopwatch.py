import logging
import threading
import time
from typing import Dict, Optional

logger = logging.getLogger(__name__)

# 여러 스톱워치를 저장할 딕셔너리 (체인이 여러 스레드에서 돌 수 있으므로 lock 사용)
stopwatches: Dict[str, float] = {}
_lock = threading.Lock()


def start_stopwatch(name: str, verbose: bool = False):
    """지정한 이름으로 스톱워치 시작"""
    with _lock:
        stopwatches[name] = time.perf_counter()
    if verbose:
        logger.info(f"<{name} 스톱워치 시작>")


def end_stopwatch(name: str, verbose: bool = False) -> Optional[float]:
    """지정한 이름의 스톱워치 종료 후 경과 시간(초)을 돌려줌"""
    end_time = time.perf_counter()
    with _lock:
        started = stopwatches.pop(name, None)

    if started is None:
        logger.warning(f"[{name}] 스톱워치가 시작되지 않았습니다.")
        return None

    elapsed_time = end_time - started
    if verbose:
        logger.info(f"<{name} 소요 시간: {elapsed_time:.2f}초>")
    return elapsed_time
