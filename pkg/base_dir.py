import os
from pathlib import Path

from dotenv import load_dotenv

# .env 파일이 있으면 환경변수로 읽어들임
load_dotenv()

BASE_DIR = Path(__file__).resolve().parent

# 실행 결과물(draws, manifest, coverage ...)이 저장되는 기본 폴더
BASE_OUTPUT_DIR = Path(os.getenv("DLM_OUTPUT_DIR", str(BASE_DIR / "output")))

# 더미(합성) 데이터 폴더
DUMMY_DATA_DIR = BASE_DIR / "dummy_data"

LOG_LEVEL = os.getenv("DLM_LOG_LEVEL", "INFO").upper()

# tqdm 진행바 표시 여부
SHOW_PROGRESS = os.getenv("DLM_PROGRESS", "True") == "True"
