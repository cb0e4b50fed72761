"""
관측소 / 관측값 CSV 읽기.

stations 파일 : 헤더 `id,x,y` (평면 km) 또는 `id,lat,lon` (도, 대원거리)
observations 파일 : 첫 줄 `#unit=ppb` 또는 `#unit=sqrt-ppb`, 다음 줄 헤더 `time,<site-id>...`
                   빈 칸은 결측입니다.
"""
import io
import logging
from pathlib import Path
from typing import Tuple

import numpy as np
import pandas as pd

from errors import ContractError, IngestionError
from model_core import ObservationPanel, StationSet

logger = logging.getLogger(__name__)

UNITS = ("ppb", "sqrt-ppb")

# observations 파일의 데이터 첫 행 = 3번째 줄 (preamble, header 다음)
OBS_FIRST_DATA_LINE = 3
STATIONS_FIRST_DATA_LINE = 2


### 보조
def _read_text(path: Path) -> str:
    if not path.is_file():
        raise IngestionError(f"파일을 찾을 수 없습니다: {path}")
    try:
        return path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise IngestionError(f"UTF-8 로 읽을 수 없습니다: {path} ({e})")


### 보조
def _numeric_column(values: pd.Series, name: str, first_line: int, allow_empty: bool) -> np.ndarray:
    raw = values.astype("string").str.strip()
    empty = raw.isna() | (raw == "")
    parsed = pd.to_numeric(raw.where(~empty), errors="coerce")
    bad = (~empty & parsed.isna()) | (~empty & ~np.isfinite(parsed.fillna(0.0)))
    if not allow_empty:
        bad = bad | empty
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise IngestionError(f"'{name}' 열에 숫자가 아닌 값 '{values.iloc[row]}'", line=first_line + row)
    return parsed.to_numpy(dtype=float)


def read_stations(stations_path) -> StationSet:
    path = Path(stations_path)
    text = _read_text(path)
    try:
        df = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise IngestionError("관측소 파일이 비어 있습니다.", line=1)

    cols = [c.strip() for c in df.columns]
    if cols == ["id", "x", "y"]:
        metric, c1, c2 = "euclidean", "x", "y"
    elif cols == ["id", "lat", "lon"]:
        metric, c1, c2 = "great_circle", "lat", "lon"
    else:
        raise IngestionError(f"관측소 헤더는 'id,x,y' 또는 'id,lat,lon' 이어야 합니다: {','.join(cols)}", line=1)
    df.columns = cols

    if df.empty:
        raise IngestionError("관측소 파일에 데이터 행이 없습니다 (no data rows).", line=2)

    ids = df["id"].str.strip()
    if (ids == "").any():
        row = int(np.flatnonzero((ids == "").to_numpy())[0])
        raise IngestionError("빈 관측소 id", line=STATIONS_FIRST_DATA_LINE + row)
    dup = ids.duplicated()
    if dup.any():
        row = int(np.flatnonzero(dup.to_numpy())[0])
        raise IngestionError(f"중복된 관측소 id '{ids.iloc[row]}'", line=STATIONS_FIRST_DATA_LINE + row)

    coords = np.column_stack([
        _numeric_column(df[c1], c1, STATIONS_FIRST_DATA_LINE, allow_empty=False),
        _numeric_column(df[c2], c2, STATIONS_FIRST_DATA_LINE, allow_empty=False),
    ])
    if metric == "great_circle":
        if np.any(np.abs(coords[:, 0]) > 90.0) or np.any(np.abs(coords[:, 1]) > 180.0):
            raise IngestionError("위도/경도 범위를 벗어난 좌표가 있습니다.")

    try:
        return StationSet.from_coords(ids.tolist(), coords, metric=metric)
    except ContractError as e:
        raise IngestionError(str(e))


### 보조
def _parse_time(col: pd.Series) -> np.ndarray:
    raw = col.astype("string").str.strip()
    as_int = pd.to_numeric(raw, errors="coerce")
    if not as_int.isna().any() and np.all(as_int == np.round(as_int)):
        t = as_int.to_numpy(dtype=np.int64)
    else:
        stamps = pd.to_datetime(raw, errors="coerce")
        if stamps.isna().any():
            row = int(np.flatnonzero(stamps.isna().to_numpy())[0])
            raise IngestionError(f"시간 값 '{col.iloc[row]}' 을 해석할 수 없습니다.", line=OBS_FIRST_DATA_LINE + row)
        hours = (stamps - stamps.iloc[0]) / pd.Timedelta(hours=1)
        if np.any(hours != np.round(hours)):
            row = int(np.flatnonzero((hours != np.round(hours)).to_numpy())[0])
            raise IngestionError("시간 값이 정시(시 단위)가 아닙니다.", line=OBS_FIRST_DATA_LINE + row)
        t = hours.to_numpy(dtype=np.int64) + 1

    step = np.diff(t)
    if np.any(step <= 0):
        row = int(np.flatnonzero(step <= 0)[0]) + 1
        raise IngestionError("시간 인덱스가 단조 증가하지 않습니다.", line=OBS_FIRST_DATA_LINE + row)
    if t[0] < 1:
        raise IngestionError(f"시간 인덱스는 1 이상이어야 합니다: {t[0]}", line=OBS_FIRST_DATA_LINE)
    return t


### 보조
def _fill_hour_gaps(y: np.ndarray, t_index: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """빠진 시각을 전부 결측인 열로 채워 열 하나가 정확히 한 시간이 되게 함"""
    full_t = np.arange(t_index[0], t_index[-1] + 1, dtype=np.int64)
    if full_t.size == t_index.size:
        return y, t_index
    filled = np.full((y.shape[0], full_t.size), np.nan)
    filled[:, t_index - t_index[0]] = y
    logger.warning(f"⚠️ 시간 인덱스의 빈 시각 {full_t.size - t_index.size}개를 결측 열로 채웠습니다.")
    return filled, full_t


def read_observations(observations_path, stations: StationSet) -> ObservationPanel:
    path = Path(observations_path)
    text = _read_text(path)
    lines = text.splitlines()

    if not lines or all(not ln.strip() for ln in lines):
        raise IngestionError("관측값 파일에 데이터가 없습니다 (no data rows).", line=1)

    preamble = lines[0].strip().replace(" ", "")
    if not preamble.startswith("#unit="):
        raise IngestionError("첫 줄은 '#unit=ppb' 또는 '#unit=sqrt-ppb' 이어야 합니다.", line=1)
    unit = preamble.split("=", 1)[1]
    if unit not in UNITS:
        raise IngestionError(f"알 수 없는 단위 '{unit}'", line=1)

    body = "\n".join(lines[1:])
    try:
        df = pd.read_csv(io.StringIO(body), dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise IngestionError("관측값 파일에 데이터가 없습니다 (no data rows).", line=2)
    if df.empty:
        raise IngestionError("관측값 파일에 데이터가 없습니다 (no data rows).", line=OBS_FIRST_DATA_LINE)

    cols = [c.strip() for c in df.columns]
    df.columns = cols
    if cols[0] != "time":
        raise IngestionError(f"첫 열 이름은 'time' 이어야 합니다: {cols[0]}", line=2)
    site_cols = cols[1:]
    if len(set(site_cols)) != len(site_cols):
        raise IngestionError(f"중복된 관측소 열: {site_cols}", line=2)
    unknown = [c for c in site_cols if c not in stations.ids]
    missing = [s for s in stations.ids if s not in site_cols]
    if unknown or missing:
        raise IngestionError(f"관측소 목록과 열이 맞지 않습니다 (모르는 열 {unknown}, 없는 관측소 {missing})", line=2)

    t_index = _parse_time(df["time"])
    y = np.vstack([
        _numeric_column(df[s], s, OBS_FIRST_DATA_LINE, allow_empty=True) for s in stations.ids
    ])

    if unit == "ppb":
        neg = np.isfinite(y) & (y < 0.0)
        if neg.any():
            row = int(np.argwhere(neg)[0][1])
            raise IngestionError("ppb 값은 음수일 수 없습니다.", line=OBS_FIRST_DATA_LINE + row)
        y = np.sqrt(y)

    y, t_index = _fill_hour_gaps(y, t_index)
    mask = np.isfinite(y)
    panel = ObservationPanel(y=y, mask=mask, t_index=t_index, site_ids=stations.ids, unit="sqrt-ppb")
    if panel.fully_missing.any():
        logger.warning(f"⚠️ 전체 결측인 시점 {int(panel.fully_missing.sum())}개 (주변분포로 대치됩니다)")
    return panel


# 주요 함수
def ingest(stations_path, observations_path) -> Tuple[StationSet, ObservationPanel]:
    stations = read_stations(stations_path)
    panel = read_observations(observations_path, stations)
    logger.info(
        f"✅ 읽기 완료: 관측소 {stations.n}개 ({stations.metric}), 시점 {panel.T}개, "
        f"결측 비율 {panel.missing_fraction:.3f}"
    )
    return stations, panel
