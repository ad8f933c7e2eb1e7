import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterable, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"

PathLike = Union[str, Path]


def _to_jsonable(value: Any) -> Any:
    """numpy 스칼라/배열, tuple, dataclass 의 to_dict 결과를 JSON 직렬화 가능한 값으로 바꾼다."""
    if hasattr(value, "to_dict") and not isinstance(value, pd.DataFrame):
        return _to_jsonable(value.to_dict())
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # NaN / inf 는 JSON 표준이 아니므로 null 로 쓴다
        return value if math.isfinite(value) else None
    return value


def dumps_report(data: Any) -> str:
    """키 정렬 + 고정 들여쓰기. 같은 입력이면 같은 바이트열."""
    return json.dumps(_to_jsonable(data), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(data: Any, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_report(data), encoding="utf-8")
    logger.info(f"💾 JSON 저장: {path}")
    return path


def to_frame(rows: Union[pd.DataFrame, Iterable[Dict[str, Any]]]) -> pd.DataFrame:
    if isinstance(rows, pd.DataFrame):
        return rows
    return pd.DataFrame([_to_jsonable(row) for row in rows])


def write_csv(rows: Union[pd.DataFrame, Iterable[Dict[str, Any]]], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = to_frame(rows)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"💾 CSV 저장: {path} ({len(frame)} rows)")
    return path


def preview(data: Any, limit: int = 200) -> str:
    """로그용 미리보기 (처음 limit 자)."""
    text = str(data)
    return text[:limit] + ("..." if len(text) > limit else "")
