"""
오라클 설정 헬퍼.

EcsConfig 는 명시 인자 > 환경 변수(ECS_*) > 기본값 순서로 만든다.
캠페인 파일(JSON)은 CAMPAIGN_SCHEMA 로 검증한 뒤 dict 로 돌려준다.

  ECS_N_DIRS, ECS_K, ECS_MERGE_TAU, ECS_FLAT_FLOOR, ECS_SEED,
  ECS_IDENTIFY_ANTIPODES (1/true/yes), ECS_RESOLUTION (예: 100x200),
  ECS_MERGE_RULE (spill / sink_height)
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import jsonschema

from equilibrium import MERGE_RULES, EcsConfig

logger = logging.getLogger(__name__)

_TRUE_VALUES = {"1", "true", "yes", "on"}

CAMPAIGN_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_dirs": {"type": "integer", "minimum": 100},
                "k": {"type": "integer", "minimum": 3},
                "merge_tau": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "flat_floor": {"type": "number", "minimum": 0},
                "seed": {"type": "integer"},
                "identify_antipodes": {"type": "boolean"},
                "resolution": {"type": "string", "pattern": "^[0-9]+x[0-9]+$"},
                "merge_rule": {"enum": list(MERGE_RULES)},
            },
        },
        "search": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "beta_bounds": {"$ref": "#/definitions/interval"},
                "fourier_orders": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "uniqueItems": True,
                },
                "coeff_bounds": {"$ref": "#/definitions/interval"},
                "lambda_convex": {"type": "number", "minimum": 0},
                "lambda_com": {"type": "number", "minimum": 0},
            },
        },
        "de": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "population": {"type": "integer", "minimum": 4},
                "mutation": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 2},
                "crossover": {"type": "number", "minimum": 0, "maximum": 1},
                "max_generations": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "tol": {"type": "number", "minimum": 0},
                "workers": {"type": "integer", "minimum": 1},
            },
        },
    },
    "definitions": {
        "interval": {
            "type": "array",
            "items": {"type": "number"},
            "minItems": 2,
            "maxItems": 2,
        }
    },
}


class ConfigError(ValueError):
    """환경 변수 / 캠페인 파일 값이 잘못됨"""


def parse_resolution(text: str) -> Tuple[int, int]:
    """'100x200' -> (100, 200)"""
    try:
        n_theta, n_phi = (int(part) for part in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"resolution must look like NxM, got '{text}'") from None
    return n_theta, n_phi


def _env(name: str, cast):
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return None
    try:
        return cast(raw.strip())
    except (TypeError, ValueError):
        raise ConfigError(f"environment variable {name}={raw!r} is invalid") from None


def _env_bool(raw: str) -> bool:
    return raw.lower() in _TRUE_VALUES


def create_ecs_config(
    n_dirs: Optional[int] = None,
    k: Optional[int] = None,
    merge_tau: Optional[float] = None,
    flat_floor: Optional[float] = None,
    seed: Optional[int] = None,
    identify_antipodes: Optional[bool] = None,
    resolution: Optional[Union[str, Tuple[int, int]]] = None,
    merge_rule: Optional[str] = None,
    base: Optional[EcsConfig] = None,
) -> EcsConfig:
    """프로젝트 전체에서 쓰는 EcsConfig 생성 함수."""
    if isinstance(resolution, str):
        resolution = parse_resolution(resolution)
    explicit = {
        "n_dirs": n_dirs,
        "k": k,
        "merge_tau": merge_tau,
        "flat_floor": flat_floor,
        "seed": seed,
        "identify_antipodes": identify_antipodes,
        "resolution": resolution,
        "merge_rule": merge_rule,
    }
    from_env = {
        "n_dirs": _env("ECS_N_DIRS", int),
        "k": _env("ECS_K", int),
        "merge_tau": _env("ECS_MERGE_TAU", float),
        "flat_floor": _env("ECS_FLAT_FLOOR", float),
        "seed": _env("ECS_SEED", int),
        "identify_antipodes": _env("ECS_IDENTIFY_ANTIPODES", _env_bool),
        "resolution": _env("ECS_RESOLUTION", parse_resolution),
        "merge_rule": _env("ECS_MERGE_RULE", str.lower),
    }
    values = {key: explicit[key] if explicit[key] is not None else from_env[key] for key in explicit}
    try:
        return (base or EcsConfig()).with_overrides(**values)
    except ValueError as e:
        raise ConfigError(f"invalid oracle configuration: {e}") from e


def load_campaign(path: Union[str, Path]) -> Dict[str, Any]:
    """캠페인 JSON 을 읽고 스키마 검증. 오류 메시지에 JSON 경로를 포함한다."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"campaign file {path} is not valid JSON: {e}") from e
    try:
        jsonschema.validate(data, CAMPAIGN_SCHEMA)
    except jsonschema.ValidationError as e:
        location = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"campaign file {path}: {location}: {e.message}") from e
    logger.info(f"📄 캠페인 설정 로드: {path} (sections={sorted(data)})")
    return data


def campaign_ecs_config(campaign: Dict[str, Any], base: Optional[EcsConfig] = None) -> EcsConfig:
    """캠페인 파일의 oracle 섹션을 base (기본: 환경 변수 기반 설정) 위에 덮어쓴다."""
    oracle = dict(campaign.get("oracle", {}))
    if "resolution" in oracle:
        oracle["resolution"] = parse_resolution(oracle["resolution"])
    try:
        return (base or create_ecs_config()).with_overrides(**oracle)
    except ValueError as e:
        raise ConfigError(f"invalid oracle section: {e}") from e
