"""
밸러스트(하부 가중) 실험.

유효 무게중심을 본체 좌표계의 최저 정점 쪽으로 w 만큼 옮긴 뒤
ECS 오라클을 다시 돌려, ECS = 1 이 되는 최소 w 를 찾는다.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

from equilibrium import EcsConfig, ecs_report
from geometry import Point3, TriMesh, bottom_vertex, mass_properties

logger = logging.getLogger(__name__)

DEFAULT_WEIGHTS = (0.0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30)


@dataclass(frozen=True)
class BallastConfig:
    weights: Tuple[float, ...] = DEFAULT_WEIGHTS
    ecs_config: EcsConfig = field(default_factory=EcsConfig)

    def __post_init__(self) -> None:
        weights = tuple(float(w) for w in self.weights)
        if not weights:
            raise ValueError("ballast weight grid must not be empty")
        if any(not 0.0 <= w < 1.0 for w in weights):
            raise ValueError(f"ballast weights must lie in [0, 1): {weights}")
        if list(weights) != sorted(weights):
            raise ValueError(f"ballast weights must be sorted ascending: {weights}")
        object.__setattr__(self, "weights", weights)


@dataclass(frozen=True)
class BallastPoint:
    w: float
    ecs: int
    boa: float
    degenerate: bool = False


@dataclass(frozen=True)
class BallastReport:
    points: Tuple[BallastPoint, ...]
    min_w_for_ecs1: Optional[float]

    def to_dict(self) -> dict:
        return {
            "min_w_for_ecs1": self.min_w_for_ecs1,
            "points": [
                {"w": p.w, "ecs": p.ecs, "boa": p.boa, "degenerate": p.degenerate} for p in self.points
            ],
        }


def shifted_centroid(mesh: TriMesh, w: float) -> Point3:
    """(1 - w) * c + w * v_bottom. v_bottom 은 본체 좌표계에서 고정된다."""
    if not 0.0 <= w < 1.0:
        raise ValueError(f"ballast weight must lie in [0, 1), got {w}")
    centroid = mass_properties(mesh).centroid
    _, bottom = bottom_vertex(mesh)
    return (1.0 - w) * centroid + w * bottom


def ballast_sweep(mesh: TriMesh, config: BallastConfig = BallastConfig()) -> BallastReport:
    points = []
    for w in config.weights:
        report = ecs_report(mesh, config.ecs_config, centroid=shifted_centroid(mesh, w))
        points.append(BallastPoint(w=w, ecs=report.ecs, boa=report.boa, degenerate=report.degenerate))
        logger.debug(f"🔍 w={w:.2f}: ECS={report.ecs}, BOA={report.boa:.3f}, degenerate={report.degenerate}")

    # 평탄한 지형의 ECS 는 이산화 잡음이므로 ECS = 1 로 치지 않는다
    min_w = next((p.w for p in points if p.ecs == 1 and not p.degenerate), None)
    return BallastReport(points=tuple(points), min_w_for_ecs1=min_w)
