"""
(β, a_k) 공간의 미분 진화(differential evolution) 탐색과 검증 배터리.

목적 함수 = basin gap + λ_convex·max(0, 0.999 - convexity) + λ_com·|COM 제약|.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from equilibrium import EcsConfig, EcsReport, analyze_landscape, build_landscape
from geometry import convexity_ratio
from sloan import SloanParams, com_constraint_violation, eta_phase, fourier_phase, sloan_mesh, surface_deviation

logger = logging.getLogger(__name__)

SENTINEL = 1e6
CONVEX_THRESHOLD = 0.999
COM_TOLERANCE = 1e-6
DEFAULT_LAMBDA = 10.0
BATTERY_RESOLUTIONS = ((80, 160), (100, 200), (200, 400))
BATTERY_TAUS = (0.005, 0.01, 0.05, 0.10)

Bounds = Sequence[Tuple[float, float]]


@dataclass(frozen=True)
class SearchSpace:
    beta_bounds: Tuple[float, float] = (0.005, 0.08)
    fourier_orders: Tuple[int, ...] = (2,)
    coeff_bounds: Tuple[float, float] = (-0.5, 0.5)

    def __post_init__(self) -> None:
        for name, (lo, hi) in (("beta_bounds", self.beta_bounds), ("coeff_bounds", self.coeff_bounds)):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"{name} must be finite with lower < upper, got ({lo}, {hi})")
        if len(set(self.fourier_orders)) != len(self.fourier_orders):
            raise ValueError(f"fourier_orders must be distinct: {self.fourier_orders}")

    @property
    def dimension(self) -> int:
        return 1 + len(self.fourier_orders)

    @property
    def bounds(self) -> Tuple[Tuple[float, float], ...]:
        return (tuple(self.beta_bounds),) + tuple(tuple(self.coeff_bounds) for _ in self.fourier_orders)

    def decode(self, x: Sequence[float]) -> SloanParams:
        """벡터 -> SloanParams. 차수가 없으면 (β 만 탐색) η 위상을 쓴다."""
        if not self.fourier_orders:
            return SloanParams(beta=float(x[0]), phase=eta_phase())
        coeffs = {k: float(a) for k, a in zip(self.fourier_orders, x[1:])}
        return SloanParams(beta=float(x[0]), phase=fourier_phase(coeffs))


@dataclass(frozen=True)
class DeConfig:
    population: Optional[int] = None  # None 이면 15 * 차원
    mutation: float = 0.7
    crossover: float = 0.9
    max_generations: int = 200
    seed: int = 0
    tol: float = 1e-8
    workers: int = 1

    def __post_init__(self) -> None:
        if self.population is not None and self.population < 4:
            raise ValueError(f"population must be >= 4, got {self.population}")
        if not 0.0 < self.mutation < 2.0:
            raise ValueError(f"mutation factor must lie in (0, 2), got {self.mutation}")
        if not 0.0 <= self.crossover <= 1.0:
            raise ValueError(f"crossover rate must lie in [0, 1], got {self.crossover}")
        if self.max_generations < 1 or self.workers < 1:
            raise ValueError("max_generations and workers must be >= 1")

    def population_size(self, dimension: int) -> int:
        return self.population if self.population is not None else max(4, 15 * dimension)


@dataclass(frozen=True)
class TracePoint:
    generation: int
    best_objective: float
    best_x: Tuple[float, ...]


@dataclass(frozen=True)
class DeResult:
    x: np.ndarray
    fun: float
    generations: int
    trace: Tuple[TracePoint, ...]


@dataclass(frozen=True)
class ObjectiveTerms:
    ecs: int
    basin_gap: float
    convexity_ratio: float
    com_violation: float
    lambda_convex: float = DEFAULT_LAMBDA
    lambda_com: float = DEFAULT_LAMBDA

    @property
    def value(self) -> float:
        return (
            self.basin_gap
            + self.lambda_convex * max(0.0, CONVEX_THRESHOLD - self.convexity_ratio)
            + self.lambda_com * self.com_violation
        )


@dataclass(frozen=True)
class VerificationCell:
    resolution: Tuple[int, int]
    tau: float
    ecs: int
    boa: float
    h_range: float


@dataclass(frozen=True)
class Verification:
    params: SloanParams
    cells: Tuple[VerificationCell, ...]
    convexity_ratio: float
    com_violation: float
    surface_deviation: float
    ecs_ok: bool
    convex_ok: bool
    com_ok: bool

    @property
    def passed(self) -> bool:
        return self.ecs_ok and self.convex_ok and self.com_ok

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "passed": self.passed,
            "ecs_ok": self.ecs_ok,
            "convex_ok": self.convex_ok,
            "com_ok": self.com_ok,
            "convexity_ratio": self.convexity_ratio,
            "com_violation": self.com_violation,
            "surface_deviation": self.surface_deviation,
            "cells": [
                {
                    "resolution": f"{c.resolution[0]}x{c.resolution[1]}",
                    "tau": c.tau,
                    "ecs": c.ecs,
                    "boa": c.boa,
                    "h_range": c.h_range,
                }
                for c in self.cells
            ],
        }


@dataclass(frozen=True)
class OptimizeResult:
    params: SloanParams
    objective: float
    terms: ObjectiveTerms
    trace: Tuple[TracePoint, ...]
    verification: Optional[Verification] = None

    @property
    def basin_gap(self) -> float:
        return self.terms.basin_gap

    @property
    def convexity_ratio(self) -> float:
        return self.terms.convexity_ratio

    @property
    def com_violation(self) -> float:
        return self.terms.com_violation


def basin_gap(report: EcsReport) -> float:
    """두 번째로 낮은 싱크와 가장 낮은 싱크의 높이 차. ECS = 1 이면 0."""
    if report.ecs <= 1:
        return 0.0
    heights = sorted(s.height for s in report.sinks)
    return float(heights[1] - heights[0])


def objective_terms(
    params: SloanParams,
    ecs_config: EcsConfig = EcsConfig(),
    lambda_convex: float = DEFAULT_LAMBDA,
    lambda_com: float = DEFAULT_LAMBDA,
) -> ObjectiveTerms:
    mesh = sloan_mesh(params, *ecs_config.resolution)
    report, _ = analyze_landscape(build_landscape(mesh, ecs_config), ecs_config)
    return ObjectiveTerms(
        ecs=report.ecs,
        basin_gap=basin_gap(report),
        convexity_ratio=convexity_ratio(mesh),
        com_violation=com_constraint_violation(params.phase),
        lambda_convex=lambda_convex,
        lambda_com=lambda_com,
    )


def objective(
    params: SloanParams,
    ecs_config: EcsConfig = EcsConfig(),
    lambda_convex: float = DEFAULT_LAMBDA,
    lambda_com: float = DEFAULT_LAMBDA,
) -> float:
    """메쉬 생성/적분 실패 시 SENTINEL 을 돌려 최적화기가 후보를 버리게 한다."""
    try:
        return objective_terms(params, ecs_config, lambda_convex, lambda_com).value
    except (ValueError, RuntimeError) as e:
        logger.warning(f"⚠️ 목적 함수 평가 실패, sentinel 반환: {params.to_dict()} ({e})")
        return SENTINEL


def _reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    x = np.where(x < lo, 2.0 * lo - x, x)
    x = np.where(x > hi, 2.0 * hi - x, x)
    return np.clip(x, lo, hi)


def differential_evolution(
    func: Callable[[np.ndarray], float],
    bounds: Bounds,
    config: DeConfig = DeConfig(),
) -> DeResult:
    """rand/1/bin. 한 세대의 시도 벡터를 모두 만든 뒤 평가하고, 선택은 순서대로 한다.

    시드가 같으면 workers 수와 무관하게 결과가 같다.
    """
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    dim = len(bounds)
    size = config.population_size(dim)
    rng = np.random.default_rng(config.seed)

    population = lo + (hi - lo) * rng.random((size, dim))
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        fitness = np.array(list(pool.map(func, population)), dtype=float)
        trace = []
        generation = 0
        for generation in range(1, config.max_generations + 1):
            trials = np.empty_like(population)
            for i in range(size):
                others = [j for j in range(size) if j != i]
                r1, r2, r3 = rng.choice(others, size=3, replace=False)
                mutant = _reflect(population[r1] + config.mutation * (population[r2] - population[r3]), lo, hi)
                mask = rng.random(dim) < config.crossover
                mask[rng.integers(dim)] = True
                trials[i] = np.where(mask, mutant, population[i])

            trial_fitness = np.array(list(pool.map(func, trials)), dtype=float)
            improved = trial_fitness <= fitness
            population[improved] = trials[improved]
            fitness[improved] = trial_fitness[improved]

            best = int(np.argmin(fitness))
            trace.append(TracePoint(generation, float(fitness[best]), tuple(float(v) for v in population[best])))
            logger.debug(f"🔍 generation {generation}: best={fitness[best]:.6g}")
            if fitness.max() - fitness.min() < config.tol:
                break

    best = int(np.argmin(fitness))
    return DeResult(x=population[best].copy(), fun=float(fitness[best]), generations=generation, trace=tuple(trace))


def verify_instance(
    params: SloanParams,
    config: EcsConfig = EcsConfig(),
    resolutions: Sequence[Tuple[int, int]] = BATTERY_RESOLUTIONS,
    taus: Sequence[float] = BATTERY_TAUS,
) -> Verification:
    """해상도 x 병합 임계값 전 조합에서 ECS = 1, 볼록성, COM 제약을 따로 확인한다."""
    cells = []
    for resolution in resolutions:
        landscape = build_landscape(sloan_mesh(params, *resolution), config)
        for tau in taus:
            report, _ = analyze_landscape(landscape, config.with_overrides(merge_tau=tau))
            cells.append(VerificationCell(tuple(resolution), float(tau), report.ecs, report.boa, report.h_range))
            logger.debug(f"🔍 {resolution[0]}x{resolution[1]} tau={tau}: ECS={report.ecs}, BOA={report.boa:.3f}")

    ratio = convexity_ratio(sloan_mesh(params, *config.resolution))
    violation = com_constraint_violation(params.phase)
    result = Verification(
        params=params,
        cells=tuple(cells),
        convexity_ratio=ratio,
        com_violation=violation,
        surface_deviation=surface_deviation(params),
        ecs_ok=all(c.ecs == 1 for c in cells),
        convex_ok=ratio > CONVEX_THRESHOLD,
        com_ok=violation < COM_TOLERANCE,
    )
    logger.info(
        f"{'✅' if result.passed else '❌'} 검증 β={params.beta}: ecs_ok={result.ecs_ok}, "
        f"convex={ratio:.5f}, com={violation:.2e}"
    )
    return result


def optimize(
    space: SearchSpace = SearchSpace(),
    de_config: DeConfig = DeConfig(),
    ecs_config: EcsConfig = EcsConfig(),
    lambda_convex: float = DEFAULT_LAMBDA,
    lambda_com: float = DEFAULT_LAMBDA,
    verify: bool = True,
) -> OptimizeResult:
    logger.info(f"🚀 DE 탐색 시작: dim={space.dimension}, orders={space.fourier_orders}, seed={de_config.seed}")

    def evaluate(x: np.ndarray) -> float:
        try:
            params = space.decode(x)
        except ValueError as e:
            logger.warning(f"⚠️ 범위 밖 후보 {x.tolist()}: {e}")
            return SENTINEL
        return objective(params, ecs_config, lambda_convex, lambda_com)

    de = differential_evolution(evaluate, space.bounds, de_config)
    params = space.decode(de.x)
    terms = objective_terms(params, ecs_config, lambda_convex, lambda_com)
    verification = verify_instance(params, ecs_config) if verify else None
    logger.info(f"✅ DE 탐색 완료: {de.generations} generations, objective={de.fun:.3e}, ECS={terms.ecs}")
    return OptimizeResult(params=params, objective=terms.value, terms=terms, trace=de.trace, verification=verification)
