"""
재현 캠페인 실행기.

각 cmd_* 는 하나의 실험(검증 도형, β 스윕, 검증 배터리, DE 탐색, 밸러스트,
동역학, 지형 내보내기, 메쉬 내보내기, 임계값/해상도 스윕)을 돌리고
CampaignResult 를 돌려준다. 파일 기록과 종료 코드는 CampaignExecutor 가 맡는다.
"""

import asyncio
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ballast import BallastConfig, ballast_sweep
from equilibrium import (
    EcsConfig,
    analyze_landscape,
    build_landscape,
    com_heights,
    drain,
    ecs_report,
    fibonacci_sphere,
    height_histogram,
    landscape_dynamics,
    landscape_frame,
    landscape_from_heights,
    merge_basins,
    resolution_sweep,
)
from geometry import PRIMITIVE_KINDS, PROLATE_RATIOS, PrimitiveSpec, TriMesh, convexity_ratio, mass_properties, primitive
from mesh_io import export_mesh
from search import DeConfig, SearchSpace, optimize, verify_instance
from sloan import (
    SloanParams,
    analytic_heights,
    eta_phase,
    fourier_phase,
    linear_phase,
    load_verified_instances,
    sloan_mesh,
    surface_deviation,
)
from utils import preview, write_csv, write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CRASH = 1
EXIT_MISMATCH = 2

DEFAULT_BETAS = (0.001, 0.005, 0.01, 0.02, 0.05, 0.10, 0.15)
# β -> 100x200 격자 h-range 기대값 (±10%)
BETA_H_RANGE = {0.01: 0.020, 0.02: 0.040, 0.05: 0.097}
GOMBOC = "gomboc"
BALLAST_GEOMETRIES = ("sphere", "cylinder", "cube", GOMBOC)
PROLATE = "prolate"
DYNAMICS_GEOMETRIES = (GOMBOC, PROLATE, "capsule", "cylinder", "cube")
THRESHOLD_TAUS = (0.001, 0.005, 0.01, 0.05, 0.10)
SWEEP_RESOLUTIONS = ((40, 80), (80, 160), (100, 200), (200, 400))
INSTANCE_H_RANGE_TOL = 0.004
# sin(2η) 기저
DEFAULT_FOURIER_ORDERS = (2,)
PRIMARY_H_RANGE = 0.051
PRIMARY_H_RANGE_TOL = 0.002

IMU_BASELINE_DEG = 2.0
IMU_GRADES = (("tactical", 0.05), ("industrial", 1.0), ("consumer", 3.0))


@dataclass
class CampaignResult:
    name: str
    summary: Dict[str, Any]
    tables: Dict[str, Union[pd.DataFrame, List[Dict[str, Any]]]] = field(default_factory=dict)
    mismatches: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.mismatches

    def check(self, condition: bool, message: str) -> None:
        if not condition:
            self.mismatches.append(message)


# ---------------------------------------------------------------------------
# 공통 헬퍼
# ---------------------------------------------------------------------------
def resolve_params(
    instance: Optional[str] = None,
    beta: Optional[float] = None,
    phase: str = "eta",
    phase_c: float = 5.0,
    coeffs: Optional[Dict[int, float]] = None,
) -> SloanParams:
    """인스턴스 이름 또는 명시 파라미터로 SloanParams 를 만든다."""
    if instance:
        catalog = load_verified_instances()
        if instance not in catalog:
            raise KeyError(f"unknown verified instance '{instance}', expected one of {sorted(catalog)}")
        return catalog[instance].params
    if beta is None:
        raise ValueError("either an instance name or beta must be given")
    if phase == "linear":
        return SloanParams(beta=beta, phase=linear_phase(phase_c))
    if coeffs:
        return SloanParams(beta=beta, phase=fourier_phase(coeffs))
    return SloanParams(beta=beta, phase=eta_phase())


def geometry_mesh(name: str, config: EcsConfig) -> TriMesh:
    """'gomboc' 또는 검증 인스턴스 이름은 Sloan 메쉬, 그 외는 기준 도형.

    'prolate' 는 1:0.5:0.5 회전 타원체 (기본 'ellipsoid' 는 1:0.9:0.8 삼축).
    """
    if name == PROLATE:
        return primitive(PrimitiveSpec("ellipsoid", ellipsoid_ratios=PROLATE_RATIOS), resolution=config.resolution[0])
    if name in PRIMITIVE_KINDS:
        return primitive(PrimitiveSpec(name), resolution=config.resolution[0])
    params = resolve_params(instance="primary" if name == GOMBOC else name)
    return sloan_mesh(params, *config.resolution)


async def _gather_in_threads(func: Callable, items: Sequence) -> List:
    """항목별 계산을 스레드로 돌리고 입력 순서대로 결과를 모은다."""
    return list(await asyncio.gather(*(asyncio.to_thread(func, item) for item in items)))


def _within(value: float, expected: float, rel: float) -> bool:
    return abs(value - expected) <= rel * abs(expected)


# ---------------------------------------------------------------------------
# 캠페인 명령
# ---------------------------------------------------------------------------
async def cmd_validate(config: EcsConfig = EcsConfig()) -> CampaignResult:
    """기준 도형 여섯 개의 ECS 검증."""

    def run(kind: str) -> Dict[str, Any]:
        report = ecs_report(geometry_mesh(kind, config), config)
        return {
            "geometry": kind,
            "ecs": report.ecs,
            "raw_basins": report.raw_basins,
            "boa": report.boa,
            "h_range": report.h_range,
            "degenerate": report.degenerate,
        }

    rows = await _gather_in_threads(run, PRIMITIVE_KINDS)
    by_kind = {row["geometry"]: row for row in rows}
    result = CampaignResult("validate", {"config": config.to_dict(), "geometries": by_kind}, {"validate": rows})

    result.check(by_kind["capsule"]["ecs"] == 1, f"capsule ECS {by_kind['capsule']['ecs']} != 1")
    result.check(by_kind["hemisphere"]["ecs"] == 2, f"hemisphere ECS {by_kind['hemisphere']['ecs']} != 2")
    sphere = by_kind["sphere"]
    result.check(sphere["degenerate"] and sphere["h_range"] < 0.005, f"sphere not degenerate: {sphere}")
    cube_ok = {3} if config.identify_antipodes else {3, 6}
    cylinder_ok = {2} if config.identify_antipodes else {2, 3}
    result.check(by_kind["cube"]["ecs"] in cube_ok, f"cube ECS {by_kind['cube']['ecs']} not in {cube_ok}")
    result.check(
        by_kind["cylinder"]["ecs"] in cylinder_ok, f"cylinder ECS {by_kind['cylinder']['ecs']} not in {cylinder_ok}"
    )
    return result


async def cmd_sweep_beta(
    betas: Sequence[float] = DEFAULT_BETAS,
    phase: str = "eta",
    phase_c: float = 5.0,
    config: EcsConfig = EcsConfig(),
) -> CampaignResult:
    """η (또는 선형 cθ) 위상의 β 스윕: ECS, 볼록성, h-range."""

    def run(beta: float) -> Dict[str, Any]:
        params = resolve_params(beta=beta, phase=phase, phase_c=phase_c)
        mesh = sloan_mesh(params, *config.resolution)
        report = ecs_report(mesh, config)
        ratio = convexity_ratio(mesh)
        return {
            "beta": beta,
            "ecs": report.ecs,
            "raw_basins": report.raw_basins,
            "convexity_ratio": ratio,
            "convex": ratio > 0.999,
            "h_range": report.h_range,
            "surface_deviation": surface_deviation(params, *config.resolution),
        }

    rows = await _gather_in_threads(run, list(betas))
    result = CampaignResult("sweep_beta", {"phase": phase, "config": config.to_dict()}, {"sweep_beta": rows})
    if phase != "eta":
        return result

    best = min(rows, key=lambda row: (row["ecs"], abs(row["beta"] - 0.05)))
    result.summary["min_ecs"] = best["ecs"]
    result.summary["min_ecs_beta"] = best["beta"]
    result.check(best["ecs"] == 2 and abs(best["beta"] - 0.05) < 0.02, f"minimum ECS row {best} is not ECS 2 near 0.05")
    for row in rows:
        if row["beta"] <= 0.05:
            result.check(row["convex"], f"beta {row['beta']} should be convex (ratio {row['convexity_ratio']:.5f})")
        if row["beta"] >= 0.10:
            result.check(not row["convex"], f"beta {row['beta']} should be non-convex")
        expected = BETA_H_RANGE.get(round(row["beta"], 4))
        if expected is not None:
            result.check(
                _within(row["h_range"], expected, 0.10),
                f"beta {row['beta']} h_range {row['h_range']:.4f} not within 10% of {expected}",
            )
    return result


async def cmd_verify(
    instance: Optional[str] = None,
    params: Optional[SloanParams] = None,
    config: EcsConfig = EcsConfig(),
) -> CampaignResult:
    """검증 배터리: 해상도 3종 x 임계값 4종, 볼록성, COM 제약."""
    expected = None
    if params is None:
        record = load_verified_instances()[instance or "primary"]
        params, expected = record.params, record
    verification = await asyncio.to_thread(verify_instance, params, config)
    summary = verification.to_dict()
    result = CampaignResult("verify", summary, {"verify": summary["cells"]})
    result.check(verification.ecs_ok, "ECS != 1 in at least one battery cell")
    result.check(all(c.boa == 1.0 for c in verification.cells), "BOA < 1 in at least one battery cell")
    result.check(verification.convex_ok, f"convexity ratio {verification.convexity_ratio:.5f} <= 0.999")
    result.check(verification.com_ok, f"COM constraint violation {verification.com_violation:.3e} >= 1e-6")
    if expected is not None:
        summary["instance"] = expected.name
        working = [c for c in verification.cells if c.resolution == tuple(config.resolution)] or verification.cells
        h_range = working[0].h_range
        summary["expected_h_range"] = expected.expected_h_range
        result.check(
            abs(h_range - expected.expected_h_range) <= INSTANCE_H_RANGE_TOL,
            f"h_range {h_range:.4f} differs from {expected.expected_h_range} by more than {INSTANCE_H_RANGE_TOL}",
        )
    return result


async def cmd_optimize(campaign: Optional[Dict[str, Any]] = None, config: EcsConfig = EcsConfig()) -> CampaignResult:
    """캠페인 파일의 search / de 섹션으로 DE 탐색 후 검증."""
    campaign = campaign or {}
    search = dict(campaign.get("search", {}))
    lambda_convex = search.pop("lambda_convex", 10.0)
    lambda_com = search.pop("lambda_com", 10.0)
    space = SearchSpace(
        beta_bounds=tuple(search.get("beta_bounds", (0.005, 0.08))),
        fourier_orders=tuple(search.get("fourier_orders", DEFAULT_FOURIER_ORDERS)),
        coeff_bounds=tuple(search.get("coeff_bounds", (-0.5, 0.5))),
    )
    de_values = dict(campaign.get("de", {}))
    de_values.setdefault("seed", config.seed)
    de_config = DeConfig(**de_values)

    outcome = await asyncio.to_thread(optimize, space, de_config, config, lambda_convex, lambda_com)
    summary = {
        "params": outcome.params.to_dict(),
        "objective": outcome.objective,
        "basin_gap": outcome.basin_gap,
        "convexity_ratio": outcome.convexity_ratio,
        "com_violation": outcome.com_violation,
        "ecs": outcome.terms.ecs,
        "generations": len(outcome.trace),
        "verification": outcome.verification.to_dict() if outcome.verification else None,
    }
    trace = [
        {"generation": t.generation, "best_objective": t.best_objective, "best_params": list(t.best_x)}
        for t in outcome.trace
    ]
    result = CampaignResult("optimize", summary, {"trace": trace})
    if outcome.verification is not None:
        result.check(outcome.verification.passed, "best candidate did not pass the verification battery")
    return result


async def cmd_ballast(geometries: Sequence[str] = BALLAST_GEOMETRIES, config: EcsConfig = EcsConfig()) -> CampaignResult:
    """밸러스트 스윕: 도형별 ECS/BOA(w) 와 ECS = 1 이 되는 최소 w."""
    ballast_config = BallastConfig(ecs_config=config)

    def run(name: str):
        return ballast_sweep(geometry_mesh(name, config), ballast_config)

    reports = dict(zip(geometries, await _gather_in_threads(run, list(geometries))))
    rows = [
        {"geometry": name, "w": p.w, "ecs": p.ecs, "boa": p.boa, "degenerate": p.degenerate}
        for name, report in reports.items()
        for p in report.points
    ]
    summary = {name: {"min_w_for_ecs1": report.min_w_for_ecs1} for name, report in reports.items()}
    result = CampaignResult("ballast", summary, {"ballast": rows})

    if "sphere" in reports:
        min_w = reports["sphere"].min_w_for_ecs1
        result.check(min_w is not None and math.isclose(min_w, 0.05), f"sphere min_w {min_w} != 0.05")
    for name in ("cylinder", "cube"):
        if name in reports:
            result.check(reports[name].min_w_for_ecs1 is None, f"{name} reached ECS 1 at w={reports[name].min_w_for_ecs1}")
    if GOMBOC in reports:
        points = reports[GOMBOC].points
        result.check(all(p.ecs == 1 for p in points), "gomboc ECS != 1 at some ballast weight")
        result.check(all(p.boa == 1.0 for p in points), "gomboc BOA < 1 at some ballast weight")
    return result


async def cmd_dynamics(geometries: Sequence[str] = DYNAMICS_GEOMETRIES, config: EcsConfig = EcsConfig()) -> CampaignResult:
    """SRE / steepness / BOA 표."""

    def run(name: str) -> Dict[str, Any]:
        landscape = build_landscape(geometry_mesh(name, config), config)
        report, _ = analyze_landscape(landscape, config)
        dyn = landscape_dynamics(landscape, config)
        return {
            "geometry": name,
            "ecs": report.ecs,
            "sre": dyn.sre,
            "h_range": report.h_range,
            "steepness": dyn.steepness,
            "boa": dyn.boa,
        }

    rows = await _gather_in_threads(run, list(geometries))
    by_name = {row["geometry"]: row for row in rows}
    result = CampaignResult("dynamics", {"geometries": by_name}, {"dynamics": rows})

    gomboc = by_name.get(GOMBOC)
    capsule = by_name.get("capsule")
    if gomboc:
        result.check(_within(gomboc["sre"], 0.028, 0.30), f"gomboc SRE {gomboc['sre']:.4f} not within 30% of 0.028")
        result.check(
            _within(gomboc["steepness"], 0.023, 0.30),
            f"gomboc steepness {gomboc['steepness']:.4f} not within 30% of 0.023",
        )
    if capsule:
        result.check(_within(capsule["sre"], 0.743, 0.30), f"capsule SRE {capsule['sre']:.4f} not within 30% of 0.743")
        result.check(capsule["ecs"] == 1, f"capsule ECS {capsule['ecs']} != 1")
    if gomboc and capsule and gomboc["sre"] > 0:
        ratio = capsule["sre"] / gomboc["sre"]
        result.summary["sre_ratio_capsule_gomboc"] = ratio
        result.check(18.0 <= ratio <= 36.0, f"SRE ratio capsule/gomboc {ratio:.1f} outside [18, 36]")
    if "cylinder" in by_name:
        # 연속 극한의 BOA 는 cos(arctan(R / (L/2))) = 2/√5
        expected = 2.0 / math.sqrt(5.0)
        boa = by_name["cylinder"]["boa"]
        result.check(abs(boa - expected) <= 0.03, f"cylinder BOA {boa:.3f} not within 0.03 of {expected:.3f}")
    if "cube" in by_name:
        # h(d) = (s/2)·‖d‖₁ 은 팔면체 대칭이라 여섯 면 유역이 합동: 각 구면의 1/6, 대척점 합치면 1/3
        expected = (2.0 if config.identify_antipodes else 1.0) / 6.0
        boa = by_name["cube"]["boa"]
        result.check(abs(boa - expected) <= 0.03, f"cube BOA {boa:.3f} not within 0.03 of {expected:.3f}")
    if PROLATE in by_name and gomboc and capsule:
        prolate = by_name[PROLATE]
        result.check(prolate["ecs"] == 1, f"prolate ellipsoid ECS {prolate['ecs']} != 1")
        result.check(
            gomboc["sre"] < prolate["sre"] < capsule["sre"], "SRE ordering gomboc < prolate ellipsoid < capsule violated"
        )
    return result


async def cmd_landscape(params: SloanParams, config: EcsConfig = EcsConfig(), bins: int = 40) -> CampaignResult:
    """Mollweide 용 지형 CSV + 높이 히스토그램 + 보고서."""

    def run():
        landscape = build_landscape(sloan_mesh(params, *config.resolution), config)
        report, basins = analyze_landscape(landscape, config)
        return landscape, report, basins

    landscape, report, basins = await asyncio.to_thread(run)
    edges, counts = height_histogram(landscape, bins)
    histogram = pd.DataFrame({"bin_low": edges[:-1], "bin_high": edges[1:], "count": counts})
    summary = {"params": params.to_dict(), "report": report.to_dict()}
    return CampaignResult(
        "landscape", summary, {"landscape": landscape_frame(landscape, basins), "histogram": histogram}
    )


async def cmd_export(
    target: Union[str, SloanParams],
    fmt: str,
    path: Union[str, Path],
    config: EcsConfig = EcsConfig(),
) -> CampaignResult:
    """Sloan 파라미터 또는 도형 이름의 메쉬를 OBJ/STL 로 저장."""
    if isinstance(target, SloanParams):
        mesh, label = sloan_mesh(target, *config.resolution), target.to_dict()
    else:
        mesh, label = geometry_mesh(target, config), target
    fmt = {"stl": "stl-binary"}.get(fmt, fmt)
    written = await asyncio.to_thread(export_mesh, mesh, fmt, path)
    props = mass_properties(mesh)
    summary = {
        "target": label,
        "format": fmt,
        "path": str(written),
        "vertices": mesh.n_vertices,
        "faces": mesh.n_faces,
        "volume": props.volume,
        "centroid": props.centroid,
    }
    return CampaignResult("export", summary)


async def cmd_threshold(
    params: SloanParams,
    taus: Sequence[float] = THRESHOLD_TAUS,
    config: EcsConfig = EcsConfig(),
) -> CampaignResult:
    """병합 임계값 강건성: 0.5%~10% 에서 ECS = 1, 0.1% 에서 두 유역."""

    def run():
        landscape = build_landscape(sloan_mesh(params, *config.resolution), config)
        raw_sink = drain(landscape)
        counts = []
        for tau in taus:
            basins = merge_basins(
                landscape, raw_sink, tau, identify_antipodes=config.identify_antipodes, rule=config.merge_rule
            )
            counts.append((tau, basins.count))
        return counts

    sweep = await asyncio.to_thread(run)
    rows = [{"tau": tau, "ecs": ecs} for tau, ecs in sweep]
    result = CampaignResult("threshold", {"params": params.to_dict()}, {"threshold": rows})
    for tau, ecs in sweep:
        if tau >= 0.005:
            result.check(ecs == 1, f"tau {tau}: ECS {ecs} != 1")
        else:
            result.check(ecs == 2, f"tau {tau}: ECS {ecs} != 2")
    return result


async def cmd_resolution(
    params: SloanParams,
    resolutions: Sequence[Tuple[int, int]] = SWEEP_RESOLUTIONS,
    config: EcsConfig = EcsConfig(),
    expected_h_range: float = PRIMARY_H_RANGE,
) -> CampaignResult:
    """해상도 독립성: h-range 일정, 80x160 이상에서 ECS = 1."""
    sweep = await asyncio.to_thread(resolution_sweep, params, resolutions, config)
    rows = [{"resolution": f"{r[0]}x{r[1]}", "ecs": ecs, "h_range": h} for r, ecs, h in sweep]
    result = CampaignResult("resolution", {"params": params.to_dict()}, {"resolution": rows})
    for (n_theta, n_phi), ecs, h_range in sweep:
        result.check(
            abs(h_range - expected_h_range) <= PRIMARY_H_RANGE_TOL,
            f"{n_theta}x{n_phi}: h_range {h_range:.4f} not within {PRIMARY_H_RANGE_TOL} of {expected_h_range}",
        )
        if n_theta >= 80:
            result.check(ecs == 1, f"{n_theta}x{n_phi}: ECS {ecs} != 1")
    return result


async def cmd_cross_check(
    beta: float = 0.05,
    n_random: int = 500,
    rough_beta: float = 0.15,
    n_rough: int = 2000,
    config: EcsConfig = EcsConfig(),
) -> CampaignResult:
    """해석적 지지점 높이와 메쉬 높이 비교, 그리고 비볼록 β 에서의 해석적 유역 수."""

    def run():
        rng = np.random.default_rng(config.seed)
        params = SloanParams(beta=beta, phase=eta_phase())
        mesh = sloan_mesh(params, *config.resolution)
        centroid = mass_properties(mesh).centroid
        dirs = rng.normal(size=(n_random, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        diff = np.abs(analytic_heights(params, centroid, dirs) - com_heights(mesh, centroid, dirs))

        rough = SloanParams(beta=rough_beta, phase=eta_phase())
        rough_centroid = mass_properties(sloan_mesh(rough, *config.resolution)).centroid
        sphere_dirs = fibonacci_sphere(n_rough)
        landscape = landscape_from_heights(sphere_dirs, analytic_heights(rough, rough_centroid, sphere_dirs), config.k)
        return float(diff.max()), int(len(np.unique(drain(landscape))))

    max_diff, rough_basins = await asyncio.to_thread(run)
    summary = {"max_height_difference": max_diff, "rough_beta": rough_beta, "rough_raw_basins": rough_basins}
    result = CampaignResult("cross_check", summary)
    result.check(max_diff <= 1e-3, f"analytic vs mesh height differ by {max_diff:.2e} > 1e-3")
    result.check(9 <= rough_basins <= 21, f"analytic basin count {rough_basins} outside [9, 21]")
    return result


# ---------------------------------------------------------------------------
# IMU 교정 하우징 계산
# ---------------------------------------------------------------------------
def imu_precision(tolerance_mm: float, scale_mm: float) -> float:
    """가공 공차로 인한 자세 오차 arctan(tolerance / scale) [deg]."""
    if scale_mm <= 0:
        raise ValueError(f"scale_mm must be > 0, got {scale_mm}")
    if tolerance_mm < 0:
        raise ValueError(f"tolerance_mm must be >= 0, got {tolerance_mm}")
    return math.degrees(math.atan(tolerance_mm / scale_mm))


def imu_improvement(precision_deg: float, baseline_deg: float = IMU_BASELINE_DEG) -> float:
    """현장 장착 오차 대비 개선 배율."""
    if precision_deg <= 0:
        return math.inf
    return baseline_deg / precision_deg


def imu_grade(precision_deg: float) -> str:
    for grade, limit in IMU_GRADES:
        if precision_deg < limit:
            return grade
    return "none"


# ---------------------------------------------------------------------------
# 실행기
# ---------------------------------------------------------------------------
class CampaignExecutor:
    """캠페인 결과를 out_dir 에 JSON/CSV 로 기록하고 종료 코드를 정한다."""

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)

    def _publish(self, result: CampaignResult) -> List[Path]:
        written = [write_json({**result.summary, "passed": result.passed, "mismatches": result.mismatches},
                              self.out_dir / f"{result.name}.json")]
        for table, rows in result.tables.items():
            written.append(write_csv(rows, self.out_dir / f"{table}.csv"))
        return written

    async def execute(self, command: Callable, *args, **kwargs) -> int:
        name = getattr(command, "__name__", str(command))
        logger.info(f"🎯 캠페인 실행 시작: {name}")
        try:
            result = await command(*args, **kwargs)
        except Exception as e:
            logger.error(f"❌ 캠페인 실행 중 오류 발생 ({name}): {e}", exc_info=True)
            raise
        self._publish(result)
        logger.info(f"🔍 요약: {preview(result.summary)}")
        if result.passed:
            logger.info(f"✅ {result.name}: 수용 기준 충족")
            return EXIT_OK
        for mismatch in result.mismatches:
            logger.error(f"❌ {result.name}: {mismatch}")
        return EXIT_MISMATCH
