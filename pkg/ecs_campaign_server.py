import argparse
import asyncio
import logging
from typing import Dict, List, Optional

from dotenv import load_dotenv

from campaigns import (
    BALLAST_GEOMETRIES,
    DEFAULT_BETAS,
    DYNAMICS_GEOMETRIES,
    EXIT_CRASH,
    EXIT_OK,
    SWEEP_RESOLUTIONS,
    THRESHOLD_TAUS,
    CampaignExecutor,
    cmd_ballast,
    cmd_cross_check,
    cmd_dynamics,
    cmd_export,
    cmd_landscape,
    cmd_optimize,
    cmd_resolution,
    cmd_sweep_beta,
    cmd_threshold,
    cmd_validate,
    cmd_verify,
    imu_grade,
    imu_improvement,
    imu_precision,
    resolve_params,
)
from config import campaign_ecs_config, create_ecs_config, load_campaign, parse_resolution
from equilibrium import MERGE_RULES

# 로깅 설정
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def _parse_coeff(text: str) -> tuple:
    """'1:0.2344' -> (1, 0.2344)"""
    order, value = text.split(":", 1)
    return int(order), float(value)


def _float_list(text: str) -> List[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _name_list(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n-dirs", type=int, help="샘플 방향 수 (기본 5000)")
    common.add_argument("--k", type=int, help="kNN 이웃 수 (기본 12)")
    common.add_argument("--merge-tau", type=float, help="병합 임계값, h-range 비율 (기본 0.01)")
    common.add_argument("--resolution", type=parse_resolution, help="메쉬 해상도 NxM (기본 100x200)")
    common.add_argument("--seed", type=int, help="난수 시드")
    common.add_argument("--out", default="results", help="결과 디렉터리")
    common.add_argument("--identify-antipodes", action="store_true", default=None, help="d 와 -d 싱크 유역을 합침")
    common.add_argument("--merge-rule", choices=MERGE_RULES, help="유역 병합 규칙 (기본 spill)")
    common.add_argument("--config", help="캠페인 설정 JSON 경로")

    params = argparse.ArgumentParser(add_help=False)
    params.add_argument("--instance", help="검증 인스턴스 이름 (primary / second / third)")
    params.add_argument("--beta", type=float)
    params.add_argument("--phase", choices=("eta", "linear"), default="eta")
    params.add_argument("--phase-c", type=float, default=5.0, help="선형 위상 계수 c (P = cθ)")
    params.add_argument("--coeff", type=_parse_coeff, action="append", default=[], help="Fourier 항 K:A (반복 가능)")

    parser = argparse.ArgumentParser(description="Gömböc ECS 오라클 재현 캠페인")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("validate", parents=[common], help="기준 도형 검증")
    p = sub.add_parser("sweep-beta", parents=[common], help="β 스윕")
    p.add_argument("--betas", type=_float_list, default=list(DEFAULT_BETAS))
    p.add_argument("--phase", choices=("eta", "linear"), default="eta")
    p.add_argument("--phase-c", type=float, default=5.0)
    sub.add_parser("verify", parents=[common, params], help="검증 배터리")
    sub.add_parser("optimize", parents=[common], help="DE 탐색")
    p = sub.add_parser("ballast", parents=[common], help="밸러스트 스윕")
    p.add_argument("--geometries", type=_name_list, default=list(BALLAST_GEOMETRIES))
    p = sub.add_parser("dynamics", parents=[common], help="SRE / steepness / BOA")
    p.add_argument("--geometries", type=_name_list, default=list(DYNAMICS_GEOMETRIES))
    p = sub.add_parser("landscape", parents=[common, params], help="지형 CSV")
    p.add_argument("--bins", type=int, default=40)
    p = sub.add_parser("export", parents=[common, params], help="메쉬 내보내기")
    p.add_argument("--format", choices=("obj", "stl", "stl-ascii", "stl-binary"), default="obj")
    p.add_argument("--geometry", help="Sloan 대신 내보낼 기준 도형 이름")
    p.add_argument("--path", help="출력 파일 경로 (기본: OUT/mesh.<ext>)")
    p = sub.add_parser("threshold", parents=[common, params], help="병합 임계값 스윕")
    p.add_argument("--taus", type=_float_list, default=list(THRESHOLD_TAUS))
    p = sub.add_parser("resolution-sweep", parents=[common, params], help="해상도 스윕")
    p.add_argument(
        "--resolutions",
        type=lambda text: [parse_resolution(r) for r in _name_list(text)],
        default=list(SWEEP_RESOLUTIONS),
    )
    sub.add_parser("cross-check", parents=[common], help="해석적 높이 vs 메쉬 높이")
    p = sub.add_parser("imu", help="IMU 하우징 자세 정밀도")
    p.add_argument("--tolerance-mm", type=float, default=0.01)
    p.add_argument("--scale-mm", type=float, default=100.0)
    return parser


def _params_from_args(args: argparse.Namespace):
    coeffs: Dict[int, float] = dict(args.coeff)
    if not args.instance and args.beta is None:
        return resolve_params(instance="primary")
    return resolve_params(args.instance, args.beta, args.phase, args.phase_c, coeffs or None)


async def main(argv: Optional[List[str]] = None) -> int:
    """명령 하나를 실행하고 종료 코드를 돌려준다 (0 성공, 2 수용 기준 불일치)."""
    load_dotenv(override=True)
    args = build_parser().parse_args(argv)

    if args.command == "imu":
        precision = imu_precision(args.tolerance_mm, args.scale_mm)
        logger.info(
            f"📐 정밀도 {precision:.5f}° ({precision * 3600:.1f} arcsec), "
            f"개선 {imu_improvement(precision):.0f}x, 등급 {imu_grade(precision)}"
        )
        return EXIT_OK

    campaign = load_campaign(args.config) if args.config else {}
    config = campaign_ecs_config(campaign, base=create_ecs_config())
    config = config.with_overrides(
        n_dirs=args.n_dirs,
        k=args.k,
        merge_tau=args.merge_tau,
        resolution=args.resolution,
        seed=args.seed,
        identify_antipodes=args.identify_antipodes,
        merge_rule=args.merge_rule,
    )
    logger.info(f"🚀 {args.command} 시작: {config.to_dict()}")
    executor = CampaignExecutor(args.out)

    if args.command == "validate":
        return await executor.execute(cmd_validate, config)
    if args.command == "sweep-beta":
        return await executor.execute(cmd_sweep_beta, args.betas, args.phase, args.phase_c, config)
    if args.command == "verify":
        if args.beta is not None:
            return await executor.execute(cmd_verify, params=_params_from_args(args), config=config)
        return await executor.execute(cmd_verify, instance=args.instance or "primary", config=config)
    if args.command == "optimize":
        return await executor.execute(cmd_optimize, campaign, config)
    if args.command == "ballast":
        return await executor.execute(cmd_ballast, args.geometries, config)
    if args.command == "dynamics":
        return await executor.execute(cmd_dynamics, args.geometries, config)
    if args.command == "landscape":
        return await executor.execute(cmd_landscape, _params_from_args(args), config, args.bins)
    if args.command == "export":
        target = args.geometry or _params_from_args(args)
        extension = "obj" if args.format == "obj" else "stl"
        path = args.path or f"{args.out}/mesh.{extension}"
        return await executor.execute(cmd_export, target, args.format, path, config)
    if args.command == "threshold":
        return await executor.execute(cmd_threshold, _params_from_args(args), args.taus, config)
    if args.command == "resolution-sweep":
        return await executor.execute(cmd_resolution, _params_from_args(args), args.resolutions, config)
    if args.command == "cross-check":
        return await executor.execute(cmd_cross_check, config=config)
    raise ValueError(f"unknown command {args.command}")


if __name__ == "__main__":
    try:
        exit(asyncio.run(main()))
    except KeyboardInterrupt:
        logger.info("🛑 실행 중단 요청됨")
    except Exception as e:
        logger.error(f"💥 치명적 오류: {e}", exc_info=True)
        exit(EXIT_CRASH)
