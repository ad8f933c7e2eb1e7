"""
Sloan 해석적 Gömböc 곡면과 위상 함수.

  r(θ, φ)^4 = 1 + 4β sinθ cos(φ - P(θ))

P(θ) 는 선형(cθ), η(θ) = (3π/2)(cosθ - cos³θ/3), 또는 η 에 Fourier 항
Σ a_k sin(k η) 를 더한 형태를 지원한다.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

import jsonschema
import numpy as np
from scipy.integrate import simpson
from scipy.optimize import minimize

from geometry import TriMesh, mesh_from_radial

logger = logging.getLogger(__name__)

MAX_BETA = 0.17
MAX_FOURIER_COEFF = 1.0
PHASE_KINDS = ("linear", "eta", "eta_fourier")

QUAD_START_PANELS = 2000
QUAD_TOL = 1e-9
QUAD_MAX_DOUBLINGS = 8

SEED_GRID = (16, 32)
DEFAULT_STARTS = 12

INSTANCES_PATH = Path(__file__).with_name("verified_instances.json")

INSTANCE_SCHEMA = {
    "type": "object",
    "required": ["instances"],
    "properties": {
        "instances": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "beta", "order", "coefficient", "expected_ecs", "expected_h_range"],
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "description": {"type": "string"},
                    "beta": {"type": "number", "exclusiveMinimum": 0, "maximum": MAX_BETA},
                    "order": {"type": "integer", "minimum": 1},
                    "coefficient": {"type": "number", "minimum": -1, "maximum": 1},
                    "expected_ecs": {"type": "integer", "minimum": 1},
                    "expected_h_range": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        }
    },
}


class QuadratureError(RuntimeError):
    """패널을 늘려도 적분값이 수렴하지 않음"""


@dataclass(frozen=True)
class PhaseSpec:
    """위상 함수 P(θ). offset 은 상수 위상 이동(질량중심 제약의 불변성 검사용)."""

    kind: str
    c: float = 0.0
    coeffs: Tuple[Tuple[int, float], ...] = ()
    offset: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in PHASE_KINDS:
            raise ValueError(f"unknown phase kind '{self.kind}', expected one of {PHASE_KINDS}")
        if not math.isfinite(self.c) or not math.isfinite(self.offset):
            raise ValueError("phase coefficients must be finite")
        orders = [k for k, _ in self.coeffs]
        if len(set(orders)) != len(orders):
            raise ValueError(f"Fourier orders must be distinct: {orders}")
        for k, a in self.coeffs:
            if int(k) != k or k < 1:
                raise ValueError(f"Fourier order must be a positive integer, got {k}")
            if not abs(a) <= MAX_FOURIER_COEFF:
                raise ValueError(f"|a_{k}| must be <= {MAX_FOURIER_COEFF}, got {a}")
        if self.coeffs and self.kind != "eta_fourier":
            raise ValueError(f"Fourier coefficients are only valid for eta_fourier, got kind '{self.kind}'")

    def shifted(self, delta: float) -> "PhaseSpec":
        return PhaseSpec(self.kind, self.c, self.coeffs, self.offset + delta)

    def to_dict(self) -> dict:
        data = {"kind": self.kind}
        if self.kind == "linear":
            data["c"] = self.c
        if self.coeffs:
            data["coeffs"] = [{"k": int(k), "a": float(a)} for k, a in self.coeffs]
        if self.offset:
            data["offset"] = self.offset
        return data


def linear_phase(c: float) -> PhaseSpec:
    return PhaseSpec("linear", c=float(c))


def eta_phase() -> PhaseSpec:
    return PhaseSpec("eta")


def fourier_phase(coeffs: Dict[int, float]) -> PhaseSpec:
    """η + Σ a_k sin(kη). coeffs 는 {k: a_k}."""
    items = tuple(sorted((int(k), float(a)) for k, a in coeffs.items()))
    return PhaseSpec("eta_fourier", coeffs=items)


@dataclass(frozen=True)
class SloanParams:
    beta: float
    phase: PhaseSpec = field(default_factory=eta_phase)

    def __post_init__(self) -> None:
        # β = 0 은 단위 구 (검증용으로 허용)
        if not (0.0 <= self.beta <= MAX_BETA):
            raise ValueError(f"beta must lie in [0, {MAX_BETA}], got {self.beta}")

    def to_dict(self) -> dict:
        return {"beta": self.beta, "phase": self.phase.to_dict()}


@dataclass(frozen=True)
class VerifiedInstance:
    name: str
    params: SloanParams
    expected_ecs: int
    expected_h_range: float
    description: str = ""

    def __post_init__(self) -> None:
        if self.expected_ecs < 1:
            raise ValueError(f"expected_ecs must be >= 1, got {self.expected_ecs}")


def eta(theta):
    """η(θ) = (3π/2)(cosθ - cos³θ / 3)"""
    ct = np.cos(theta)
    return 1.5 * np.pi * (ct - ct**3 / 3.0)


def phase(spec: PhaseSpec, theta):
    if spec.kind == "linear":
        return spec.c * np.asarray(theta) + spec.offset
    base = eta(theta)
    value = base
    for k, a in spec.coeffs:
        value = value + a * np.sin(k * base)
    return value + spec.offset


def sloan_radius(params: SloanParams, theta, phi):
    """(1 + 4β sinθ cos(φ - P(θ)))^(1/4). 4β < 1 이므로 항상 양수."""
    radicand = 1.0 + 4.0 * params.beta * np.sin(theta) * np.cos(phi - phase(params.phase, theta))
    return np.sqrt(np.sqrt(radicand))


def sloan_mesh(params: SloanParams, n_theta: int = 100, n_phi: int = 200) -> TriMesh:
    return mesh_from_radial(lambda t, p: sloan_radius(params, t, p), n_theta, n_phi)


def _simpson_constraint(spec: PhaseSpec, panels: int) -> complex:
    theta = np.linspace(0.0, np.pi, panels + 1)
    weight = np.sin(theta) ** 3
    p = phase(spec, theta)
    re = simpson(weight * np.cos(p), x=theta)
    im = simpson(weight * np.sin(p), x=theta)
    return complex(re, im)


def com_constraint_integral(spec: PhaseSpec) -> complex:
    """∫₀^π sin³θ e^{iP(θ)} dθ. 패널 수를 두 배씩 늘리며 변화가 1e-9 미만일 때까지 반복."""
    panels = QUAD_START_PANELS
    previous = _simpson_constraint(spec, panels)
    for _ in range(QUAD_MAX_DOUBLINGS):
        panels *= 2
        current = _simpson_constraint(spec, panels)
        if abs(current - previous) < QUAD_TOL:
            return current
        previous = current
    raise QuadratureError(f"constraint quadrature did not converge after {panels} panels")


def com_constraint_violation(spec: PhaseSpec) -> float:
    return abs(com_constraint_integral(spec))


def analytic_volume(params: SloanParams, n_theta: int = 400, n_phi: int = 800) -> float:
    """V = (1/3)∫∫ r³ sinθ dθ dφ (2차원 Simpson)."""
    theta = np.linspace(0.0, np.pi, n_theta + 1)
    phi = np.linspace(0.0, 2.0 * np.pi, n_phi + 1)
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    integrand = sloan_radius(params, tt, pp) ** 3 * np.sin(tt) / 3.0
    return float(simpson(simpson(integrand, x=phi, axis=1), x=theta))


def com_offset(params: SloanParams) -> np.ndarray:
    """해석적 무게중심. r⁴ 이 β 에 선형이므로 (βπ/V)(Re I, Im I, 0) 가 정확한 값이다."""
    integral = com_constraint_integral(params.phase)
    scale = params.beta * np.pi / analytic_volume(params)
    return np.array([scale * integral.real, scale * integral.imag, 0.0])


def surface_deviation(params: SloanParams, n_theta: int = 100, n_phi: int = 200) -> float:
    """격자 위 max |r - 1| (구에서 벗어난 정도)."""
    theta = np.pi * np.arange(n_theta + 1) / n_theta
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    return float(np.max(np.abs(sloan_radius(params, tt, pp) - 1.0)))


def _surface_point(params: SloanParams, w: np.ndarray) -> np.ndarray:
    """방향 w (정규화 전) 위의 곡면 점 r(θ, φ)·ŵ."""
    w = w / np.linalg.norm(w)
    theta = math.acos(min(1.0, max(-1.0, float(w[2]))))
    phi = math.atan2(float(w[1]), float(w[0]))
    return float(sloan_radius(params, theta, phi)) * w


def _tangent_frame(n: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(n, e1)


def analytic_height(
    params: SloanParams,
    centroid,
    d,
    n_starts: int = DEFAULT_STARTS,
) -> float:
    """연속 곡면 기준 COM 높이 h(d) = c·d - min v(θ,φ)·d.

    16x32 격자 스캔 후 가장 낮은 n_starts 개 점에서 Nelder-Mead 국소 탐색을 돌리고
    격자 최솟값과 비교해 가장 낮은 값을 쓴다. 국소 탐색은 시드 방향의 접평면
    좌표 (u, v) 로 진행하므로 극점 근처에서도 좌표 특이점이 없다.
    """
    if n_starts < 8:
        raise ValueError(f"n_starts must be >= 8, got {n_starts}")
    d = np.asarray(d, dtype=float)
    centroid = np.asarray(centroid, dtype=float)

    n_t, n_p = SEED_GRID
    theta = np.pi * (np.arange(n_t) + 0.5) / n_t
    phi = 2.0 * np.pi * np.arange(n_p) / n_p
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    r = sloan_radius(params, tt, pp)
    st = np.sin(tt)
    heights = r * (st * np.cos(pp) * d[0] + st * np.sin(pp) * d[1] + np.cos(tt) * d[2])
    flat = heights.ravel()
    seeds = np.argsort(flat, kind="stable")[:n_starts]
    best = float(flat[seeds[0]])

    converged = 0
    for s in seeds:
        t0, p0 = tt.flat[s], pp.flat[s]
        n0 = np.array([math.sin(t0) * math.cos(p0), math.sin(t0) * math.sin(p0), math.cos(t0)])
        e1, e2 = _tangent_frame(n0)

        def objective(x: np.ndarray) -> float:
            return float(_surface_point(params, n0 + x[0] * e1 + x[1] * e2) @ d)

        res = minimize(
            objective,
            np.zeros(2),
            method="Nelder-Mead",
            options={
                "xatol": 1e-10,
                "fatol": 1e-14,
                "maxiter": 4000,
                "initial_simplex": np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]]),
            },
        )
        if not res.success:
            continue
        converged += 1
        best = min(best, float(res.fun))
    if converged == 0:
        logger.warning(f"⚠️ 국소 탐색이 모두 수렴 실패, 격자 최솟값 사용 (d={d.tolist()})")
    return float(centroid @ d - best)


def analytic_heights(params: SloanParams, centroid, directions: Iterable, n_starts: int = DEFAULT_STARTS) -> np.ndarray:
    return np.array([analytic_height(params, centroid, d, n_starts) for d in directions])


def load_verified_instances(path: Optional[Path] = None) -> Dict[str, VerifiedInstance]:
    """검증된 인스턴스 카탈로그를 읽는다 (jsonschema 검증)."""
    path = Path(path) if path else INSTANCES_PATH
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    jsonschema.validate(data, INSTANCE_SCHEMA)
    catalog = {}
    for record in data["instances"]:
        params = SloanParams(
            beta=record["beta"],
            phase=fourier_phase({record["order"]: record["coefficient"]}),
        )
        catalog[record["name"]] = VerifiedInstance(
            name=record["name"],
            params=params,
            expected_ecs=record["expected_ecs"],
            expected_h_range=record["expected_h_range"],
            description=record.get("description", ""),
        )
    logger.debug(f"📚 검증 인스턴스 {len(catalog)}개 로드: {list(catalog)}")
    return catalog
