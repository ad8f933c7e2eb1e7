import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.spatial import ConvexHull
from scipy.spatial import QhullError

logger = logging.getLogger(__name__)

# 모든 기준 도형은 단위 구 부피로 맞춘다
UNIT_SPHERE_VOLUME = 4.0 * math.pi / 3.0
DEGENERATE_AREA_TOL = 1e-12
DEGENERATE_VOLUME_TOL = 1e-9

PRIMITIVE_KINDS = ("sphere", "cylinder", "hemisphere", "ellipsoid", "capsule", "cube")
TRIAXIAL_RATIOS = (1.0, 0.9, 0.8)
# 긴 축 하나, 짧은 축 둘: 옆으로 누운 고리 모양 최소
PROLATE_RATIOS = (1.0, 0.5, 0.5)

# Point3 는 shape (3,) float 배열로 다룬다.
Point3 = np.ndarray
RadialFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


class MeshConstructionError(ValueError):
    """메쉬 생성 실패 (반지름 비정상, 퇴화 삼각형 등)"""


class DegenerateMeshError(ValueError):
    """부피가 0 에 가까운 메쉬"""


class HullError(ValueError):
    """볼록 껍질 계산 실패 (동일 평면 입력 등)"""


@dataclass(frozen=True, eq=False)
class TriMesh:
    """인덱스 기반 삼각형 메쉬. 면은 바깥에서 볼 때 반시계 방향."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self) -> None:
        vertices = np.array(self.vertices, dtype=np.float64)
        faces = np.array(self.faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshConstructionError(f"vertices shape must be (n, 3), got {vertices.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise MeshConstructionError(f"faces shape must be (m, 3), got {faces.shape}")
        if not np.all(np.isfinite(vertices)):
            raise MeshConstructionError("vertices contain non-finite coordinates")
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise MeshConstructionError(
                f"face index out of range [0, {len(vertices)}): min={faces.min()}, max={faces.max()}"
            )
        vertices.setflags(write=False)
        faces.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])

    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def face_normals(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        n = np.cross(b - a, c - a)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def signed_volume(self) -> float:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    @cached_property
    def hull(self) -> ConvexHull:
        """정점 집합의 볼록 껍질 (qhull). 메쉬가 불변이므로 한 번만 계산한다."""
        try:
            return ConvexHull(self.vertices)
        except QhullError as e:
            raise HullError(f"convex hull construction failed: {e}") from e

    @cached_property
    def support_vertices(self) -> np.ndarray:
        """min v·d 는 볼록 껍질 정점에서만 달성되므로 높이 계산은 이 부분집합으로 충분하다."""
        return self.vertices[self.hull.vertices]

    def validate(self) -> "TriMesh":
        """부피 양수 / 퇴화 면 없음 검사. 통과하면 자기 자신을 반환."""
        areas = self.face_areas()
        bad = np.flatnonzero(areas <= DEGENERATE_AREA_TOL)
        if bad.size:
            raise MeshConstructionError(f"{bad.size} degenerate faces (first: face {int(bad[0])})")
        volume = self.signed_volume()
        if volume <= 0:
            raise MeshConstructionError(f"signed volume must be positive, got {volume:.6g}")
        return self

    def translated(self, offset) -> "TriMesh":
        return TriMesh(self.vertices + np.asarray(offset, dtype=float), self.faces)

    def scaled(self, factor) -> "TriMesh":
        return TriMesh(self.vertices * np.asarray(factor, dtype=float), self.faces)

    def rotated(self, matrix: np.ndarray) -> "TriMesh":
        return TriMesh(self.vertices @ np.asarray(matrix, dtype=float).T, self.faces)


@dataclass(frozen=True, eq=False)
class MassProperties:
    volume: float
    centroid: Point3


@dataclass(frozen=True)
class PrimitiveSpec:
    """기준 도형 사양. 비율 파라미터는 종류별로 해당하는 것만 사용된다."""

    kind: str
    cylinder_aspect: float = 2.0  # L / D
    ellipsoid_ratios: Tuple[float, float, float] = TRIAXIAL_RATIOS
    capsule_aspect: float = 3.5  # 전체 길이 / 지름

    def __post_init__(self) -> None:
        if self.kind not in PRIMITIVE_KINDS:
            raise ValueError(f"unknown primitive kind '{self.kind}', expected one of {PRIMITIVE_KINDS}")
        ratios = (self.cylinder_aspect, *self.ellipsoid_ratios, self.capsule_aspect)
        if any(not (r > 0 and math.isfinite(r)) for r in ratios):
            raise ValueError(f"primitive ratios must be positive and finite: {ratios}")
        if self.capsule_aspect <= 1.0:
            raise ValueError(f"capsule_aspect must exceed 1 (length > diameter), got {self.capsule_aspect}")


# ---------------------------------------------------------------------------
# 격자 메쉬 조립
# ---------------------------------------------------------------------------
def _grid_faces(n_rows: int, n_phi: int) -> np.ndarray:
    """북극(0) - 내부 행 - 남극(마지막) 순서의 위경도 격자 면 인덱스.

    내부 행은 북->남, 각 행 안에서는 +z 축 기준 반시계(φ 증가) 순서여야
    면 법선이 바깥을 향한다.
    """
    north = 0
    south = 1 + n_rows * n_phi
    j = np.arange(n_phi)
    j_next = (j + 1) % n_phi

    def idx(row, col):
        return 1 + row * n_phi + col

    faces = [np.column_stack([np.full(n_phi, north), idx(0, j), idx(0, j_next)])]
    for row in range(n_rows - 1):
        a, b = idx(row, j), idx(row + 1, j)
        c, d = idx(row + 1, j_next), idx(row, j_next)
        faces.append(np.column_stack([a, b, c]))
        faces.append(np.column_stack([a, c, d]))
    last = n_rows - 1
    faces.append(np.column_stack([idx(last, j), np.full(n_phi, south), idx(last, j_next)]))
    return np.vstack(faces)


def _grid_mesh(north: np.ndarray, rows: np.ndarray, south: np.ndarray) -> TriMesh:
    n_rows, n_phi, _ = rows.shape
    vertices = np.vstack([north[None, :], rows.reshape(-1, 3), south[None, :]])
    return TriMesh(vertices, _grid_faces(n_rows, n_phi))


def _revolve(profile_rho: np.ndarray, profile_z: np.ndarray, n_phi: int) -> TriMesh:
    """z 축 회전체. profile 은 윗 극점 -> 아래 극점 순서, 양 끝의 rho 는 0."""
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    rho = np.asarray(profile_rho[1:-1], dtype=float)[:, None]
    z = np.asarray(profile_z[1:-1], dtype=float)[:, None]
    rows = np.stack(
        [rho * np.cos(phi)[None, :], rho * np.sin(phi)[None, :], np.broadcast_to(z, (len(z), n_phi))],
        axis=-1,
    )
    north = np.array([0.0, 0.0, float(profile_z[0])])
    south = np.array([0.0, 0.0, float(profile_z[-1])])
    return _grid_mesh(north, rows, south)


def mesh_from_radial(radial: RadialFunction, n_theta: int, n_phi: int) -> TriMesh:
    """반지름 함수 r(θ, φ) 로부터 위경도 격자 메쉬 생성.

    (n_theta+1) x n_phi 샘플 중 θ=0, θ=π 행은 극점 하나로 합치고 극점 주변은 삼각형 팬으로 덮는다.
    radial 은 numpy 배열 (θ, φ) 를 받아 같은 shape 배열(또는 스칼라)을 반환해야 한다.
    """
    if n_theta < 8 or n_phi < 16:
        raise MeshConstructionError(f"resolution too coarse: n_theta={n_theta} (>=8), n_phi={n_phi} (>=16)")

    theta = np.pi * np.arange(n_theta + 1) / n_theta
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    r = np.broadcast_to(np.asarray(radial(tt, pp), dtype=float), tt.shape)

    bad = ~(np.isfinite(r) & (r > 0))
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise MeshConstructionError(
            f"radius must be finite and positive: r={r[i, j]!r} at (theta={tt[i, j]:.6f}, phi={pp[i, j]:.6f})"
        )

    st, ct = np.sin(tt), np.cos(tt)
    points = np.stack([r * st * np.cos(pp), r * st * np.sin(pp), r * ct], axis=-1)
    # 극점에서 방위각 의존성은 정의되지 않으므로 φ=0 값을 쓴다
    north = np.array([0.0, 0.0, r[0, 0]])
    south = np.array([0.0, 0.0, -r[-1, 0]])
    return _grid_mesh(north, points[1:-1], south).validate()


def mass_properties(mesh: TriMesh) -> MassProperties:
    """원점 기준 부호 사면체 분해로 부피와 무게중심 계산."""
    a, b, c = (mesh.vertices[mesh.faces[:, i]] for i in range(3))
    six_vol = np.einsum("ij,ij->i", a, np.cross(b, c))
    volume = six_vol.sum() / 6.0
    if abs(volume) < DEGENERATE_VOLUME_TOL:
        raise DegenerateMeshError(f"mesh volume {volume:.3e} is below {DEGENERATE_VOLUME_TOL}")
    # 사면체 무게중심 (0 + a + b + c) / 4 의 부피 가중 평균
    centroid = (six_vol[:, None] * (a + b + c)).sum(axis=0) / (4.0 * six_vol.sum())
    return MassProperties(volume=float(volume), centroid=centroid)


def convexity_ratio(mesh: TriMesh) -> float:
    """메쉬 부피 / 볼록 껍질 부피. 수치 오차로 1 을 넘는 값은 1 로 자른다."""
    volume = mass_properties(mesh).volume
    hull_volume = float(mesh.hull.volume)
    if hull_volume <= 0:
        raise HullError("convex hull has zero volume")
    return min(volume / hull_volume, 1.0)


# ---------------------------------------------------------------------------
# 기준 도형
# ---------------------------------------------------------------------------
def _orient_outward(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """볼록 도형 전용: 중심을 향하는 면의 감김 순서를 뒤집는다."""
    center = vertices.mean(axis=0)
    a, b, c = (vertices[faces[:, i]] for i in range(3))
    normals = np.cross(b - a, c - a)
    inward = np.einsum("ij,ij->i", normals, (a + b + c) / 3.0 - center) < 0
    oriented = faces.copy()
    oriented[inward] = oriented[inward][:, [0, 2, 1]]
    return oriented


def _cube_mesh(side: float) -> TriMesh:
    half = side / 2.0
    # 인덱스 = 4*bx + 2*by + bz
    bits = np.array([[(i >> 2) & 1, (i >> 1) & 1, i & 1] for i in range(8)])
    vertices = (bits * 2 - 1) * half
    cycle = [(0, 0), (0, 1), (1, 1), (1, 0)]
    faces = []
    for axis in range(3):
        others = [a for a in range(3) if a != axis]
        for fixed in (0, 1):
            quad = []
            for p, q in cycle:
                b = [0, 0, 0]
                b[axis], b[others[0]], b[others[1]] = fixed, p, q
                quad.append(4 * b[0] + 2 * b[1] + b[2])
            faces.append([quad[0], quad[1], quad[2]])
            faces.append([quad[0], quad[2], quad[3]])
    faces = np.array(faces, dtype=np.int64)
    return TriMesh(vertices, _orient_outward(vertices, faces))


def primitive_dimensions(spec: PrimitiveSpec) -> dict:
    """부피 4π/3 조건을 만족하는 해석적 치수."""
    if spec.kind == "sphere":
        return {"radius": 1.0}
    if spec.kind == "cylinder":
        radius = (2.0 / (3.0 * spec.cylinder_aspect)) ** (1.0 / 3.0)
        return {"radius": radius, "length": 2.0 * radius * spec.cylinder_aspect}
    if spec.kind == "hemisphere":
        return {"radius": 2.0 ** (1.0 / 3.0)}
    if spec.kind == "ellipsoid":
        p, q, s = spec.ellipsoid_ratios
        k = (1.0 / (p * q * s)) ** (1.0 / 3.0)
        return {"semi_axes": (k * p, k * q, k * s)}
    if spec.kind == "capsule":
        radius = ((4.0 / 3.0) / (2.0 * (spec.capsule_aspect - 1.0) + 4.0 / 3.0)) ** (1.0 / 3.0)
        return {"radius": radius, "straight_half_length": (spec.capsule_aspect - 1.0) * radius}
    if spec.kind == "cube":
        return {"side": UNIT_SPHERE_VOLUME ** (1.0 / 3.0)}
    raise ValueError(f"unknown primitive kind '{spec.kind}'")


def primitive(spec: PrimitiveSpec, resolution: int = 100) -> TriMesh:
    """부피를 4π/3 로 맞춘 기준 도형 메쉬.

    대칭축은 z, 평평한 면은 z 에 수직, 반구는 평평한 면이 아래(z=0)로 향한다.
    곡면 도형은 resolution 개 위도 분할 / 2*resolution 개 경도 분할을 쓰고,
    마지막에 메쉬 부피 기준으로 다시 스케일해 부피를 정확히 맞춘다.
    """
    if resolution < 8:
        raise MeshConstructionError(f"resolution must be >= 8, got {resolution}")
    dims = primitive_dimensions(spec)
    n_phi = 2 * resolution
    arc = max(resolution // 2, 4)

    if spec.kind == "sphere":
        mesh = mesh_from_radial(lambda t, p: np.ones_like(t), resolution, n_phi)
    elif spec.kind == "cylinder":
        r, half = dims["radius"], dims["length"] / 2.0
        mesh = _revolve(np.array([0.0, r, r, 0.0]), np.array([half, half, -half, -half]), n_phi)
    elif spec.kind == "hemisphere":
        big_r = dims["radius"]
        t = np.linspace(0.0, np.pi / 2.0, arc + 1)
        rho = np.concatenate([big_r * np.sin(t), [0.0]])
        z = np.concatenate([big_r * np.cos(t), [0.0]])
        mesh = _revolve(rho, z, n_phi)
    elif spec.kind == "ellipsoid":
        unit = mesh_from_radial(lambda t, p: np.ones_like(t), resolution, n_phi)
        mesh = unit.scaled(np.array(dims["semi_axes"]))
    elif spec.kind == "capsule":
        r, a = dims["radius"], dims["straight_half_length"]
        top = np.linspace(0.0, np.pi / 2.0, arc + 1)
        bottom = np.linspace(np.pi / 2.0, np.pi, arc + 1)
        rho = np.concatenate([r * np.sin(top), r * np.sin(bottom)])
        z = np.concatenate([a + r * np.cos(top), -a + r * np.cos(bottom)])
        rho[-1] = 0.0
        mesh = _revolve(rho, z, n_phi)
    else:
        mesh = _cube_mesh(dims["side"])

    volume = mesh.validate().signed_volume()
    mesh = mesh.scaled((UNIT_SPHERE_VOLUME / volume) ** (1.0 / 3.0))
    logger.debug(f"🔧 primitive {spec.kind}: {mesh.n_vertices} vertices, {mesh.n_faces} faces")
    return mesh


def bottom_vertex(mesh: TriMesh) -> Tuple[int, Point3]:
    """정규 좌표계에서 z 가 최소인 정점. 동률이면 가장 작은 인덱스."""
    index = int(np.argmin(mesh.vertices[:, 2]))
    return index, mesh.vertices[index].copy()


def random_rotation(rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """균일 분포 회전 행렬 (QR 분해, det=+1)."""
    rng = rng or np.random.default_rng()
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
