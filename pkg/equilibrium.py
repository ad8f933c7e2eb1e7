"""
ECS (Equilibrium Count Score) 오라클.

방향 구면 S² 를 Fibonacci 나선으로 샘플링하고, 각 방향 d 에 대해
COM 높이 h(d) = c·d - min_v v·d 를 계산한 뒤 kNN 그래프 위에서
최급강하로 배수 유역(drainage basin)을 나눈 뒤, 병합 점수가
merge_tau * h_range 보다 작은 인접 유역을 낮은 점수부터 하나씩 병합해 개수를 센다.

  spill       : 2-hop 안에 더 낮은 노드가 있는 좁은 웅덩이를 먼저 터뜨리고,
                점수 = 경계 최저 고개(pass) 높이 - 두 싱크 중 높은 쪽
  sink_height : 점수 = 두 유역 노드 최고 높이 - 두 싱크 중 낮은 쪽 (complete linkage)
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix
from scipy.spatial import cKDTree

from geometry import Point3, TriMesh, mass_properties

logger = logging.getLogger(__name__)

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0
HEIGHT_CHUNK = 256
DEFAULT_RESOLUTION = (100, 200)
MERGE_RULES = ("spill", "sink_height")


@dataclass(frozen=True)
class EcsConfig:
    n_dirs: int = 5000
    k: int = 12
    merge_tau: float = 0.01
    flat_floor: float = 0.005
    seed: int = 0
    identify_antipodes: bool = False
    resolution: Tuple[int, int] = DEFAULT_RESOLUTION
    merge_rule: str = "spill"

    def __post_init__(self) -> None:
        if self.n_dirs < 100:
            raise ValueError(f"n_dirs must be >= 100, got {self.n_dirs}")
        if self.k < 3:
            raise ValueError(f"k must be >= 3, got {self.k}")
        if not 0.0 < self.merge_tau < 1.0:
            raise ValueError(f"merge_tau must lie in (0, 1), got {self.merge_tau}")
        if self.flat_floor < 0:
            raise ValueError(f"flat_floor must be >= 0, got {self.flat_floor}")
        n_theta, n_phi = self.resolution
        if n_theta < 8 or n_phi < 16:
            raise ValueError(f"resolution too coarse: {n_theta}x{n_phi}")
        if self.merge_rule not in MERGE_RULES:
            raise ValueError(f"merge_rule must be one of {MERGE_RULES}, got '{self.merge_rule}'")

    def with_overrides(self, **changes) -> "EcsConfig":
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update({key: value for key, value in changes.items() if value is not None})
        return EcsConfig(**values)

    def to_dict(self) -> dict:
        return {
            "n_dirs": self.n_dirs,
            "k": self.k,
            "merge_tau": self.merge_tau,
            "flat_floor": self.flat_floor,
            "seed": self.seed,
            "identify_antipodes": self.identify_antipodes,
            "resolution": f"{self.resolution[0]}x{self.resolution[1]}",
            "merge_rule": self.merge_rule,
        }


@dataclass(frozen=True, eq=False)
class Landscape:
    """방향별 높이와 대칭 kNN 간선. edges 는 (i, j), i < j 로 중복 없이 정렬되어 있다."""

    directions: np.ndarray
    heights: np.ndarray
    edges: np.ndarray

    def __post_init__(self) -> None:
        if len(self.directions) != len(self.heights):
            raise ValueError(f"{len(self.directions)} directions but {len(self.heights)} heights")
        if not np.all(np.isfinite(self.heights)):
            raise ValueError("landscape heights must be finite")

    @property
    def n(self) -> int:
        return int(len(self.heights))

    @property
    def h_min(self) -> float:
        return float(self.heights.min())

    @property
    def h_max(self) -> float:
        return float(self.heights.max())

    @property
    def h_range(self) -> float:
        return self.h_max - self.h_min


@dataclass(frozen=True)
class Sink:
    direction: Tuple[float, float, float]
    height: float
    member_count: int


@dataclass(frozen=True, eq=False)
class Basins:
    """배수/병합 결과. raw_sink[i] 는 노드 i 가 흘러가는 싱크 노드, label[i] 는 병합 유역 번호."""

    raw_sink: np.ndarray
    label: np.ndarray
    sink_nodes: np.ndarray
    raw_count: int

    @property
    def count(self) -> int:
        return int(len(self.sink_nodes))


@dataclass(frozen=True)
class EcsReport:
    ecs: int
    raw_basins: int
    boa: float
    h_range: float
    h_min: float
    h_max: float
    sinks: Tuple[Sink, ...]
    degenerate: bool
    min_direction: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    max_direction: Tuple[float, float, float] = (0.0, 0.0, 1.0)

    def to_dict(self) -> dict:
        return {
            "ecs": self.ecs,
            "raw_basins": self.raw_basins,
            "boa": self.boa,
            "h_range": self.h_range,
            "h_min": self.h_min,
            "h_max": self.h_max,
            "degenerate": self.degenerate,
            "min_direction": list(self.min_direction),
            "max_direction": list(self.max_direction),
            "sinks": [
                {"direction": list(s.direction), "height": s.height, "member_count": s.member_count}
                for s in self.sinks
            ],
        }


@dataclass(frozen=True)
class DynamicsReport:
    sre: float
    steepness: float
    boa: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"sre": self.sre, "steepness": self.steepness, "boa": self.boa, "degenerate": self.degenerate}


# ---------------------------------------------------------------------------
# 방향 샘플링 / 높이
# ---------------------------------------------------------------------------
def fibonacci_sphere(n: int) -> np.ndarray:
    """황금각 나선: z_i = 1 - 2(i + 0.5)/n, 방위각 2πi/φ."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    i = np.arange(n, dtype=float)
    z = 1.0 - 2.0 * (i + 0.5) / n
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    azimuth = 2.0 * np.pi * i / GOLDEN_RATIO
    points = np.column_stack([rho * np.cos(azimuth), rho * np.sin(azimuth), z])
    return points / np.linalg.norm(points, axis=1, keepdims=True)


def com_height(mesh: TriMesh, centroid: Point3, d) -> float:
    d = np.asarray(d, dtype=float)
    return float(np.asarray(centroid, dtype=float) @ d - np.min(mesh.support_vertices @ d))


def com_heights(mesh: TriMesh, centroid: Point3, directions: np.ndarray) -> np.ndarray:
    """여러 방향에 대한 h(d). 볼록 껍질 정점만 보고, 방향은 덩어리로 나눠 계산한다."""
    support = mesh.support_vertices
    directions = np.asarray(directions, dtype=float)
    centroid = np.asarray(centroid, dtype=float)
    heights = np.empty(len(directions))
    for start in range(0, len(directions), HEIGHT_CHUNK):
        block = directions[start:start + HEIGHT_CHUNK]
        heights[start:start + len(block)] = block @ centroid - (support @ block.T).min(axis=0)
    return heights


def knn_edges(directions: np.ndarray, k: int) -> np.ndarray:
    """각도 거리 기준 k 최근접 이웃의 대칭 폐포. 단위 벡터에서는 현(chord) 거리가 각도와 단조다."""
    n = len(directions)
    k_eff = min(k, n - 1)
    if k_eff < 1:
        return np.empty((0, 2), dtype=np.int64)
    _, neighbours = cKDTree(directions).query(directions, k=k_eff + 1)
    src = np.repeat(np.arange(n), k_eff)
    dst = neighbours[:, 1:].reshape(-1)
    pairs = np.column_stack([np.minimum(src, dst), np.maximum(src, dst)])
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    return np.unique(pairs, axis=0)


@lru_cache(maxsize=8)
def _sphere_graph(n_dirs: int, k: int) -> Tuple[np.ndarray, np.ndarray]:
    directions = fibonacci_sphere(n_dirs)
    edges = knn_edges(directions, k)
    directions.setflags(write=False)
    edges.setflags(write=False)
    logger.debug(f"🔍 방향 그래프 생성: {n_dirs} directions, k={k}, {len(edges)} edges")
    return directions, edges


def landscape_from_heights(directions: np.ndarray, heights: np.ndarray, k: int) -> Landscape:
    directions = np.asarray(directions, dtype=float)
    return Landscape(directions, np.asarray(heights, dtype=float), knn_edges(directions, k))


def build_landscape(mesh: TriMesh, config: EcsConfig, centroid: Optional[Point3] = None) -> Landscape:
    """centroid 를 주면 (밸러스트 실험) 메쉬 무게중심 대신 사용한다."""
    if centroid is None:
        centroid = mass_properties(mesh).centroid
    directions, edges = _sphere_graph(config.n_dirs, config.k)
    return Landscape(directions, com_heights(mesh, centroid, directions), edges)


# ---------------------------------------------------------------------------
# 배수 / 병합
# ---------------------------------------------------------------------------
def drain(landscape: Landscape) -> np.ndarray:
    """각 노드가 도달하는 싱크 노드 번호.

    노드는 가장 낮은 이웃이 자신보다 엄격히 낮을 때만 그쪽을 가리킨다.
    같은 높이의 이웃이 여럿이면 인덱스가 작은 쪽을 고른다.
    """
    h = landscape.heights
    n = landscape.n
    pointer = np.arange(n)
    if len(landscape.edges):
        i, j = landscape.edges[:, 0], landscape.edges[:, 1]
        src = np.concatenate([i, j])
        dst = np.concatenate([j, i])
        order = np.lexsort((dst, h[dst], src))
        src, dst = src[order], dst[order]
        nodes, first = np.unique(src, return_index=True)
        lowest = dst[first]
        lower = h[lowest] < h[nodes]
        pointer[nodes[lower]] = lowest[lower]
    # 포인터 점프: 높이가 엄격히 감소하므로 순환이 없다
    while True:
        jumped = pointer[pointer]
        if np.array_equal(jumped, pointer):
            return pointer
        pointer = jumped


class _UnionFind:
    def __init__(self, items: Sequence[int], heights: Dict[int, float]):
        self.parent = {item: item for item in items}
        # 루트마다 그 집합에서 가장 낮은 싱크 노드와 가장 높은 싱크 높이
        self.sink = {item: item for item in items}
        self.top = {item: heights[item] for item in items}
        self.heights = heights

    def find(self, item: int) -> int:
        root = item
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[item] != root:
            self.parent[item], item = root, self.parent[item]
        return root

    def sink_height(self, root: int) -> float:
        return self.heights[self.sink[root]]

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        keep, drop = (ra, rb) if ra < rb else (rb, ra)
        self.parent[drop] = keep
        candidates = (self.sink[ra], self.sink[rb])
        self.sink[keep] = min(candidates, key=lambda s: (self.heights[s], s))
        self.top[keep] = max(self.top[ra], self.top[rb])


def _adjacency(landscape: Landscape) -> csr_matrix:
    i, j = landscape.edges[:, 0], landscape.edges[:, 1]
    data = np.ones(2 * len(i), dtype=np.int8)
    return csr_matrix((data, (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(landscape.n, landscape.n))


def _boundary_passes(landscape: Landscape, raw_sink: np.ndarray) -> Dict[Tuple[int, int], float]:
    """맞닿은 두 raw 유역 사이의 가장 낮은 고개. 경계 간선의 고개 높이는 양 끝 높이 중 큰 값."""
    if not len(landscape.edges):
        return {}
    i, j = landscape.edges[:, 0], landscape.edges[:, 1]
    a, b = raw_sink[i], raw_sink[j]
    crossing = a != b
    if not crossing.any():
        return {}
    h = landscape.heights
    lo = np.minimum(a, b)[crossing]
    hi = np.maximum(a, b)[crossing]
    height = np.maximum(h[i], h[j])[crossing]
    order = np.lexsort((height, hi, lo))
    lo, hi, height = lo[order], hi[order], height[order]
    first = np.ones(len(lo), dtype=bool)
    first[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
    return {(int(x), int(y)): float(p) for x, y, p in zip(lo[first], hi[first], height[first])}


def _narrow_pits(landscape: Landscape, raw_sinks: Sequence[int]) -> List[Tuple[int, int]]:
    """두 칸 이웃 안에 더 낮은 노드가 있는 싱크와 그 노드.

    샘플 간격보다 좁은 웅덩이로, 꺾인 골짜기의 안장 근처에서 생긴다.
    """
    if not len(landscape.edges):
        return []
    adjacency = _adjacency(landscape)
    h = landscape.heights
    pits = []
    for sink in raw_sinks:
        ring = np.setdiff1d(adjacency[adjacency[sink].indices].indices, [sink])
        if not len(ring):
            continue
        lowest = int(ring[np.lexsort((ring, h[ring]))[0]])
        if h[lowest] < h[sink]:
            pits.append((sink, lowest))
    return pits


def _merge_score(uf: _UnionFind, ra: int, rb: int, pass_height: float, rule: str) -> float:
    ha, hb = uf.sink_height(ra), uf.sink_height(rb)
    if rule == "sink_height":
        # 합친 뒤 싱크 높이 폭. 단일 싱크끼리는 높이 차와 같다.
        return max(uf.top[ra], uf.top[rb]) - min(ha, hb)
    return pass_height - max(ha, hb)


def _merge_by_priority(uf: _UnionFind, passes: Dict[Tuple[int, int], float], threshold: float, rule: str) -> None:
    """점수가 가장 작은 인접 쌍부터 하나씩 병합하고, 병합할 때마다 점수를 다시 계산한다."""
    while True:
        links: Dict[Tuple[int, int], float] = {}
        for (a, b), pass_height in passes.items():
            ra, rb = uf.find(a), uf.find(b)
            if ra == rb:
                continue
            key = (min(ra, rb), max(ra, rb))
            links[key] = min(pass_height, links.get(key, math.inf))
        best = None
        for (ra, rb), pass_height in links.items():
            sinks = sorted((uf.sink[ra], uf.sink[rb]))
            candidate = (_merge_score(uf, ra, rb, pass_height, rule), *sinks, ra, rb)
            if best is None or candidate < best:
                best = candidate
        if best is None or best[0] >= threshold:
            return
        uf.union(best[3], best[4])


def _height_steps(landscape: Landscape) -> np.ndarray:
    """노드별 인접 간선 |Δh| 평균. 샘플 간격에서의 높이 해상도."""
    n = landscape.n
    if not len(landscape.edges):
        return np.zeros(n)
    i, j = landscape.edges[:, 0], landscape.edges[:, 1]
    dh = np.abs(landscape.heights[i] - landscape.heights[j])
    total = np.bincount(i, dh, n) + np.bincount(j, dh, n)
    degree = np.bincount(i, minlength=n) + np.bincount(j, minlength=n)
    return total / np.maximum(degree, 1)


def _antipode_pairs(landscape: Landscape, sinks: Sequence[int], threshold: float) -> List[Tuple[int, int]]:
    """방향이 서로 거의 반대(샘플 간격의 2.5배 이내)이고 높이가 같은 싱크 쌍.

    높이는 threshold 또는 두 싱크 주변의 높이 해상도 중 큰 값 안에서 같아야 한다.
    """
    spacing = math.sqrt(4.0 * math.pi / landscape.n)
    cos_limit = math.cos(2.5 * spacing)
    d = landscape.directions[list(sinks)]
    h = landscape.heights
    steps = _height_steps(landscape)
    pairs = []
    for a in range(len(sinks)):
        for b in range(a + 1, len(sinks)):
            sa, sb = sinks[a], sinks[b]
            if -float(d[a] @ d[b]) < cos_limit:
                continue
            if abs(h[sa] - h[sb]) < max(threshold, steps[sa], steps[sb]):
                pairs.append((sa, sb))
    return pairs


def merge_basins(
    landscape: Landscape,
    raw_sink: np.ndarray,
    tau: float,
    h_range: Optional[float] = None,
    identify_antipodes: bool = False,
    rule: str = "spill",
) -> Basins:
    """맞닿은 유역을 tau * h_range 기준으로 병합한다.

    rule="spill": 두 유역을 잇는 가장 낮은 고개가 높은 쪽 싱크보다 threshold 미만으로
    높으면 병합한다. 먼저 두 칸 이웃에 더 낮은 노드가 있는 싱크를 그쪽 유역으로 흘려보낸다.
    rule="sink_height": 싱크 높이 차가 threshold 미만이면 병합하되, 병합된 유역의
    싱크 높이 폭도 threshold 미만이어야 한다.

    두 규칙 모두 점수가 가장 작은 쌍부터 병합하고 (점수, 싱크 인덱스) 로 순서를 정한다.
    병합 순서가 tau 와 무관하므로 ECS 는 tau 에 대해 증가하지 않는다.
    병합된 유역의 싱크는 두 싱크 중 낮은 쪽이다.
    identify_antipodes 이면 마지막에 d <-> -d 로 대응되고 높이가 같은 싱크의 유역을 합친다.
    """
    if rule not in MERGE_RULES:
        raise ValueError(f"unknown merge rule '{rule}', expected one of {MERGE_RULES}")
    h = landscape.heights
    if h_range is None:
        h_range = landscape.h_range
    threshold = tau * h_range
    raw_sinks = sorted(int(s) for s in np.unique(raw_sink))
    uf = _UnionFind(raw_sinks, {s: float(h[s]) for s in raw_sinks})

    if rule == "spill":
        for pit, lower in _narrow_pits(landscape, raw_sinks):
            uf.union(pit, int(raw_sink[lower]))
    _merge_by_priority(uf, _boundary_passes(landscape, raw_sink), threshold, rule)

    if identify_antipodes:
        roots = sorted({uf.sink[uf.find(s)] for s in raw_sinks})
        for a, b in _antipode_pairs(landscape, roots, threshold):
            uf.union(a, b)

    root_sinks = {uf.find(s): uf.sink[uf.find(s)] for s in raw_sinks}
    ordered = sorted(root_sinks.items(), key=lambda item: (h[item[1]], item[1]))
    basin_id = {root: index for index, (root, _) in enumerate(ordered)}
    label_of_sink = {s: basin_id[uf.find(s)] for s in raw_sinks}
    label = np.array([label_of_sink[int(s)] for s in raw_sink], dtype=np.int64)
    sink_nodes = np.array([sink for _, sink in ordered], dtype=np.int64)
    return Basins(raw_sink=raw_sink, label=label, sink_nodes=sink_nodes, raw_count=len(raw_sinks))


def analyze_landscape(landscape: Landscape, config: EcsConfig) -> Tuple[EcsReport, Basins]:
    raw_sink = drain(landscape)
    basins = merge_basins(
        landscape,
        raw_sink,
        config.merge_tau,
        identify_antipodes=config.identify_antipodes,
        rule=config.merge_rule,
    )
    h = landscape.heights
    counts = np.bincount(basins.label, minlength=basins.count)
    global_min = int(np.argmin(h))
    boa = float(counts[basins.label[global_min]] / landscape.n)
    sinks = tuple(
        Sink(
            direction=tuple(float(x) for x in landscape.directions[node]),
            height=float(h[node]),
            member_count=int(counts[index]),
        )
        for index, node in enumerate(basins.sink_nodes)
    )
    report = EcsReport(
        ecs=basins.count,
        raw_basins=basins.raw_count,
        boa=boa,
        h_range=landscape.h_range,
        h_min=landscape.h_min,
        h_max=landscape.h_max,
        sinks=sinks,
        degenerate=landscape.h_range < config.flat_floor,
        min_direction=tuple(float(x) for x in landscape.directions[global_min]),
        max_direction=tuple(float(x) for x in landscape.directions[int(np.argmax(h))]),
    )
    return report, basins


def ecs_report(mesh: TriMesh, config: EcsConfig, centroid: Optional[Point3] = None) -> EcsReport:
    report, _ = analyze_landscape(build_landscape(mesh, config, centroid), config)
    if report.degenerate:
        logger.debug(f"⚠️ 평탄한 지형 (h_range={report.h_range:.2e}), raw basins={report.raw_basins}")
    return report


# ---------------------------------------------------------------------------
# 동역학 지표 / 스윕
# ---------------------------------------------------------------------------
def landscape_dynamics(landscape: Landscape, config: EcsConfig) -> DynamicsReport:
    report, basins = analyze_landscape(landscape, config)
    if report.degenerate:
        return DynamicsReport(sre=0.0, steepness=0.0, boa=report.boa, degenerate=True)
    h = landscape.heights
    sre = float(np.mean(h - h[basins.raw_sink]))
    steepness = 0.0
    if len(landscape.edges):
        a = landscape.directions[landscape.edges[:, 0]]
        b = landscape.directions[landscape.edges[:, 1]]
        angle = np.arccos(np.clip(np.einsum("ij,ij->i", a, b), -1.0, 1.0))
        dh = np.abs(h[landscape.edges[:, 0]] - h[landscape.edges[:, 1]])
        steepness = float(np.mean(dh / angle))
    return DynamicsReport(sre=sre, steepness=steepness, boa=report.boa)


def dynamics(mesh: TriMesh, config: EcsConfig, centroid: Optional[Point3] = None) -> DynamicsReport:
    """SRE (임의 자세에서 싱크까지 평균 높이 하강) 와 간선 평균 |Δh|/각도."""
    return landscape_dynamics(build_landscape(mesh, config, centroid), config)


def threshold_sweep(mesh: TriMesh, taus: Sequence[float], config: EcsConfig = EcsConfig()) -> List[Tuple[float, int]]:
    landscape = build_landscape(mesh, config)
    raw_sink = drain(landscape)
    results = []
    for tau in taus:
        basins = merge_basins(
            landscape, raw_sink, tau, identify_antipodes=config.identify_antipodes, rule=config.merge_rule
        )
        results.append((float(tau), basins.count))
        logger.debug(f"🔍 tau={tau}: ECS={basins.count}")
    return results


def resolution_sweep(params, resolutions: Sequence[Tuple[int, int]], config: EcsConfig = EcsConfig()):
    """Sloan 파라미터를 여러 메쉬 해상도로 다시 만들어 (resolution, ecs, h_range) 를 모은다."""
    from sloan import sloan_mesh

    results = []
    for n_theta, n_phi in resolutions:
        report = ecs_report(sloan_mesh(params, n_theta, n_phi), config)
        results.append(((n_theta, n_phi), report.ecs, report.h_range))
        logger.info(f"🔍 {n_theta}x{n_phi}: ECS={report.ecs}, h_range={report.h_range:.4f}")
    return results


def height_histogram(landscape: Landscape, bins: int = 40) -> Tuple[np.ndarray, np.ndarray]:
    counts, edges = np.histogram(landscape.heights, bins=bins)
    return edges, counts


def landscape_frame(landscape: Landscape, basins: Optional[Basins] = None) -> pd.DataFrame:
    """Mollweide 투영용 표: 방향, 경도/위도(도), 높이, 유역 번호."""
    d = landscape.directions
    if basins is None:
        basins = merge_basins(landscape, drain(landscape), EcsConfig().merge_tau)
    return pd.DataFrame(
        {
            "direction_x": d[:, 0],
            "direction_y": d[:, 1],
            "direction_z": d[:, 2],
            "longitude": np.degrees(np.arctan2(d[:, 1], d[:, 0])),
            "latitude": np.degrees(np.arcsin(np.clip(d[:, 2], -1.0, 1.0))),
            "height": landscape.heights,
            "basin_id": basins.label,
        }
    )
