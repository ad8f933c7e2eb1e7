import math
import unittest

import numpy as np
from scipy.spatial import cKDTree

from equilibrium import (
    EcsConfig,
    Landscape,
    analyze_landscape,
    build_landscape,
    com_height,
    com_heights,
    drain,
    dynamics,
    ecs_report,
    fibonacci_sphere,
    height_histogram,
    landscape_frame,
    merge_basins,
    threshold_sweep,
)
from geometry import (
    UNIT_SPHERE_VOLUME,
    PROLATE_RATIOS,
    PrimitiveSpec,
    mass_properties,
    mesh_from_radial,
    primitive,
    primitive_dimensions,
    random_rotation,
)

FAST = EcsConfig(n_dirs=2000)
CUBE_SIDE = UNIT_SPHERE_VOLUME ** (1.0 / 3.0)


def path_landscape(heights):
    n = len(heights)
    return Landscape(
        directions=np.tile([0.0, 0.0, 1.0], (n, 1)),
        heights=np.asarray(heights, dtype=float),
        edges=np.array([[i, i + 1] for i in range(n - 1)]),
    )


class TestFibonacciSphere(unittest.TestCase):
    def test_single_direction(self):
        points = fibonacci_sphere(1)
        self.assertEqual(points.shape, (1, 3))
        self.assertAlmostEqual(float(np.linalg.norm(points[0])), 1.0, places=12)

    def test_unit_norm_and_uniformity(self):
        points = fibonacci_sphere(5000)
        np.testing.assert_allclose(np.linalg.norm(points, axis=1), 1.0, atol=1e-12)
        distances, _ = cKDTree(points).query(points, k=2)
        angles = 2.0 * np.arcsin(distances[:, 1] / 2.0)
        self.assertLess(angles.std() / angles.mean(), 0.25)

    def test_spiral_layout(self):
        points = fibonacci_sphere(10)
        np.testing.assert_allclose(points[:, 2], 1.0 - 2.0 * (np.arange(10) + 0.5) / 10, atol=1e-12)

    def test_deterministic(self):
        np.testing.assert_array_equal(fibonacci_sphere(300), fibonacci_sphere(300))


class TestComHeight(unittest.TestCase):
    def test_sphere_mesh(self):
        mesh = mesh_from_radial(lambda t, p: np.ones_like(t), 100, 200)
        centroid = mass_properties(mesh).centroid
        for d in fibonacci_sphere(50):
            h = com_height(mesh, centroid, d)
            self.assertLessEqual(h, 1.0 + 1e-9)
            self.assertGreater(h, 1.0 - 3e-4)

    def test_cube_face_and_corner(self):
        cube = primitive(PrimitiveSpec("cube"))
        centroid = mass_properties(cube).centroid
        self.assertAlmostEqual(com_height(cube, centroid, [1.0, 0.0, 0.0]), CUBE_SIDE / 2.0, places=12)
        diagonal = np.ones(3) / math.sqrt(3.0)
        self.assertAlmostEqual(com_height(cube, centroid, diagonal), CUBE_SIDE * math.sqrt(3.0) / 2.0, places=12)

    def test_translation_invariance(self):
        mesh = primitive(PrimitiveSpec("ellipsoid"), resolution=16)
        moved = mesh.translated([3.0, -2.0, 0.5])
        dirs = fibonacci_sphere(100)
        a = com_heights(mesh, mass_properties(mesh).centroid, dirs)
        b = com_heights(moved, mass_properties(moved).centroid, dirs)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_rotation_covariance(self):
        mesh = primitive(PrimitiveSpec("ellipsoid"), resolution=16)
        centroid = mass_properties(mesh).centroid
        rng = np.random.default_rng(42)
        for _ in range(100):
            r = random_rotation(rng)
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            rotated = mesh.rotated(r)
            h_rot = com_height(rotated, mass_properties(rotated).centroid, r @ d)
            self.assertAlmostEqual(h_rot, com_height(mesh, centroid, d), delta=1e-9)

    def test_scaling(self):
        mesh = primitive(PrimitiveSpec("capsule"), resolution=16)
        big = mesh.scaled(2.5)
        dirs = fibonacci_sphere(200)
        np.testing.assert_allclose(
            com_heights(big, mass_properties(big).centroid, dirs),
            2.5 * com_heights(mesh, mass_properties(mesh).centroid, dirs),
            rtol=1e-12,
        )
        small_report = ecs_report(mesh, FAST)
        big_report = ecs_report(big, FAST)
        self.assertEqual(small_report.ecs, big_report.ecs)
        self.assertEqual(small_report.boa, big_report.boa)
        self.assertAlmostEqual(big_report.h_range, 2.5 * small_report.h_range, places=9)


class TestDrainAndMerge(unittest.TestCase):
    def test_monotone_path_has_single_sink(self):
        landscape = path_landscape(np.arange(8))
        np.testing.assert_array_equal(drain(landscape), np.zeros(8, dtype=int))

    def test_plateau_neighbours_stay_separate_sinks(self):
        raw = drain(path_landscape([1.0, 0.0, 0.0]))
        np.testing.assert_array_equal(raw, [1, 1, 2])

    def test_adjacent_equal_sinks_merge(self):
        landscape = path_landscape([1.0, 0.0, 0.0])
        basins = merge_basins(landscape, drain(landscape), tau=0.01)
        self.assertEqual(basins.raw_count, 2)
        self.assertEqual(basins.count, 1)
        self.assertEqual(int(basins.sink_nodes[0]), 1)

    def test_non_adjacent_equal_sinks_stay_apart(self):
        landscape = path_landscape([0.0, 1.0, 0.5, 1.0, 0.0])
        basins = merge_basins(landscape, drain(landscape), tau=0.1, rule="sink_height")
        self.assertEqual(basins.count, 3)
        np.testing.assert_array_equal(basins.label, [0, 0, 2, 1, 1])

    def test_spill_breaches_pit_with_lower_node_two_steps_away(self):
        landscape = path_landscape([0.0, 1.0, 0.5, 1.0, 0.0])
        basins = merge_basins(landscape, drain(landscape), tau=0.1)
        self.assertEqual(basins.count, 2)
        np.testing.assert_array_equal(basins.label, [0, 0, 0, 1, 1])

    def test_narrow_pit_joins_lower_basin(self):
        landscape = path_landscape([0.0, 0.2, 0.9, 0.5, 0.9, 1.0])
        raw = drain(landscape)
        spill = merge_basins(landscape, raw, tau=0.01)
        self.assertEqual(spill.raw_count, 2)
        self.assertEqual(spill.count, 1)
        self.assertEqual(int(spill.sink_nodes[0]), 0)
        self.assertEqual(merge_basins(landscape, raw, tau=0.01, rule="sink_height").count, 2)

    def test_equal_sinks_behind_a_ridge(self):
        landscape = path_landscape([0.0, 1.0, 0.0])
        raw = drain(landscape)
        self.assertEqual(merge_basins(landscape, raw, tau=0.01).count, 2)
        self.assertEqual(merge_basins(landscape, raw, tau=0.01, rule="sink_height").count, 1)

    def test_shallow_pit_spills_over_low_pass(self):
        landscape = path_landscape([0.0, 0.5, 0.6, 0.598, 0.595, 0.598, 0.7, 1.0])
        raw = drain(landscape)
        basins = merge_basins(landscape, raw, tau=0.01)
        self.assertEqual(basins.count, 1)
        self.assertEqual(int(basins.sink_nodes[0]), 0)
        self.assertEqual(merge_basins(landscape, raw, tau=0.001).count, 2)
        self.assertEqual(merge_basins(landscape, raw, tau=0.01, rule="sink_height").count, 2)

    def test_sink_height_rule_does_not_chain(self):
        # 이웃 싱크 차 0.007, 0.006 은 각각 임계값 미만이지만 셋을 합치면 폭이 0.013
        landscape = path_landscape([0.0, 1.0, 0.007, 1.0, 0.013])
        basins = merge_basins(landscape, drain(landscape), tau=0.01, rule="sink_height")
        self.assertEqual(basins.count, 2)
        np.testing.assert_array_equal(basins.label, [0, 0, 1, 1, 1])

    def test_unknown_rule(self):
        landscape = path_landscape([1.0, 0.0, 0.5])
        with self.assertRaises(ValueError):
            merge_basins(landscape, drain(landscape), tau=0.01, rule="watershed")

    def test_merged_sink_is_the_lower_one(self):
        landscape = path_landscape([0.3, 0.5, 0.0, 1.0])
        basins = merge_basins(landscape, drain(landscape), tau=0.5)
        self.assertEqual(basins.count, 1)
        self.assertEqual(int(basins.sink_nodes[0]), 2)

    def test_landscape_validation(self):
        with self.assertRaises(ValueError):
            Landscape(np.zeros((3, 3)), np.zeros(2), np.empty((0, 2), dtype=int))
        with self.assertRaises(ValueError):
            Landscape(np.zeros((2, 3)), np.array([0.0, np.inf]), np.empty((0, 2), dtype=int))


class TestEcsReport(unittest.TestCase):
    def test_capsule_single_basin(self):
        report = ecs_report(primitive(PrimitiveSpec("capsule"), resolution=60), FAST)
        self.assertEqual(report.ecs, 1)
        self.assertEqual(report.boa, 1.0)
        self.assertFalse(report.degenerate)
        self.assertAlmostEqual(report.h_range, 1.487, delta=0.02)

    def test_hemisphere_two_basins(self):
        report = ecs_report(primitive(PrimitiveSpec("hemisphere"), resolution=60), FAST)
        self.assertEqual(report.ecs, 2)
        self.assertGreater(report.boa, 0.0)
        self.assertLess(report.boa, 1.0)
        # 평평한 면으로 선 자세가 전역 최소
        self.assertGreater(report.min_direction[2], 0.95)
        self.assertLess(report.sinks[0].height, report.sinks[1].height)

    def test_sphere_is_degenerate(self):
        report = ecs_report(primitive(PrimitiveSpec("sphere"), resolution=40), FAST)
        self.assertTrue(report.degenerate)
        self.assertLess(report.h_range, 0.005)

    def test_cube_rests_on_faces(self):
        cube = primitive(PrimitiveSpec("cube"))
        report = ecs_report(cube, FAST)
        # 면마다 적어도 하나의 싱크
        self.assertGreaterEqual(report.raw_basins, 6)
        self.assertGreater(max(abs(x) for x in report.min_direction), 0.95)
        self.assertAlmostEqual(report.h_min, CUBE_SIDE / 2.0, delta=0.03 * CUBE_SIDE / 2.0)
        self.assertAlmostEqual(report.h_range, CUBE_SIDE * (math.sqrt(3.0) - 1.0) / 2.0, delta=0.05 * 0.59)

    def test_antipode_identification(self):
        directions = np.array([[0, 0, 1], [1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0], [0, 0, -1]], dtype=float)
        edges = np.array([[i, i + 1] for i in range(5)])
        landscape = Landscape(directions, np.array([0.0, 0.3, 1.0, 1.0, 0.3, 0.05]), edges)
        raw = drain(landscape)
        np.testing.assert_array_equal(raw, [0, 0, 0, 5, 5, 5])
        self.assertEqual(merge_basins(landscape, raw, tau=0.1).count, 2)
        paired = merge_basins(landscape, raw, tau=0.1, identify_antipodes=True)
        self.assertEqual(paired.count, 1)
        self.assertEqual(int(paired.sink_nodes[0]), 0)

    def test_antipodes_at_different_heights_stay_apart(self):
        directions = np.array([[0, 0, 1], [1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0], [0, 0, -1]], dtype=float)
        edges = np.array([[i, i + 1] for i in range(5)])
        landscape = Landscape(directions, np.array([0.0, 0.3, 1.0, 1.0, 0.9, 0.6]), edges)
        raw = drain(landscape)
        np.testing.assert_array_equal(raw, [0, 0, 0, 5, 5, 5])
        self.assertEqual(merge_basins(landscape, raw, tau=0.1, identify_antipodes=True).count, 2)

    def test_hemisphere_antipodes_keep_two_basins(self):
        # 평평한 면과 돔 꼭대기는 서로 반대 방향이지만 높이가 R/4 다르다
        mesh = primitive(PrimitiveSpec("hemisphere"), resolution=60)
        report = ecs_report(mesh, FAST.with_overrides(identify_antipodes=True))
        self.assertEqual(report.ecs, 2)
        self.assertLess(report.boa, 1.0)

    def test_cube_has_six_face_basins(self):
        cube = primitive(PrimitiveSpec("cube"))
        report = ecs_report(cube, EcsConfig())
        self.assertEqual(report.ecs, 6)
        # 팔면체 대칭: 면 유역마다 구면의 1/6
        self.assertAlmostEqual(report.boa, 1.0 / 6.0, delta=0.02)
        for sink in report.sinks:
            self.assertGreater(max(abs(x) for x in sink.direction), 0.95)

    def test_cube_antipodes_give_three_basins(self):
        report = ecs_report(primitive(PrimitiveSpec("cube")), EcsConfig(identify_antipodes=True))
        self.assertEqual(report.ecs, 3)
        self.assertAlmostEqual(report.boa, 1.0 / 3.0, delta=0.03)

    def test_triaxial_ellipsoid(self):
        mesh = primitive(PrimitiveSpec("ellipsoid"), resolution=60)
        landscape = build_landscape(mesh, FAST)
        raw = drain(landscape)
        # 짧은 축 양끝 두 싱크, 안장은 h_range 의 절반쯤 위
        self.assertEqual(merge_basins(landscape, raw, tau=0.01).count, 2)
        self.assertEqual(merge_basins(landscape, raw, tau=0.001).count, 2)
        self.assertEqual(merge_basins(landscape, raw, tau=0.01, identify_antipodes=True).count, 1)

    def test_prolate_ellipsoid_single_ring(self):
        mesh = primitive(PrimitiveSpec("ellipsoid", ellipsoid_ratios=PROLATE_RATIOS), resolution=60)
        report = ecs_report(mesh, FAST)
        self.assertEqual(report.ecs, 1)
        semi = primitive_dimensions(PrimitiveSpec("ellipsoid", ellipsoid_ratios=PROLATE_RATIOS))["semi_axes"]
        self.assertAlmostEqual(report.h_range, semi[0] - semi[1], delta=0.02)

    def test_antipode_identification_never_adds_basins(self):
        cube = primitive(PrimitiveSpec("cube"))
        plain = ecs_report(cube, FAST)
        paired = ecs_report(cube, FAST.with_overrides(identify_antipodes=True))
        self.assertLessEqual(paired.ecs, plain.ecs)
        self.assertEqual(paired.raw_basins, plain.raw_basins)

    def test_report_fields_consistent(self):
        report = ecs_report(primitive(PrimitiveSpec("hemisphere"), resolution=40), FAST)
        self.assertLessEqual(report.ecs, report.raw_basins)
        self.assertAlmostEqual(report.h_range, report.h_max - report.h_min, places=12)
        self.assertEqual(sum(s.member_count for s in report.sinks), FAST.n_dirs)
        self.assertEqual(report.to_dict()["ecs"], report.ecs)

    def test_ecs_non_increasing_in_tau(self):
        mesh = primitive(PrimitiveSpec("hemisphere"), resolution=40)
        sweep = threshold_sweep(mesh, [0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 0.9], FAST)
        counts = [ecs for _, ecs in sweep]
        self.assertEqual(counts, sorted(counts, reverse=True))

    def test_config_invariants(self):
        with self.assertRaises(ValueError):
            EcsConfig(n_dirs=50)
        with self.assertRaises(ValueError):
            EcsConfig(k=2)
        with self.assertRaises(ValueError):
            EcsConfig(merge_tau=1.0)
        with self.assertRaises(ValueError):
            EcsConfig(merge_rule="lowest")
        self.assertEqual(EcsConfig(merge_rule="sink_height").to_dict()["merge_rule"], "sink_height")


class TestDynamics(unittest.TestCase):
    def test_capsule_self_righting_energy(self):
        mesh = primitive(PrimitiveSpec("capsule"), resolution=60)
        result = dynamics(mesh, FAST)
        report = ecs_report(mesh, FAST)
        # 연속 극한: SRE = (직선부 반길이) / 2
        self.assertAlmostEqual(result.sre, 1.487 / 2.0, delta=0.05 * 0.744)
        self.assertLessEqual(result.sre, report.h_range)
        self.assertGreater(result.steepness, 0.0)
        self.assertEqual(result.boa, 1.0)

    def test_sphere_is_degenerate(self):
        result = dynamics(primitive(PrimitiveSpec("sphere"), resolution=40), FAST)
        self.assertTrue(result.degenerate)
        self.assertEqual(result.sre, 0.0)
        self.assertEqual(result.steepness, 0.0)


class TestExports(unittest.TestCase):
    def test_histogram_and_frame(self):
        landscape = build_landscape(primitive(PrimitiveSpec("hemisphere"), resolution=40), FAST)
        edges, counts = height_histogram(landscape, bins=20)
        self.assertEqual(len(edges), 21)
        self.assertEqual(int(counts.sum()), FAST.n_dirs)

        _, basins = analyze_landscape(landscape, FAST)
        frame = landscape_frame(landscape, basins)
        self.assertEqual(
            list(frame.columns),
            ["direction_x", "direction_y", "direction_z", "longitude", "latitude", "height", "basin_id"],
        )
        self.assertEqual(len(frame), FAST.n_dirs)
        self.assertTrue(frame["latitude"].between(-90.0, 90.0).all())
        self.assertEqual(frame["basin_id"].nunique(), basins.count)


if __name__ == "__main__":
    unittest.main()
