import json
import math
import tempfile
import unittest
from pathlib import Path

import jsonschema
import numpy as np
from scipy.special import j1

from equilibrium import com_height
from geometry import mass_properties
from sloan import (
    PhaseSpec,
    SloanParams,
    analytic_height,
    analytic_volume,
    com_constraint_violation,
    com_offset,
    eta,
    eta_phase,
    fourier_phase,
    linear_phase,
    load_verified_instances,
    phase,
    sloan_mesh,
    sloan_radius,
    surface_deviation,
)

PRIMARY = SloanParams(0.0231, fourier_phase({1: 0.2344}))


class TestPhase(unittest.TestCase):
    def test_eta_values(self):
        self.assertAlmostEqual(eta(math.pi / 2), 0.0, places=12)
        self.assertAlmostEqual(eta(0.0), math.pi, places=12)
        self.assertAlmostEqual(eta(math.pi), -math.pi, places=12)

    def test_phase_kinds(self):
        theta = np.linspace(0.0, math.pi, 37)
        np.testing.assert_allclose(phase(fourier_phase({}), theta), eta(theta), atol=0.0)
        self.assertAlmostEqual(float(phase(PRIMARY.phase, math.pi / 2)), 0.0, places=12)
        self.assertAlmostEqual(float(phase(linear_phase(5.0), math.pi)), 5.0 * math.pi, places=12)

    def test_phase_spec_invariants(self):
        with self.assertRaises(ValueError):
            PhaseSpec("eta_fourier", coeffs=((1, 0.1), (1, 0.2)))
        with self.assertRaises(ValueError):
            fourier_phase({0: 0.1})
        with self.assertRaises(ValueError):
            fourier_phase({2: 1.5})
        with self.assertRaises(ValueError):
            PhaseSpec("linear", c=math.inf)
        with self.assertRaises(ValueError):
            PhaseSpec("cubic")

    def test_beta_bounds(self):
        with self.assertRaises(ValueError):
            SloanParams(0.2)
        with self.assertRaises(ValueError):
            SloanParams(-0.01)


class TestRadius(unittest.TestCase):
    def test_zero_beta_is_unit_sphere(self):
        tt, pp = np.meshgrid(np.linspace(0, math.pi, 11), np.linspace(0, 2 * math.pi, 21), indexing="ij")
        np.testing.assert_array_equal(sloan_radius(SloanParams(0.0), tt, pp), 1.0)

    def test_equator_peak(self):
        params = SloanParams(0.05, eta_phase())
        peak = float(phase(params.phase, math.pi / 2))
        self.assertAlmostEqual(float(sloan_radius(params, math.pi / 2, peak)), 1.2 ** 0.25, places=12)

    def test_grid_radius_range(self):
        params = SloanParams(0.05, eta_phase())
        theta = math.pi * np.arange(101) / 100
        phi = 2 * math.pi * np.arange(200) / 200
        r = sloan_radius(params, *np.meshgrid(theta, phi, indexing="ij"))
        # 반지름 범위는 (1.2)^(1/4) - (0.8)^(1/4) = 0.1009
        self.assertAlmostEqual(float(r.max() - r.min()), 1.2 ** 0.25 - 0.8 ** 0.25, places=9)
        self.assertAlmostEqual(surface_deviation(params), 1.0 - 0.8 ** 0.25, places=9)

    def test_perturbation_is_antisymmetric_in_phi(self):
        rng = np.random.default_rng(11)
        theta = rng.uniform(0, math.pi, 200)
        phi = rng.uniform(0, 2 * math.pi, 200)
        for spec in (eta_phase(), linear_phase(5.0), PRIMARY.phase):
            params = SloanParams(0.1, spec)
            a = sloan_radius(params, theta, phi) ** 4 - 1.0
            b = sloan_radius(params, theta, phi + math.pi) ** 4 - 1.0
            np.testing.assert_allclose(a, -b, atol=1e-12)


class TestComConstraint(unittest.TestCase):
    def test_linear_five_theta_vanishes(self):
        self.assertLess(com_constraint_violation(linear_phase(5.0)), 1e-10)

    def test_eta_phase_vanishes(self):
        self.assertLess(com_constraint_violation(eta_phase()), 1e-6)

    def test_higher_order_fourier_terms_vanish(self):
        self.assertLess(com_constraint_violation(fourier_phase({2: 0.1376})), 1e-6)
        self.assertLess(com_constraint_violation(fourier_phase({3: -0.0552})), 1e-6)

    def test_first_order_term_matches_bessel_closed_form(self):
        # sin(η) 항은 (4/3) J1(a) 만큼 제약을 깨뜨린다
        violation = com_constraint_violation(PRIMARY.phase)
        self.assertAlmostEqual(violation, 4.0 / 3.0 * j1(0.2344), places=8)

    def test_constant_phase_shift_keeps_modulus(self):
        base = com_constraint_violation(PRIMARY.phase)
        for delta in (0.1, 1.0, math.pi):
            self.assertAlmostEqual(com_constraint_violation(PRIMARY.phase.shifted(delta)), base, delta=1e-12)

    def test_com_offset_matches_mesh_centroid(self):
        mesh = sloan_mesh(PRIMARY, 60, 120)
        props = mass_properties(mesh)
        offset = com_offset(PRIMARY)
        self.assertLess(offset[0], 0.0)
        np.testing.assert_allclose(props.centroid, offset, atol=2e-4)
        self.assertAlmostEqual(analytic_volume(PRIMARY), props.volume, delta=0.01 * props.volume)


class TestAnalyticHeight(unittest.TestCase):
    def test_unit_sphere(self):
        params = SloanParams(0.0)
        for d in ([0, 0, 1], [0, 0, -1], [1, 0, 0], [0.6, 0.0, 0.8]):
            self.assertAlmostEqual(analytic_height(params, np.zeros(3), np.array(d, dtype=float)), 1.0, places=7)

    def test_agrees_with_mesh_and_never_below_it(self):
        params = SloanParams(0.05, eta_phase())
        mesh = sloan_mesh(params, 80, 160)
        centroid = mass_properties(mesh).centroid
        rng = np.random.default_rng(5)
        dirs = rng.normal(size=(10, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        for d in dirs:
            analytic = analytic_height(params, centroid, d)
            mesh_h = com_height(mesh, centroid, d)
            self.assertGreaterEqual(analytic, mesh_h - 1e-6)
            self.assertLess(abs(analytic - mesh_h), 1e-3)

    def test_requires_enough_starts(self):
        with self.assertRaises(ValueError):
            analytic_height(SloanParams(0.0), np.zeros(3), np.array([0.0, 0.0, 1.0]), n_starts=4)


class TestVerifiedInstances(unittest.TestCase):
    def test_catalog(self):
        catalog = load_verified_instances()
        self.assertEqual(sorted(catalog), ["primary", "second", "third"])
        primary = catalog["primary"]
        self.assertEqual(primary.params, PRIMARY)
        self.assertEqual(primary.expected_ecs, 1)
        self.assertAlmostEqual(primary.expected_h_range, 0.051)
        self.assertEqual(catalog["second"].params.phase.coeffs, ((2, 0.1376),))
        self.assertEqual(catalog["third"].params.phase.coeffs, ((3, -0.0552),))

    def test_invalid_catalog_is_rejected(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "instances.json"
            path.write_text(json.dumps({"instances": [{"name": "bad", "beta": 0.5}]}), encoding="utf-8")
            with self.assertRaises(jsonschema.ValidationError):
                load_verified_instances(path)


if __name__ == "__main__":
    unittest.main()
