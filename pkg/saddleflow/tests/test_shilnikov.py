import math

import numpy as np
from django.test import SimpleTestCase

from saddleflow.manager import build_local_normal_form
from saddleflow.shilnikov import (
    COMPONENTS, BvpProblem, EstimateReport, PanelGrid, SamplePlan, apply_operator, bvp_residual, contraction_threshold,
    lobatto_nodes, shooting_solution, solve_bvp, spectral_integration_matrix, template_values, verify_estimates,
)

CONSERVATIVE_COEFFS = {'f11': {'u1*v1': 0.5}, 'g11': {'u1*v1': -0.5}}


class QuadratureTests(SimpleTestCase):
    def test_lobatto_endpoints(self):
        nodes = lobatto_nodes(5)
        self.assertEqual((nodes[0], nodes[-1]), (-1.0, 1.0))
        np.testing.assert_allclose(nodes, -nodes[::-1], atol=1e-15)

    def test_integration_matrix_is_exact_for_polynomials(self):
        nodes = lobatto_nodes(5)
        S = spectral_integration_matrix(nodes)
        np.testing.assert_allclose(S @ nodes ** 3, (nodes ** 4 - 1.0) / 4.0, atol=1e-13)

    def test_panel_grid_covers_the_interval(self):
        grid = PanelGrid(2.0, n_nodes=101)
        self.assertEqual(grid.times[0], 0.0)
        self.assertEqual(grid.times[-1], 2.0)
        self.assertTrue(np.all(np.diff(grid.times) > 0.0))
        self.assertEqual(grid.times.size, grid.n_panels * (grid.n_points - 1) + 1)


class BvpProblemTests(SimpleTestCase):
    def setUp(self):
        self.model = build_local_normal_form('Equal', 1.0, 1.0)

    def test_invalid_tau(self):
        with self.assertRaises(ValueError):
            BvpProblem(self.model, 0.0, 0.1, 0.1, 0.1, 0.1, delta=0.1)

    def test_boundary_outside_box(self):
        with self.assertRaises(ValueError):
            BvpProblem(self.model, 1.0, 0.2, 0.1, 0.1, 0.1, delta=0.1)

    def test_linear_problem_is_solved_by_its_linear_part(self):
        problem = BvpProblem(self.model, 2.0, 0.1, -0.05, 0.08, 0.1, delta=0.1)
        solution = solve_bvp(problem, n_nodes=201)
        self.assertLessEqual(solution.iterations, 3)
        np.testing.assert_allclose(solution.corrections, 0.0, atol=1e-14)
        self.assertLess(max(solution.boundary_residuals().values()), 1e-15)


class OperatorTests(SimpleTestCase):
    def setUp(self):
        self.model = build_local_normal_form('Equal', 1.0, 1.0, CONSERVATIVE_COEFFS)
        self.problem = BvpProblem(self.model, 2.0, 0.1, 0.1, 0.1, 0.1, delta=0.1)
        self.solution = solve_bvp(self.problem, n_nodes=401)

    def test_contracts(self):
        self.assertLess(self.solution.contraction_ratio, 0.9)

    def test_agrees_with_shooting(self):
        oracle = shooting_solution(self.problem, times=self.solution.times)
        self.assertLess(np.max(np.abs(self.solution.states - oracle.states)), 1e-8)

    def test_fixed_point_property(self):
        swept = apply_operator(self.problem, self.solution)
        self.assertLess(np.max(np.abs(swept - self.solution.states)), 1e-11)

    def test_defect(self):
        defect, residuals = bvp_residual(self.model, self.solution)
        self.assertLess(defect, 1e-6)
        self.assertLess(max(residuals.values()), 1e-14)

    def test_first_integral_is_constant(self):
        energies = self.model.energy(self.solution.states)
        self.assertLess(np.ptp(energies), 1e-10)

    def test_contraction_threshold_brackets_the_sample_delta(self):
        threshold = contraction_threshold(self.model, 2.0, lo=0.05, hi=0.8, iterations=6, n_nodes=201)
        self.assertGreaterEqual(threshold, 0.09)
        self.assertLessEqual(threshold, 0.8)


class TemplateTests(SimpleTestCase):
    def test_ablation_removes_the_term(self):
        model = build_local_normal_form('Resonant2', 1.0, 2.0)
        problem = BvpProblem(model, 4.0, 0.1, 0.1, 0.1, 0.1, delta=0.1)
        times = np.linspace(0.0, 4.0, 9)
        full = template_values('Resonant2', 'xi2', problem, times)
        ablated = template_values('Resonant2', 'xi2', problem, times, ablate=('xi2.resonant',))
        np.testing.assert_allclose(full - ablated, times * np.exp(-2.0 * times) * 0.01)

    def test_sample_plan_needs_decreasing_deltas(self):
        with self.assertRaises(ValueError):
            SamplePlan(deltas=(0.1, 0.1, 0.05))
        plan = SamplePlan(taus=(2.0,), boundary=((1.0, 1.0, 1.0, 1.0),))
        self.assertEqual(len(list(plan.problems(build_local_normal_form('Equal', 1.0, 1.0)))), 3)


class EstimateReportTests(SimpleTestCase):
    def _report(self, values):
        mhat = {c: [0.0, 0.0, 0.0] for c in COMPONENTS}
        mhat['xi1'] = values
        return EstimateReport('Equal', 'x', [0.1, 0.05, 0.025], [], mhat, (), [], 0.25)

    def test_stability_tolerates_bounded_growth(self):
        report = self._report([1.0, 1.2, 1.4])
        self.assertTrue(report.is_stable('xi1'))
        self.assertTrue(report.stable)
        self.assertAlmostEqual(report.growth('xi1'), 1.4)
        self.assertAlmostEqual(report.variation('xi1'), 0.4)

    def test_unbounded_estimates_are_unstable(self):
        for values in ([1.0, 1.3, 1.3], [1.0, math.inf, 1.0], [0.0, 0.1, 0.1]):
            with self.subTest(values=values):
                report = self._report(values)
                self.assertFalse(report.is_stable('xi1'))
                self.assertFalse(report.stable)

    def test_vanishing_corrections_are_stable(self):
        report = self._report([0.0, 0.0, 0.0])
        self.assertTrue(report.is_stable('xi2'))
        self.assertEqual(report.growth('xi2'), 0.0)


class VerifyEstimatesTests(SimpleTestCase):
    def test_equal_case_constants_stay_bounded(self):
        model = build_local_normal_form('Equal', 1.0, 1.0, CONSERVATIVE_COEFFS)
        plan = SamplePlan(deltas=(0.1, 0.05, 0.025), taus=(2.0,), boundary=((1.0, 1.0, 1.0, 1.0),))
        report = verify_estimates('Equal', model, sample_plan=plan, workers=1)
        self.assertEqual(report.deltas, [0.1, 0.05, 0.025])
        for component in COMPONENTS:
            with self.subTest(component=component):
                self.assertEqual(len(report.mhat[component]), 3)
                self.assertTrue(all(math.isfinite(v) for v in report.mhat[component]))
                self.assertTrue(report.is_stable(component))
        self.assertTrue(report.stable)
        self.assertEqual(report.to_dict()['case_tag'], 'Equal')
