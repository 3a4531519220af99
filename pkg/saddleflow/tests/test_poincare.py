import math

import numpy as np
from django.test import SimpleTestCase, tag

from saddleflow.exceptions import ModelError
from saddleflow.flow import SectionDescriptor
from saddleflow.manager import build_global_model, build_local_normal_form
from saddleflow.poincare import (
    CensusRow, DomainCensus, DomainLabel, LoopReturnMap, OutcomeTag, census_grid, chain_rule_jacobian, classify_domain,
    coefficient_sweep, default_eps, dual_census, fd_jacobian, flight_time_check, global_map_coeffs,
    global_map_taylor_check, in_y1, inverse_return_map, lift_to_section, return_map, return_map_jacobian,
    reverse_time_view, slope_angle_error,
)

H_INSIDE = -1e-3
H_OUTSIDE = 1e-3
CENSUS_WORKERS = 4


class ChartTests(SimpleTestCase):
    def setUp(self):
        self.model = build_global_model('Equal', 1.0, 1.0)
        self.delta = self.model.delta_scale

    def test_lift_lands_on_the_level(self):
        desc = SectionDescriptor.inward(self.delta, 1)
        point = lift_to_section(self.model, H_INSIDE, desc, 0.003, 0.002)
        x = point.lifted.array
        self.assertEqual(x[1], self.delta)
        self.assertAlmostEqual(self.model.first_integral(x), H_INSIDE, delta=1e-13)
        np.testing.assert_allclose(point.chart, [0.003, 0.002])

    def test_lift_outside_the_ball(self):
        with self.assertRaises(ValueError):
            lift_to_section(self.model, H_INSIDE, SectionDescriptor.inward(self.delta), 0.02, 0.0, eps=0.01)

    def test_lift_needs_a_first_integral(self):
        model = build_local_normal_form('Equal', 1.0, 1.0, {'f11': {'u1*v1': 0.5}})
        with self.assertRaises(ModelError):
            lift_to_section(model, H_INSIDE, SectionDescriptor.inward(0.1), 0.0, 0.0)

    def test_default_eps(self):
        self.assertAlmostEqual(default_eps(0.1), 0.01)


class ReturnMapTests(SimpleTestCase):
    def setUp(self):
        self.model = build_global_model('Equal', 1.0, 1.0)

    def test_origin_is_fixed_inside_the_loop(self):
        outcome = return_map(self.model, H_INSIDE, (0.0, 0.0))
        self.assertIs(outcome.tag, OutcomeTag.HIT)
        self.assertGreater(outcome.tau, 0.0)
        np.testing.assert_allclose(outcome.chart, [0.0, 0.0], atol=1e-9)
        self.assertEqual(outcome.itinerary[0], 1)

    def test_positive_level_escapes(self):
        outcome = return_map(self.model, 1e-4, (0.0, 0.0))
        self.assertFalse(outcome.hit)
        self.assertIsNotNone(outcome.reason)

    def test_inverse_undoes_the_map(self):
        p = (1e-3, 1e-3)
        forward = return_map(self.model, H_INSIDE, p, eps=math.inf)
        self.assertTrue(forward.hit)
        back = inverse_return_map(self.model, H_INSIDE, tuple(forward.chart), eps=math.inf)
        self.assertTrue(back.hit)
        np.testing.assert_allclose(back.chart, p, atol=1e-8)

    def test_direct_and_chain_rule_jacobians_agree(self):
        direct = return_map_jacobian(self.model, H_INSIDE)
        product = chain_rule_jacobian(self.model, H_INSIDE)
        scale = float(np.max(np.abs(direct)))
        np.testing.assert_allclose(direct, product, rtol=1e-4, atol=1e-6 * scale)

    def test_fd_step_range(self):
        with self.assertRaises(ValueError):
            return_map_jacobian(self.model, H_INSIDE, fd_step=1e-2)

    def test_loop_return_map_object(self):
        maps = LoopReturnMap(self.model, H_INSIDE)
        np.testing.assert_allclose(maps.image((0.0, 0.0)), [0.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(maps.preimage((0.0, 0.0)), [0.0, 0.0], atol=1e-9)
        self.assertEqual(maps.eps, default_eps(maps.delta))


class ReversedModelTests(SimpleTestCase):
    def test_involution(self):
        model = build_global_model('Between', 1.0, 1.5)
        reversed_model = reverse_time_view(model)
        self.assertTrue(reversed_model.reversed_time)
        self.assertIs(reverse_time_view(reversed_model), model)

    def test_reversed_field(self):
        model = build_local_normal_form('Between', 1.0, 1.5)
        reversed_model = reverse_time_view(model)
        x = np.array([0.01, 0.02, 0.03, 0.04])
        swap = [2, 3, 0, 1]
        np.testing.assert_allclose(reversed_model.field(x), -model.field(x[swap])[swap])


class CensusHelperTests(SimpleTestCase):
    def test_grid_spacing_and_ball(self):
        points = list(census_grid(0.01, 64))
        spacing = 0.01 / 32
        self.assertIn((0, 0, 0.0, 0.0), points)
        self.assertTrue(all(math.hypot(u, v) <= 0.01 * (1 + 1e-12) for _, _, u, v in points))
        self.assertTrue(any(i == 32 and j == 0 for i, j, _, _ in points))
        axis = sorted(u for i, j, u, _ in points if j == 0)
        self.assertAlmostEqual(axis[1] - axis[0], spacing)
        self.assertEqual(len(axis), 65)

    def test_cone_membership(self):
        self.assertTrue(in_y1(1.0, 0.05, 10))
        self.assertFalse(in_y1(1.0, 0.1, 10))
        self.assertFalse(in_y1(0.0, 0.0, 10))

    def test_slope_angle_error(self):
        self.assertAlmostEqual(slope_angle_error(1.0, 1.0, 1.0), 0.0)
        self.assertAlmostEqual(slope_angle_error(-1.0, -1.0, 1.0), 0.0)
        self.assertAlmostEqual(slope_angle_error(1.0, 0.0, math.inf), math.pi / 2)

    def test_fd_jacobian_of_a_linear_map(self):
        matrix = np.array([[2.0, -1.0], [0.5, 3.0]])
        np.testing.assert_allclose(fd_jacobian(lambda p: matrix @ p, (0.1, -0.2), 1e-4), matrix, atol=1e-10)


def _census(rows, m=10.0, direction='forward'):
    return DomainCensus('synthetic', 'Equal', (1.0, 1.0), H_INSIDE, 0.01, m, 64, 1, 0.1, direction, rows)


class DomainCensusTests(SimpleTestCase):
    def setUp(self):
        self.rows = [
            CensusRow(0, 0, 0.0, 0.0, DomainLabel.D2, 2.0, (0.0, 0.0)),
            CensusRow(2, 1, 0.002, 0.001, DomainLabel.D2, 2.5, (0.004, 0.006)),
            CensusRow(-2, -1, -0.002, -0.001, DomainLabel.D2, 2.5, (-0.004, -0.006)),
            CensusRow(4, 0, 0.004, 0.0, DomainLabel.D1, 2.1, (0.001, 0.0)),
            CensusRow(0, 4, 0.0, 0.004, DomainLabel.ESCAPED_LOCAL, reason='Escaped'),
        ]

    def test_counts_and_emptiness(self):
        census = _census(self.rows)
        counts = census.counts()
        self.assertEqual(counts['D1'], 1)
        self.assertEqual(counts['D2'], 3)
        self.assertEqual(counts['EscapedLocal'], 1)
        self.assertEqual(counts['EscapedGlobal'], 0)
        self.assertFalse(census.is_empty)
        self.assertTrue(_census(self.rows[-1:]).is_empty)
        self.assertAlmostEqual(census.spacing, 0.01 / 32)

    def test_relabel_reuses_rows(self):
        census = _census(self.rows, m=10.0).relabel(1.5)
        labels = [r.label for r in census.rows]
        self.assertEqual(labels[1], DomainLabel.D1)
        self.assertEqual(labels[4], DomainLabel.ESCAPED_LOCAL)
        self.assertEqual(census.m, 1.5)
        self.assertEqual(census.rows[1].image, self.rows[1].image)

    def test_expansion_constant(self):
        census = _census(self.rows)
        expected = math.hypot(0.004, 0.006) / math.hypot(0.002, 0.001)
        self.assertAlmostEqual(census.expansion_constant(), expected)

    def test_symmetry(self):
        self.assertTrue(_census(self.rows).symmetric())
        broken = list(self.rows)
        broken[2] = CensusRow(-2, -1, -0.002, -0.001, DomainLabel.ESCAPED_GLOBAL)
        self.assertFalse(_census(broken).symmetric())

    def test_csv_row_for_escapes(self):
        row = self.rows[-1].csv_row()
        self.assertEqual(row[2], 'EscapedLocal')
        self.assertTrue(math.isnan(row[3]) and math.isnan(row[4]))


class GlobalCoefficientTests(SimpleTestCase):
    def test_uncoupled_pair_violates_the_cone_hypotheses(self):
        model = build_global_model('Equal', 1.0, 1.0, coupling={})
        coeffs = global_map_coeffs(model, H_INSIDE)
        scale = np.max(np.abs(coeffs.matrix))
        self.assertLessEqual(abs(coeffs.b), 1e-7 * scale)
        self.assertLessEqual(abs(coeffs.c), 1e-7 * scale)
        self.assertEqual(len(coeffs.flags), 2)
        self.assertTrue(all('cone hypotheses violated' in flag for flag in coeffs.flags))

    def test_default_couplings(self):
        coeffs = global_map_coeffs(build_global_model('Equal', 1.0, 1.0), H_INSIDE)
        self.assertEqual(coeffs.flags, ())
        self.assertTrue(all(value != 0.0 for value in (coeffs.a, coeffs.b, coeffs.c, coeffs.d)))
        self.assertAlmostEqual(coeffs.det, 1.0, delta=1e-3)
        self.assertEqual(coeffs.slope, coeffs.d / coeffs.b)

    def test_sweep_approaches_the_zero_level(self):
        model = build_global_model('Equal', 1.0, 1.0)
        base, coeffs, constant = coefficient_sweep(model, [-1e-3, -1e-4])
        self.assertEqual(base.h, 0.0)
        self.assertEqual([c.h for c in coeffs], [-1e-3, -1e-4])
        self.assertTrue(math.isfinite(constant))
        self.assertLess(abs(coeffs[1].d - base.d), abs(coeffs[0].d - base.d))

    def test_linear_part_dominates_near_the_exit(self):
        model = build_global_model('Equal', 1.0, 1.0)
        coeffs = global_map_coeffs(model, H_INSIDE)
        worst = global_map_taylor_check(model, H_INSIDE, coeffs)
        self.assertTrue(math.isfinite(worst))
        self.assertLess(worst, 100.0)


class FlightTimeTests(SimpleTestCase):
    def test_predictor_on_the_plane(self):
        model = build_global_model('Equal', 1.0, 1.0)
        report = flight_time_check(model, -1e-4, [(0.0, 0.0)], deltas=[0.1, 0.05])
        first = report.rows[0]
        self.assertAlmostEqual(first['predicted'], 100.0)
        self.assertLessEqual(report.max_error(0.1), 0.2)
        self.assertLess(report.max_error(0.05), report.max_error(0.1))
        self.assertTrue(report.improving)
        self.assertEqual(report.to_dict()['deltas'], [0.1, 0.05])


@tag('slow')
class DomainCensusOnModelTests(SimpleTestCase):
    def test_positive_level_has_an_empty_domain(self):
        model = build_global_model('Equal', 1.0, 1.0)
        census = classify_domain(model, H_OUTSIDE, grid_n=64, workers=CENSUS_WORKERS)
        self.assertTrue(census.is_empty)
        self.assertEqual(census.counts()['EscapedLocal'], len(census.rows))
        self.assertFalse(census.neighborhood_in_domain())
        self.assertTrue(census.symmetric())
        self.assertTrue(census.summary()['D_empty'])

    def test_negative_level_forward_and_inverse(self):
        model = build_global_model('Equal', 1.0, 1.0)
        forward = classify_domain(model, H_INSIDE, grid_n=64, workers=CENSUS_WORKERS)
        inverse = dual_census(model, H_INSIDE, grid_n=64, workers=CENSUS_WORKERS)
        for census in (forward, inverse):
            with self.subTest(direction=census.direction):
                self.assertFalse(census.is_empty)
                self.assertTrue(census.neighborhood_in_domain())
                self.assertTrue(census.symmetric())
                self.assertEqual(census.cone_violations(), [])
        self.assertIs(inverse.expanded_label, DomainLabel.D1)
        self.assertTrue(forward.cone_ratio_check()['passed'])
