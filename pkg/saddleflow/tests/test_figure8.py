import math

from django.test import SimpleTestCase, tag

from saddleflow.exceptions import ModelError
from saddleflow.figure8 import (
    ItineraryRecord, OuterReturnMap, TransitionTag, cross_lobe_ratio_check, figure_eight_census, follow_itinerary,
    outer_slopes, transition_map,
)
from saddleflow.flow import SectionDescriptor
from saddleflow.manager import build_figure_eight_model, build_global_model
from saddleflow.poincare import CensusRow, DomainCensus, DomainLabel, OutcomeTag, lift_to_section

CENSUS_WORKERS = 4


class TransitionTagTests(SimpleTestCase):
    def test_labels(self):
        self.assertEqual(TransitionTag(1, -1).label, '+-')
        self.assertEqual(TransitionTag(-1, -1).label, '--')

    def test_signs_are_checked(self):
        with self.assertRaises(ValueError):
            TransitionTag(0, 1)


class ItineraryRecordTests(SimpleTestCase):
    def test_properties(self):
        record = ItineraryRecord(None, [
            (1, 'In', 0.0, 0.0, 0.0), (1, 'Out', 2.0, 0.0, 0.0), (-1, 'In', 5.0, 0.0, 0.0),
        ])
        self.assertEqual(record.signs, (1, 1, -1))
        self.assertTrue(record.alternates)
        self.assertTrue(record.increasing)
        self.assertEqual(record.csv_rows()[2], [2, -1, 'In', 5.0, 0.0, 0.0])

    def test_repeated_section_kind(self):
        record = ItineraryRecord(None, [(1, 'In', 0.0, 0.0, 0.0), (1, 'In', 1.0, 0.0, 0.0)])
        self.assertFalse(record.alternates)


class SingleLoopTests(SimpleTestCase):
    def test_figure_eight_maps_need_two_loops(self):
        model = build_global_model('Equal', 1.0, 1.0)
        with self.assertRaises(ModelError):
            transition_map(model, -1e-3, TransitionTag(1, 1), (0.0, 0.0))
        with self.assertRaises(ModelError):
            figure_eight_census(model, -1e-3)


class FigureEightTests(SimpleTestCase):
    def setUp(self):
        self.model = build_figure_eight_model(1.0, 1.0)
        self.delta = self.model.delta_scale

    def _start(self, h, sigma=1):
        return lift_to_section(self.model, h, SectionDescriptor.inward(self.delta, sigma), 0.0, 0.0)

    def test_lobe_orbit_stays_in_its_lobe(self):
        record = follow_itinerary(self.model, -1e-3, self._start(-1e-3), n_visits=4)
        self.assertIs(record.outcome.tag, OutcomeTag.HIT)
        self.assertEqual(set(record.signs), {1})
        self.assertTrue(record.alternates)
        self.assertTrue(record.increasing)

    def test_outer_orbit_visits_both_lobes(self):
        record = follow_itinerary(self.model, 1e-3, self._start(1e-3), n_visits=4)
        self.assertIs(record.outcome.tag, OutcomeTag.HIT)
        self.assertEqual(set(record.signs), {1, -1})
        self.assertTrue(record.alternates)

    def test_outer_map_fixes_the_planar_orbit(self):
        maps = OuterReturnMap(self.model, 1e-3, 1)
        image = maps.image((0.0, 0.0))
        self.assertIsNotNone(image)
        self.assertLess(abs(image[0]) + abs(image[1]), 1e-8)

    def test_census_needs_a_nonzero_level(self):
        with self.assertRaises(ValueError):
            figure_eight_census(self.model, 0.0)


class CrossLobeRatioTests(SimpleTestCase):
    def test_ratio_and_slope_of_expanded_rows(self):
        exit_v = 0.002 * math.exp(2.0) * 1.05
        rows = [
            CensusRow(1, 2, 0.001, 0.002, DomainLabel.D2, tau=2.0, image=(0.0, 0.0), exit=(1e-5, exit_v)),
            CensusRow(2, 0, 0.002, 0.0, DomainLabel.D1, tau=2.0, image=(0.0, 0.0), exit=(0.1, 0.1)),
            CensusRow(0, 3, 0.0, 0.003, DomainLabel.ESCAPED_LOCAL),
        ]
        census = DomainCensus('x', 'Equal', (1.0, 1.0), 1e-3, 0.01, 10.0, 64, 1, 0.1, 'forward', rows)
        check = cross_lobe_ratio_check(census, 1.0)
        self.assertEqual(check['samples'], 1)
        self.assertAlmostEqual(check['C'], 0.5)
        self.assertAlmostEqual(check['max_u_over_v'], 1e-5 / exit_v)

    def test_empty_census(self):
        census = DomainCensus('x', 'Equal', (1.0, 1.0), 1e-3, 0.01, 10.0, 64, 1, 0.1, 'forward', [])
        self.assertEqual(cross_lobe_ratio_check(census, 1.0), {'samples': 0, 'C': 0.0, 'max_u_over_v': 0.0})


@tag('slow')
class FigureEightCensusTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.model = build_figure_eight_model(1.0, 1.0)
        cls.inside = figure_eight_census(cls.model, -1e-3, workers=CENSUS_WORKERS, max_iters=4)
        cls.outside = figure_eight_census(cls.model, 1e-3, workers=CENSUS_WORKERS, max_iters=4)

    def test_two_lobe_saddles_below_zero(self):
        report = self.inside
        self.assertEqual(report.saddle_count, 2)
        self.assertEqual(sorted(report.lobes), [-1, 1])
        self.assertIsNone(report.outer)
        self.assertEqual(report.cross_lobe_fixed_points, 0)
        self.assertLess(report.symmetry['period_difference'], 1e-6)
        self.assertTrue(report.stable_across_m)
        self.assertTrue(report.passed)

    def test_one_outer_saddle_above_zero(self):
        report = self.outside
        self.assertEqual(report.saddle_count, 1)
        self.assertEqual(report.lobes, {})
        self.assertTrue(report.outer.is_saddle)
        self.assertTrue(report.stable_across_m)
        self.assertTrue(report.passed)
        self.assertEqual(list(report.conclusions), [5.0, 10.0, 20.0])

    def test_outer_ratio_and_slopes(self):
        report = self.outside
        self.assertGreater(report.ratio_check['samples'], 0)
        self.assertTrue(math.isfinite(report.ratio_check['C']))
        self.assertEqual(set(report.slopes), {'plus', 'minus', 'd_over_b_plus', 'd_over_b_minus'})
        self.assertTrue(math.isfinite(report.slopes['plus']))
        slopes = outer_slopes(self.model, 1e-3, report.outer)
        self.assertAlmostEqual(slopes['d_over_b_plus'], report.slopes['d_over_b_plus'])

    def test_report_serializes(self):
        summary = self.outside.to_dict()
        self.assertEqual(summary['saddle_count'], 1)
        self.assertIn('outer', summary['escapes'])
        self.assertEqual(self.inside.to_dict()['saddle_count'], 2)
