import math

import numpy as np
from django.test import SimpleTestCase

from saddleflow.exceptions import Escaped, NoCrossing
from saddleflow.flow import SectionDescriptor, SectionKind, cross_section, cross_sections, integrate, parallel_map
from saddleflow.manager import build_global_model, build_local_normal_form


def _square(x):
    return x * x


class SectionDescriptorTests(SimpleTestCase):
    def test_default_orientations(self):
        self.assertEqual(SectionDescriptor.inward(0.1, 1).direction, -1)
        self.assertEqual(SectionDescriptor.inward(0.1, -1).direction, 1)
        self.assertEqual(SectionDescriptor.outward(0.1, 1).direction, 1)
        self.assertEqual(SectionDescriptor.outward(0.1, -1).direction, -1)

    def test_indices(self):
        inward = SectionDescriptor.inward(0.1)
        outward = SectionDescriptor('Out', -1, 0.1)
        self.assertIs(outward.which, SectionKind.OUT)
        self.assertEqual((inward.index, inward.free_index), (1, 3))
        self.assertEqual((outward.index, outward.free_index), (3, 1))
        self.assertAlmostEqual(outward.level, -0.1)

    def test_invalid_sign(self):
        with self.assertRaises(ValueError):
            SectionDescriptor.inward(0.1, 0)


class IntegrationTests(SimpleTestCase):
    def setUp(self):
        self.model = build_local_normal_form('Between', 1.0, 1.5)

    def test_linear_flow_matches_exponentials(self):
        x0 = np.array([0.05, 0.05, 0.001, 0.001])
        trajectory = integrate(self.model, x0, (0.0, 1.0), bound=math.inf)
        expected = x0 * np.exp(self.model.eigen.linear_rates())
        np.testing.assert_allclose(trajectory.states[-1], expected, rtol=1e-9, atol=1e-14)
        self.assertLess(trajectory.h_drift, 1e-12)
        self.assertEqual(len(list(trajectory.rows())), len(trajectory.times))

    def test_escape_from_the_box(self):
        with self.assertRaises(Escaped) as ctx:
            integrate(self.model, [0.0, 0.0, 0.01, 0.0], (0.0, 10.0), bound=0.05)
        self.assertAlmostEqual(ctx.exception.t_exit, math.log(5.0), places=6)

    def test_backward_span_is_rejected(self):
        with self.assertRaises(ValueError):
            integrate(self.model, np.zeros(4), (1.0, 0.0))

    def test_crossing_time(self):
        section = SectionDescriptor.outward(0.1, 1)
        state, t = cross_section(self.model, [0.1, 0.1, 0.001, 0.001], section)
        self.assertAlmostEqual(t, math.log(100.0) / 1.5, places=8)
        self.assertEqual(state.v2, 0.1)

    def test_first_of_several_sections(self):
        sections = [SectionDescriptor.outward(0.1, 1), SectionDescriptor.outward(0.1, -1)]
        crossing = cross_sections(self.model, [0.1, 0.1, 0.0, -0.001], sections)
        self.assertEqual(crossing.index, 1)
        self.assertEqual(crossing.section.sigma, -1)

    def test_backward_crossing(self):
        section = SectionDescriptor.inward(0.1, 1)
        crossing = cross_sections(self.model, [0.0, 0.01, 0.0, 0.0], [section], t_max=-10.0)
        self.assertAlmostEqual(crossing.time, -math.log(10.0) / 1.5, places=8)

    def test_no_crossing(self):
        with self.assertRaises(NoCrossing):
            cross_section(self.model, [0.1, 0.1, 0.001, 0.001], SectionDescriptor.outward(0.1, 1), t_max=1.0)

    def test_start_on_section(self):
        with self.assertRaises(ValueError):
            cross_section(self.model, [0.0, 0.0, 0.0, 0.1], SectionDescriptor.outward(0.1, 1))


class GlobalFlowTests(SimpleTestCase):
    def test_planar_loop_energy_is_conserved(self):
        model = build_global_model('Equal', 1.0, 1.0)
        x0 = model.homoclinic(-8.0)
        trajectory = integrate(model, x0, (0.0, 16.0))
        self.assertLess(trajectory.h_drift, 1e-10)
        np.testing.assert_allclose(trajectory.states[:, [0, 2]], 0.0, atol=1e-14)


class ParallelMapTests(SimpleTestCase):
    def test_serial_order(self):
        self.assertEqual(parallel_map(_square, [3, 1, 2], 1), [9, 1, 4])
