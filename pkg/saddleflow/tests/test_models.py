import numpy as np
from django.test import SimpleTestCase, override_settings

from saddleflow.exceptions import EigendataError, IdentityViolation, ModelError, SymmetryViolation
from saddleflow.manager import (
    build_cnlse_model, build_figure_eight_model, build_global_model, build_local_normal_form, model_manager,
)
from saddleflow.models import SYMMETRY, CaseTag, Eigendata, PhaseState, check_structure, classify_case
from saddleflow.polynomials import Polynomial, format_monomial, parse_monomial

# u1' = -u1 + u1^2 v1 / 2, v1' = v1 - u1 v1^2 / 2 keeps u1*v1 constant.
CONSERVATIVE_COEFFS = {'f11': {'u1*v1': 0.5}, 'g11': {'u1*v1': -0.5}}


class PolynomialTests(SimpleTestCase):
    def test_monomial_parsing(self):
        self.assertEqual(parse_monomial('u1^2*v2'), (2, 0, 0, 1))
        self.assertEqual(parse_monomial('1'), (0, 0, 0, 0))
        self.assertEqual(format_monomial((1, 0, 3, 0)), 'u1*v1^3')
        with self.assertRaises(ValueError):
            parse_monomial('w1^2')

    def test_partial_derivative_and_evaluation(self):
        poly = Polynomial.from_strings({'u1^2*v2': 3.0, 'u2': -1.0})
        self.assertEqual(poly.partial(0).to_strings(), {'u1*v2': 6.0})
        x = np.array([2.0, 1.0, 0.0, 0.5])
        self.assertAlmostEqual(poly(x), 3.0 * 4.0 * 0.5 - 1.0)
        batch = np.vstack([x, 2.0 * x])
        np.testing.assert_allclose(poly(batch), [5.0, 3.0 * 16.0 * 1.0 - 2.0])

    def test_arithmetic(self):
        u1 = Polynomial.variable('u1')
        v1 = Polynomial.variable('v1')
        self.assertEqual(((u1 + v1) ** 2).to_strings(), {'v1^2': 1.0, 'u1*v1': 2.0, 'u1^2': 1.0})
        self.assertTrue((u1 - u1).is_zero())


class EigendataTests(SimpleTestCase):
    def test_case_classification(self):
        self.assertIs(classify_case(1.0, 1.0), CaseTag.EQUAL)
        self.assertIs(classify_case(1.0, 1.5), CaseTag.BETWEEN)
        self.assertIs(classify_case(1.0, 2.0), CaseTag.RESONANT2)
        self.assertIs(classify_case(1.0, 3.0), CaseTag.BEYOND2)

    def test_inconsistent_case_tag(self):
        with self.assertRaises(EigendataError):
            Eigendata(1.0, 1.5, 'Equal')

    def test_rates_out_of_order(self):
        with self.assertRaises(EigendataError):
            Eigendata(2.0, 1.0, 'Between')

    def test_phase_state_reflection(self):
        state = PhaseState(0.1, 0.2, -0.3, 0.4, t=1.0)
        np.testing.assert_array_equal(state.reflect().array, SYMMETRY * state.array)
        with self.assertRaises(ValueError):
            PhaseState(float('nan'), 0.0, 0.0, 0.0)


class ModelBuilderTests(SimpleTestCase):
    def test_global_model_structure(self):
        model = build_global_model('Equal', 1.0, 1.0)
        report = check_structure(model)
        self.assertTrue(report.passed, report.failed())
        self.assertTrue(model.is_conservative)
        self.assertEqual(model.loops, (1,))

    def test_structure_report_is_reproducible(self):
        model = build_global_model('Between', 1.0, 1.5)
        self.assertEqual(check_structure(model).to_dict(), check_structure(model).to_dict())

    def test_odd_coupling_is_rejected(self):
        with self.assertRaisesMessage(SymmetryViolation, 'breaks the symmetry'):
            build_global_model('Equal', 1.0, 1.0, coupling={'u1*v2^2': 0.1})

    def test_coupling_must_involve_the_pair(self):
        with self.assertRaisesMessage(ModelError, 'planar core'):
            build_global_model('Equal', 1.0, 1.0, coupling={'u2^3': 0.1})

    def test_linear_normal_form_conserves_quadratic_integral(self):
        model = build_local_normal_form('Between', 1.0, 1.5)
        self.assertTrue(model.is_conservative)
        x = np.array([0.01, -0.02, 0.03, 0.04])
        self.assertAlmostEqual(model.energy(x), (1.0 / 1.5) * 0.01 * 0.03 + 0.02 * 0.04)

    def test_nonlinear_normal_form_structure(self):
        model = build_local_normal_form('Equal', 1.0, 1.0, CONSERVATIVE_COEFFS)
        self.assertTrue(model.is_conservative)
        self.assertTrue(check_structure(model).passed)

    def test_non_conserving_normal_form_drops_integral(self):
        model = build_local_normal_form('Equal', 1.0, 1.0, {'f11': {'u1*v1': 0.5}})
        self.assertFalse(model.is_conservative)

    def test_identity_violation_names_the_identity(self):
        with self.assertRaisesMessage(IdentityViolation, 'f12(0,u2,0,v2) = 0'):
            build_local_normal_form('Equal', 1.0, 1.0, {'f12': {'u2': 1.0}})

    def test_beyond2_forbids_f21(self):
        with self.assertRaises(IdentityViolation):
            build_local_normal_form('Beyond2', 1.0, 3.0, {'f21': {'u1': 1.0}})

    def test_figure_eight_model(self):
        model = build_figure_eight_model(1.0, 1.0)
        self.assertEqual(model.loops, (1, -1))
        self.assertAlmostEqual(model.loop_extent, np.sqrt(2.0))
        self.assertTrue(check_structure(model).passed)

    def test_asymmetric_figure_eight_has_no_closed_form_loop(self):
        model = build_figure_eight_model(1.0, 1.0, asymmetry=0.2)
        self.assertIsNone(model.homoclinic)

    def test_cnlse_model_needs_positive_beta(self):
        with self.assertRaises(ModelError):
            build_cnlse_model(1.0, 0.0, 1.0, 1.0)
        model = build_cnlse_model(1.0, 1.0, 1.0, 1.0)
        self.assertEqual(model.loops, (1, -1))

    def test_small_sample_counts_are_raised(self):
        report = check_structure(build_global_model('Equal', 1.0, 1.0), n_samples=10)
        self.assertEqual(report.n_samples, 100)
        self.assertEqual(report.to_dict()['n_samples'], 100)


class DefaultCouplingTests(SimpleTestCase):
    def test_default_global_map_is_nondegenerate(self):
        model = build_global_model('Equal', 1.0, 1.0)
        (coeffs,) = model_manager._check_default_coupling(model)
        self.assertEqual(dict(model.coupling), {'k1': 0.3, 'k2': 0.3, 'k3': -0.9})
        self.assertEqual(coeffs.flags, ())
        scale = np.max(np.abs(coeffs.matrix))
        for value in (coeffs.b, coeffs.c, coeffs.d):
            self.assertGreater(abs(value), 1e-4 * scale)

    def test_figure_eight_defaults_cover_both_loops(self):
        model = build_figure_eight_model(1.0, 1.0)
        coeffs = model_manager._check_default_coupling(model)
        self.assertEqual([c.sigma for c in coeffs], [1, -1])
        self.assertTrue(all(c.b and c.c and c.d for c in coeffs))

    @override_settings(SADDLEFLOW={'DEFAULT_COUPLING': {'k3': -0.9}})
    def test_default_without_cross_terms_is_rejected(self):
        with self.assertRaisesMessage(ModelError, 'cone hypotheses violated'):
            build_global_model('Equal', 1.0, 1.0)
