from django.test import SimpleTestCase
from rest_framework.serializers import ValidationError

from saddleflow.serializers import dump_model_config, load_experiment, parse_config_text

GLOBAL_CONFIG = """
model.kind=GlobalHamiltonian
model.case_tag=Equal
model.lambda1=1
model.lambda2=1
model.coupling.k3=-0.5
numerics.h_list=-1e-3,-1e-4
output.directory=reports/equal
"""

NORMAL_FORM_CONFIG = """
model.kind=LocalNormalForm
model.case_tag=Equal
model.lambda1=1
model.lambda2=1
model.coeff.f11.u1*v1=0.5
model.coeff.g11.u1*v1=-0.5
bvp.boundary=1,1,1,1;0.5,-0.5,1,-1;-1,0.25,0.5,1
"""


def _load(text, **overrides):
    return load_experiment(parse_config_text(text), overrides)


class GroupingTests(SimpleTestCase):
    def test_sections(self):
        data = parse_config_text(GLOBAL_CONFIG + NORMAL_FORM_CONFIG)
        self.assertEqual(data['model']['coupling'], {'k3': '-0.5'})
        self.assertEqual(data['model']['coeffs'], {'f11': {'u1*v1': '0.5'}, 'g11': {'u1*v1': '-0.5'}})
        self.assertEqual(data['numerics']['h_list'], ['-1e-3', '-1e-4'])
        self.assertEqual(data['bvp']['boundary'][1], ['0.5', '-0.5', '1', '-1'])

    def test_delta_scale_alias(self):
        self.assertEqual(parse_config_text('model.delta_scale=0.05\n')['model'], {'delta': '0.05'})

    def test_unknown_keys(self):
        with self.assertRaises(ValidationError) as ctx:
            parse_config_text('solver.kind=rk4\nmodel=1\n')
        self.assertIn('model, solver.kind', str(ctx.exception.detail['config']))


class DefaultTests(SimpleTestCase):
    def test_defaults_follow_delta(self):
        config = _load(GLOBAL_CONFIG)
        self.assertAlmostEqual(config.numerics['eps'], 0.01)
        self.assertEqual(config.numerics['deltas'], [0.1, 0.05])
        self.assertEqual(config.numerics['grid_n'], 64)
        self.assertEqual(config.numerics['m_values'], [5.0, 10.0, 20.0])
        self.assertEqual(config.output['formats'], ['csv', 'json'])
        self.assertEqual(config.bvp['tau_list'], [2.0, 4.0, 8.0])
        self.assertEqual(config.h_list, [-1e-3, -1e-4])
        self.assertEqual(dict(config.model.coupling), {'k3': -0.5})

    def test_overrides(self):
        config = _load(GLOBAL_CONFIG, h=-2e-3, grid_n=128, out='elsewhere', eps=None)
        self.assertEqual(config.h_list, [-2e-3])
        self.assertEqual(config.numerics['grid_n'], 128)
        self.assertEqual(config.output['directory'], 'elsewhere')

    def test_hash_tracks_the_content(self):
        self.assertEqual(_load(GLOBAL_CONFIG).config_hash, _load(GLOBAL_CONFIG).config_hash)
        self.assertNotEqual(_load(GLOBAL_CONFIG).config_hash, _load(GLOBAL_CONFIG, h=-2e-3).config_hash)

    def test_normal_form_sections(self):
        config = _load(NORMAL_FORM_CONFIG)
        self.assertTrue(config.model.is_conservative)
        self.assertEqual(config.bvp['boundary'][2], [-1.0, 0.25, 0.5, 1.0])


class InvalidConfigTests(SimpleTestCase):
    def assertInvalid(self, text, *path, **overrides):
        with self.assertRaises(ValidationError) as ctx:
            _load(text, **overrides)
        detail = ctx.exception.detail
        for key in path:
            self.assertIn(key, detail)
            detail = detail[key]
        return detail

    def test_level_outside_the_bound(self):
        self.assertInvalid(GLOBAL_CONFIG, 'h_list', h=0.01)

    def test_eps_not_below_delta(self):
        self.assertInvalid(GLOBAL_CONFIG, 'eps', eps=0.2)

    def test_grid_too_small(self):
        self.assertInvalid(GLOBAL_CONFIG, 'numerics', 'grid_n', grid_n=32)

    def test_cone_parameter(self):
        self.assertInvalid(GLOBAL_CONFIG, 'numerics', 'm', m=1.0)

    def test_duplicate_levels(self):
        self.assertInvalid(GLOBAL_CONFIG.replace('-1e-3,-1e-4', '-1e-3,-1e-3'), 'numerics', 'h_list')

    def test_missing_rate(self):
        detail = self.assertInvalid(GLOBAL_CONFIG.replace('model.lambda2=1\n', ''), 'model', 'lambda2')
        self.assertIn('GlobalHamiltonian', str(detail[0]))

    def test_odd_coupling(self):
        detail = self.assertInvalid(GLOBAL_CONFIG + 'model.coupling.u1*v2^2=0.1\n', 'model')
        self.assertIn('breaks the symmetry', str(detail[0]))

    def test_coeffs_on_a_global_model(self):
        self.assertInvalid(GLOBAL_CONFIG + 'model.coeff.f11.u1*v1=0.5\n', 'model', 'coeffs')

    def test_increasing_bvp_deltas(self):
        self.assertInvalid(NORMAL_FORM_CONFIG + 'bvp.deltas=0.1,0.2,0.05\n', 'bvp', 'deltas')


class DumpTests(SimpleTestCase):
    def test_round_trip(self):
        for text in (GLOBAL_CONFIG, NORMAL_FORM_CONFIG):
            with self.subTest(text=text.split()[0]):
                model = _load(text).model
                rebuilt = _load(dump_model_config(model)).model
                self.assertEqual(rebuilt.name, model.name)
                self.assertEqual(dict(rebuilt.coupling), dict(model.coupling))
                self.assertEqual(rebuilt.delta_scale, model.delta_scale)
