import json
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from saddleflow.exceptions import CheckFailed
from saddleflow.harness import ExperimentRun, level_tag
from saddleflow.serializers import load_experiment, parse_config_text

CONFIG = """
model.kind=GlobalHamiltonian
model.case_tag=Equal
model.lambda1=1
model.lambda2=1
model.coupling.k3=-0.9
numerics.h_list=-1e-3
numerics.n_samples=200
"""


class CommandTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def config_file(self, text=CONFIG, name='experiment.env'):
        path = self.root / name
        path.write_text(text, encoding='utf-8')
        return str(path)

    def run_command(self, name, text=CONFIG, out='reports', **options):
        stdout = StringIO()
        call_command(name, config=self.config_file(text), out=str(self.root / out), stdout=stdout, **options)
        return stdout.getvalue()

    def assertExitCode(self, name, text, code, out='reports'):
        with self.assertRaises(CommandError) as ctx:
            self.run_command(name, text, out=out)
        self.assertEqual(ctx.exception.returncode, code)
        return json.loads((self.root / out / 'error.json').read_text())


class VerifyStructureCommandTests(CommandTestCase):
    def test_success_writes_report_and_manifest(self):
        output = self.run_command('verify_structure')
        self.assertIn('passed', output)
        report = json.loads((self.root / 'reports' / 'structure.json').read_text())
        self.assertTrue(report['report']['passed'])
        manifest = json.loads((self.root / 'reports' / 'manifest.json').read_text())
        self.assertEqual(manifest['command'], 'verify_structure')
        self.assertEqual(manifest['outputs'], ['structure.json'])
        self.assertEqual(len(manifest['config_hash']), 64)

    def test_reports_are_byte_identical_across_runs(self):
        self.run_command('verify_structure', out='first')
        self.run_command('verify_structure', out='second')
        first = (self.root / 'first' / 'structure.json').read_bytes()
        second = (self.root / 'second' / 'structure.json').read_bytes()
        self.assertEqual(first, second)

    def test_missing_rate_is_a_usage_error(self):
        error = self.assertExitCode('verify_structure', CONFIG.replace('model.lambda2=1\n', ''), 2)
        self.assertEqual(error['command'], 'verify_structure')
        self.assertEqual(error['exit_code'], 2)
        self.assertEqual(error['error'], 'ValidationError')
        self.assertIn('lambda2', error['detail']['fields']['model'])

    def test_odd_coupling_is_a_usage_error(self):
        error = self.assertExitCode('verify_structure', CONFIG + 'model.coupling.u1*v2^2=0.1\n', 2)
        self.assertIn('breaks the symmetry', error['detail']['message'])

    def test_missing_config_file(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('verify_structure', config=str(self.root / 'absent.env'), out=str(self.root / 'reports'))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_json_only_output(self):
        self.run_command('verify_structure', CONFIG + 'output.formats=json\n')
        self.assertTrue((self.root / 'reports' / 'structure.json').is_file())


class PoincareCommandTests(CommandTestCase):
    def test_single_level_override(self):
        output = self.run_command('poincare', h=-2e-3)
        self.assertIn('h=-0.002', output)
        payload = json.loads((self.root / 'reports' / 'poincare.json').read_text())
        self.assertEqual(list(payload['levels']), ['-0.002'])
        self.assertIn('sweep', payload)
        self.assertTrue((self.root / 'reports' / 'asymptotics.csv').is_file())

    def test_level_outside_the_bound(self):
        with self.assertRaises(CommandError) as ctx:
            self.run_command('poincare', h=0.01)
        self.assertEqual(ctx.exception.returncode, 2)


class ExperimentRunTests(CommandTestCase):
    def test_failed_check_still_writes_the_manifest(self):
        data = parse_config_text(CONFIG)
        config = load_experiment(data, {'out': str(self.root / 'run')})
        run = ExperimentRun('verify_structure', config)
        run.json('structure.json', {'passed': False})
        self.assertFalse(run.check(False, 'structural violations above tolerance: J'))
        with self.assertRaises(CheckFailed) as ctx:
            run.finish()
        self.assertEqual(ctx.exception.exit_code, 1)
        self.assertTrue((self.root / 'run' / 'manifest.json').is_file())

    def test_level_tag(self):
        self.assertEqual(level_tag(-1e-3), 'h-1.000e-03')
