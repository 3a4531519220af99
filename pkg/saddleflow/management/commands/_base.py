import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError
from rest_framework.serializers import ValidationError

from saddleflow.exceptions import SaddleflowError
from saddleflow.harness import execute
from saddleflow.reports import write_json
from saddleflow.serializers import load_experiment, read_config

logger = logging.getLogger(__name__)

USAGE_ERROR = 2


class ExperimentCommand(BaseCommand):
    """
    Shared surface of the experiment commands.

    Options:
        --config: experiment config file (required).
        --h, --eps, --m, --grid-n, --out: override the corresponding config keys.

    Exit codes: 0 success, 1 failed scientific check, 2 invalid config or
    model, 3 numerical failure. Every failure leaves ``error.json`` in the
    output directory.
    """
    name = None

    def add_arguments(self, parser):
        parser.add_argument('--config', required=True, help='Experiment config file (key=value lines).')
        parser.add_argument('--h', type=float, help='Run a single level h instead of numerics.h_list.')
        parser.add_argument('--eps', type=float, help='Radius of the chart ball B_eps.')
        parser.add_argument('--m', type=float, help='Cone parameter m > 1.')
        parser.add_argument('--grid-n', dest='grid_n', type=int, help='Census grid size (at least 64).')
        parser.add_argument('--out', help='Output directory.')

    def _fail(self, directory, exit_code, error, detail):
        payload = {'command': self.name, 'exit_code': exit_code, 'error': error, 'detail': detail}
        try:
            write_json(Path(directory) / 'error.json', payload)
        except OSError as e:
            logger.error(f'Could not write error.json to {directory}: {e}')
        raise CommandError(f'{error}: {detail.get("message", detail)}', returncode=exit_code)

    def handle(self, *args, **options):
        overrides = {key: options.get(key) for key in ('h', 'eps', 'm', 'grid_n', 'out')}
        directory = options.get('out') or 'reports'
        try:
            data = read_config(options['config'])
            directory = options.get('out') or data['output'].get('directory') or directory
            config = load_experiment(data, overrides)
        except ValidationError as e:
            logger.error(f'{self.name}: invalid config {options["config"]}: {e.detail}')
            self._fail(directory, USAGE_ERROR, 'ValidationError', {'message': str(e.detail), 'fields': e.detail})

        directory = config.output['directory']
        try:
            run = execute(self.name, config)
        except SaddleflowError as e:
            logger.error(f'{self.name} failed with {type(e).__name__}: {e}')
            self._fail(directory, e.exit_code, type(e).__name__, {'message': str(e), **e.detail})
        except ValueError as e:
            logger.error(f'{self.name} rejected its input: {e}')
            self._fail(directory, USAGE_ERROR, type(e).__name__, {'message': str(e)})

        for message in run.messages:
            self.stdout.write(message)
        self.stdout.write(self.style.SUCCESS(f'{self.name}: reports written to {run.directory}'))
