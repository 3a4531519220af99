"""
Persistence of experiment results.

JSON reports are written with sorted keys and floats in their shortest exact
repr; CSV tables write every float with 17 significant digits. Identical
inputs therefore give byte-identical files.
"""
import csv
import hashlib
import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field as dataclass_field
from enum import Enum
from pathlib import Path

import numpy as np
from rest_framework.utils.encoders import JSONEncoder

from .exceptions import ReportError

logger = logging.getLogger(__name__)

TRAJECTORY_HEADER = ('t', 'u1', 'u2', 'v1', 'v2', 'H')


def plain(value):
    """
    Convert a report payload to JSON-ready builtins.

    Non-finite floats become the strings 'nan', 'inf' and '-inf' so the output
    stays strict JSON; complex numbers become {'re', 'im'} pairs.
    """
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return plain(value.tolist())
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    if isinstance(value, (complex, np.complexfloating)):
        return {'re': plain(value.real), 'im': plain(value.imag)}
    return value


def dumps(payload, indent=2):
    return json.dumps(plain(payload), cls=JSONEncoder, sort_keys=True, indent=indent, ensure_ascii=False) + '\n'


def canonical_hash(payload):
    """SHA-256 of the compact sorted-key JSON of ``payload``."""
    text = json.dumps(plain(payload), cls=JSONEncoder, sort_keys=True, separators=(',', ':'), ensure_ascii=False)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(payload), encoding='utf-8')
    logger.debug(f'Wrote {path}')
    return path


def format_cell(value):
    if value is None:
        return ''
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), '.17g')
    return str(value)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(cell) for cell in row])
    logger.debug(f'Wrote {path}')
    return path


def write_trajectory(path, trajectory):
    """Trajectory samples as a (t, u1, u2, v1, v2, H) table."""
    return write_csv(path, TRAJECTORY_HEADER, trajectory.rows())


@dataclass
class RunManifest:
    """
    Record of one command run.

    Attributes:
        command (str): management command that produced the outputs.
        config_hash (str): SHA-256 of the canonical validated config.
        artifact_version (str): version of the saddleflow package.
        outputs (list): file names relative to the output directory.
        stages (dict): wall-clock seconds per stage.
    """
    command: str
    config_hash: str
    artifact_version: str
    outputs: list = dataclass_field(default_factory=list)
    stages: dict = dataclass_field(default_factory=dict)

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + time.perf_counter() - start

    def add(self, name):
        if name not in self.outputs:
            self.outputs.append(name)

    def missing(self, directory):
        directory = Path(directory)
        return [name for name in self.outputs
                if not (directory / name).is_file() or (directory / name).stat().st_size == 0]

    def to_dict(self):
        return {
            'command': self.command,
            'config_hash': self.config_hash,
            'artifact_version': self.artifact_version,
            'outputs': list(self.outputs),
            'stages': dict(self.stages),
        }

    def write(self, directory):
        """
        Write ``manifest.json`` after checking every listed output.

        Raises
        ------
        ReportError
            If a listed output is missing or empty.
        """
        missing = self.missing(directory)
        if missing:
            logger.error(f'Run of {self.command} is missing outputs {missing}')
            raise ReportError(f'Outputs missing or empty: {", ".join(missing)}', missing=missing)
        path = write_json(Path(directory) / 'manifest.json', self.to_dict())
        logger.info(f'{self.command}: {len(self.outputs)} output(s) listed in {path}')
        return path
