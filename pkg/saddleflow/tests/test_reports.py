import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from saddleflow.exceptions import ReportError
from saddleflow.models import CaseTag
from saddleflow.reports import RunManifest, canonical_hash, dumps, format_cell, plain, write_csv, write_json


class PlainTests(SimpleTestCase):
    def test_numpy_and_enum_values(self):
        payload = {'a': np.float64(0.5), 'b': np.int64(3), 'c': np.bool_(True), 'd': CaseTag.EQUAL,
                   'e': np.array([1.0, 2.0]), 1: (1, 2)}
        self.assertEqual(plain(payload), {'a': 0.5, 'b': 3, 'c': True, 'd': 'Equal', 'e': [1.0, 2.0], '1': [1, 2]})

    def test_non_finite_and_complex(self):
        self.assertEqual(plain([math.nan, math.inf, -math.inf]), ['nan', 'inf', '-inf'])
        self.assertEqual(plain(1 + 2j), {'re': 1.0, 'im': 2.0})

    def test_dumps_is_sorted_strict_json(self):
        text = dumps({'b': 1, 'a': math.nan})
        self.assertLess(text.index('"a"'), text.index('"b"'))
        self.assertEqual(json.loads(text), {'a': 'nan', 'b': 1})
        self.assertTrue(text.endswith('\n'))

    def test_hash_ignores_key_order(self):
        self.assertEqual(canonical_hash({'x': 1, 'y': [0.1]}), canonical_hash({'y': [0.1], 'x': 1}))
        self.assertNotEqual(canonical_hash({'x': 1}), canonical_hash({'x': 2}))


class CsvTests(SimpleTestCase):
    def test_cells(self):
        self.assertEqual(format_cell(None), '')
        self.assertEqual(format_cell(True), 'true')
        self.assertEqual(format_cell(np.int32(7)), '7')
        self.assertEqual(format_cell(0.1), '0.10000000000000001')
        self.assertEqual(format_cell(CaseTag.BETWEEN), 'Between')

    def test_write_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_csv(Path(tmp) / 'nested' / 'table.csv', ('a', 'b'), [[1, 0.5], [2, None]])
            self.assertEqual(path.read_text(), 'a,b\n1,0.5\n2,\n')


class ManifestTests(SimpleTestCase):
    def test_missing_output_is_an_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            manifest = RunManifest('verify_structure', 'abc', '1.0.0')
            manifest.add('structure.json')
            with self.assertRaises(ReportError) as ctx:
                manifest.write(tmp)
            self.assertEqual(ctx.exception.detail['missing'], ['structure.json'])
            self.assertFalse((Path(tmp) / 'manifest.json').exists())

    def test_write_lists_outputs_and_stages(self):
        with tempfile.TemporaryDirectory() as tmp:
            manifest = RunManifest('verify_structure', 'abc', '1.0.0')
            write_json(Path(tmp) / 'structure.json', {'passed': True})
            manifest.add('structure.json')
            manifest.add('structure.json')
            with manifest.stage('check'):
                pass
            data = json.loads(manifest.write(tmp).read_text())
            self.assertEqual(data['outputs'], ['structure.json'])
            self.assertIn('check', data['stages'])
            self.assertEqual(data['config_hash'], 'abc')
