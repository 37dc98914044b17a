import os
import tempfile
import unittest
from unittest.mock import MagicMock

import numpy as np

from lumino.stream_cert.error_handler import DomainError, ParseError
from lumino.stream_cert.stream import (
    GeneratorConfig, LabeledStream, emit_csv_stream, generate_synthetic_stream, load_csv_stream,
    standardize_stream, window_at, window_label, window_labels
)


def small_stream():
    features = np.arange(10, dtype=np.float64).reshape(5, 2)
    return LabeledStream(features=features, labels=[0, 1, 1, 0, 2], num_classes=3)


class TestLabeledStream(unittest.TestCase):
    """Tests for stream types and windows"""

    def test_validation(self):
        with self.assertRaises(DomainError):
            LabeledStream(features=np.zeros((0, 2)), labels=[], num_classes=2)
        with self.assertRaises(DomainError):
            LabeledStream(features=np.zeros((2, 2)), labels=[0], num_classes=2)
        with self.assertRaises(DomainError):
            LabeledStream(features=np.zeros((2, 2)), labels=[0, 2], num_classes=2)
        with self.assertRaises(DomainError):
            LabeledStream(features=[[np.nan, 0.0]], labels=[0], num_classes=2)

    def test_arrays_are_read_only(self):
        stream = small_stream()
        with self.assertRaises(ValueError):
            stream.features[0, 0] = 1.0

    def test_window_at(self):
        stream = small_stream()
        first = window_at(stream, 1, 3)
        self.assertEqual(first.size, 1)
        np.testing.assert_array_equal(first.features, [[0.0, 1.0]])
        full = window_at(stream, 5, 3)
        self.assertEqual((full.start, full.end, full.size), (3, 5, 3))
        np.testing.assert_array_equal(full.features[-1], [8.0, 9.0])
        with self.assertRaises(DomainError):
            window_at(stream, 0, 2)
        with self.assertRaises(DomainError):
            window_at(stream, 6, 2)
        with self.assertRaises(DomainError):
            window_at(stream, 1, 0)

    def test_window_label_majority_and_ties(self):
        stream = small_stream()
        # window (1, 1, 0): majority 1
        self.assertEqual(window_label(stream, 4, 3), 1)
        # window (0, 2): tie goes to the most recent label
        self.assertEqual(window_label(stream, 5, 2), 2)
        # w = 1 uses the step's own label
        np.testing.assert_array_equal(window_labels(stream, 1), stream.labels)

    def test_items_are_one_based(self):
        stream = small_stream()
        self.assertEqual(stream.item(1).index, 1)
        np.testing.assert_array_equal(stream.item(5).features, [8.0, 9.0])
        self.assertEqual([item.index for item in stream.items], [1, 2, 3, 4, 5])


class TestCsvStream(unittest.TestCase):
    """Tests for stream CSV reading and writing"""

    def setUp(self):
        self.temp_dir = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.temp_dir.name, 'stream.csv')

    def tearDown(self):
        self.temp_dir.cleanup()

    def write(self, text):
        with open(self.path, 'w') as f:
            f.write(text)

    def test_emit_then_load_preserves_values(self):
        stream = generate_synthetic_stream(GeneratorConfig(length=40, seed=4))
        emit_csv_stream(stream, self.path)
        self.assertEqual(load_csv_stream(self.path, num_classes=3), stream)

    def test_column_order_and_num_features(self):
        self.write("label,f1,f0,extra\n1,2.5,0.5,x\n0,3.5,1.5,y\n")
        stream = load_csv_stream(self.path)
        np.testing.assert_array_equal(stream.features, [[0.5, 2.5], [1.5, 3.5]])
        np.testing.assert_array_equal(stream.labels, [1, 0])
        self.assertEqual(stream.num_classes, 2)

    def test_missing_column(self):
        self.write("f0,f1\n1,2\n")
        with self.assertRaises(ParseError) as ctx:
            load_csv_stream(self.path)
        self.assertIn("missing column 'label'", str(ctx.exception))
        self.write("a,label\n1,0\n")
        with self.assertRaises(ParseError) as ctx:
            load_csv_stream(self.path)
        self.assertIn("missing column 'f0'", str(ctx.exception))

    def test_non_numeric_cell_reports_row(self):
        self.write("f0,label\n1.0,0\nabc,1\n")
        with self.assertRaises(ParseError) as ctx:
            load_csv_stream(self.path)
        self.assertEqual(ctx.exception.row, 3)

    def test_bad_rows(self):
        self.write("f0,label\n1.0,0,7\n")
        with self.assertRaises(ParseError):
            load_csv_stream(self.path)
        self.write("f0,label\n1.0,0.5\n")
        with self.assertRaises(ParseError):
            load_csv_stream(self.path)
        self.write("f0,label\ninf,0\n")
        with self.assertRaises(ParseError):
            load_csv_stream(self.path)

    def test_empty_file(self):
        self.write("")
        with self.assertRaises(DomainError):
            load_csv_stream(self.path)
        self.write("f0,label\n")
        with self.assertRaises(DomainError):
            load_csv_stream(self.path)


class TestGenerator(unittest.TestCase):
    """Tests for the synthetic stream generator"""

    def test_reproducible(self):
        config = GeneratorConfig(length=120, seed=9)
        self.assertEqual(generate_synthetic_stream(config), generate_synthetic_stream(config))
        other = generate_synthetic_stream(GeneratorConfig(length=120, seed=10))
        self.assertNotEqual(generate_synthetic_stream(config), other)

    def test_segments(self):
        config = GeneratorConfig(num_classes=3, num_features=4, length=300, min_segment=10, max_segment=30)
        stream = generate_synthetic_stream(config)
        self.assertEqual((stream.length, stream.num_features), (300, 4))
        changes = np.flatnonzero(np.diff(stream.labels)) + 1
        boundaries = np.concatenate([[0], changes, [stream.length]])
        lengths = np.diff(boundaries)
        # Every segment but the truncated last one respects the length range
        self.assertTrue(np.all(lengths[:-1] >= 10))
        self.assertTrue(np.all(lengths[:-1] <= 30))

    def test_invalid_config(self):
        with self.assertRaises(DomainError):
            GeneratorConfig(num_classes=1)
        with self.assertRaises(DomainError):
            GeneratorConfig(min_segment=5, max_segment=4)


class TestStandardize(unittest.TestCase):
    """Tests for per-coordinate standardization"""

    def test_zero_mean_unit_variance(self):
        stream = generate_synthetic_stream(GeneratorConfig(length=200, seed=1))
        standardized, record = standardize_stream(stream)
        np.testing.assert_allclose(standardized.features.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(standardized.features.std(axis=0), 1.0, atol=1e-12)
        np.testing.assert_array_equal(standardized.labels, stream.labels)
        self.assertEqual(record.apply(stream), standardized)

    def test_zero_variance_coordinate(self):
        logger = MagicMock()
        stream = LabeledStream(features=[[1.0, 5.0], [3.0, 5.0]], labels=[0, 1], num_classes=2)
        standardized, record = standardize_stream(stream, logger=logger)
        np.testing.assert_array_equal(standardized.features, [[-1.0, 0.0], [1.0, 0.0]])
        np.testing.assert_array_equal(record.zero_variance, [False, True])
        logger.warning.assert_called_once()

    def test_too_short(self):
        stream = LabeledStream(features=[[1.0]], labels=[0], num_classes=1)
        with self.assertRaises(DomainError):
            standardize_stream(stream)


if __name__ == '__main__':
    unittest.main()
