import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_allclose, assert_array_equal

from hsi import data_io
from hsi.data_io import HsiCube, LabelGrid, SplitManifest
from hsi.exceptions import (
    ConfigError,
    FormatError,
    LabelRangeError,
    NumericError,
    ShapeError,
    SplitError,
    StorageError,
)


def split_of(train, test=()):
    return SplitManifest(seed=0, per_class_train=None, train=list(train), test=list(test))


class PersistenceTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_cube_round_trip_is_bitwise(self):
        cube = HsiCube(np.random.default_rng(0).standard_normal((4, 5, 6)).astype(np.float32))
        data_io.save_cube(cube, self.dir / "scene.hsc.json")
        loaded = data_io.load_cube(self.dir / "scene.hsc.json")
        assert_array_equal(loaded.values, cube.values)
        self.assertEqual(loaded.shape, (4, 5, 6))

    def test_payload_is_band_sequential(self):
        values = np.arange(2 * 3 * 2, dtype=np.float32).reshape(2, 3, 2)
        data_io.save_cube(HsiCube(values), self.dir / "scene.hsc.json")
        raw = np.frombuffer((self.dir / "scene.hsc.raw").read_bytes(), dtype="<f4")
        assert_array_equal(raw[:6], values[:, :, 0].ravel())

    def test_truncated_payload(self):
        cube = HsiCube(np.ones((4, 5, 6), dtype=np.float32))
        data_io.save_cube(cube, self.dir / "scene.hsc.json")
        raw_path = self.dir / "scene.hsc.raw"
        raw_path.write_bytes(raw_path.read_bytes()[:-4])
        with self.assertRaises(FormatError):
            data_io.load_cube(self.dir / "scene.hsc.json")

    def test_declared_dims_fix_payload_length(self):
        header = {"format_version": 1, "height": 610, "width": 340, "bands": 103, "dtype": "f32le", "order": "bsq"}
        (self.dir / "pavia.hsc.json").write_text(json.dumps(header))
        (self.dir / "pavia.hsc.raw").write_bytes(b"\0" * 16)
        with self.assertRaises(FormatError) as ctx:
            data_io.load_cube(self.dir / "pavia.hsc.json")
        self.assertIn("21362200", str(ctx.exception))

    def test_header_missing_dimension(self):
        data_io.save_cube(HsiCube(np.ones((2, 3, 4))), self.dir / "scene.hsc.json")
        header = json.loads((self.dir / "scene.hsc.json").read_text())
        del header["bands"]
        (self.dir / "scene.hsc.json").write_text(json.dumps(header))
        with self.assertRaises(FormatError) as ctx:
            data_io.load_cube(self.dir / "scene.hsc.json")
        self.assertIn("bands", str(ctx.exception))

    def test_label_header_with_non_integer_height(self):
        data_io.save_labels(LabelGrid(np.ones((2, 2))), self.dir / "gt.lbl.json")
        header = json.loads((self.dir / "gt.lbl.json").read_text())
        header["height"] = "two"
        (self.dir / "gt.lbl.json").write_text(json.dumps(header))
        with self.assertRaises(FormatError):
            data_io.load_labels(self.dir / "gt.lbl.json")

    def test_split_manifest_missing_train(self):
        labels = LabelGrid(np.arange(1, 4).repeat(4).reshape(3, 4))
        data_io.save_split(data_io.stratified_split(labels, per_class_train=2), self.dir / "run.split.json")
        document = json.loads((self.dir / "run.split.json").read_text())
        del document["train"]
        (self.dir / "run.split.json").write_text(json.dumps(document))
        with self.assertRaises(FormatError) as ctx:
            data_io.load_split(self.dir / "run.split.json")
        self.assertIn("train", str(ctx.exception))

    def test_write_under_a_regular_file(self):
        blocker = self.dir / "blocker"
        blocker.write_text("")
        with self.assertRaises(StorageError):
            data_io.save_cube(HsiCube(np.ones((1, 1, 1))), blocker / "scene.hsc.json")
        with self.assertRaises(StorageError):
            data_io.save_split(split_of([(0, 0, 1)]), blocker / "run.split.json")

    def test_unknown_format_version(self):
        data_io.save_cube(HsiCube(np.ones((1, 1, 1))), self.dir / "scene.hsc.json")
        header = json.loads((self.dir / "scene.hsc.json").read_text())
        header["format_version"] = 2
        (self.dir / "scene.hsc.json").write_text(json.dumps(header))
        with self.assertRaises(FormatError):
            data_io.load_cube(self.dir / "scene.hsc.json")

    def test_non_finite_payload(self):
        data_io.save_cube(HsiCube(np.ones((2, 2, 2))), self.dir / "scene.hsc.json")
        values = np.ones(8, dtype="<f4")
        values[3] = np.nan
        (self.dir / "scene.hsc.raw").write_bytes(values.tobytes())
        with self.assertRaises(FormatError):
            data_io.load_cube(self.dir / "scene.hsc.json")

    def test_band_stats(self):
        values = np.stack([np.arange(6.0).reshape(2, 3), -np.arange(6.0).reshape(2, 3)], axis=-1)
        low, high = HsiCube(values).band_stats
        assert_array_equal(low, [0.0, -5.0])
        assert_array_equal(high, [5.0, 0.0])

    def test_cube_rejects_non_finite_values(self):
        with self.assertRaises(NumericError):
            HsiCube(np.array([[[np.inf]]]))

    def test_labels_round_trip(self):
        labels = LabelGrid(np.array([[0, 1, 2], [2, 1, 0]]), ["Water", "Trees"])
        data_io.save_labels(labels, self.dir / "gt.lbl.json")
        loaded = data_io.load_labels(self.dir / "gt.lbl.json")
        assert_array_equal(loaded.labels, labels.labels)
        self.assertEqual(loaded.class_names, ["Water", "Trees"])
        self.assertEqual(loaded.class_name(2), "Trees")

    def test_labels_beyond_named_classes(self):
        with self.assertRaises(LabelRangeError):
            LabelGrid(np.array([[3]]), ["Water", "Trees"])

    def test_split_round_trip(self):
        labels = LabelGrid(np.arange(1, 4).repeat(10).reshape(3, 10))
        split = data_io.stratified_split(labels, per_class_train=4, seed=11)
        data_io.save_split(split, self.dir / "run.split.json")
        loaded = data_io.load_split(self.dir / "run.split.json")
        assert_array_equal(loaded.train, split.train)
        assert_array_equal(loaded.test, split.test)
        self.assertEqual((loaded.seed, loaded.per_class_train), (11, 4))


class NormalizeTests(SimpleTestCase):
    def test_train_range_maps_to_unit_interval(self):
        cube = HsiCube(np.array([[[2.0], [4.0], [6.0], [8.0]]]))
        scaled = data_io.normalize(cube, split_of([(0, 0, 1), (0, 1, 1), (0, 2, 1)], [(0, 3, 1)]))
        assert_allclose(scaled.values[0, :3, 0], [0.0, 0.5, 1.0])
        # unclamped outside the training range
        assert_allclose(scaled.values[0, 3, 0], 1.5)

    def test_constant_band_maps_to_zero(self):
        values = np.stack([np.full((2, 2), 3.0), np.arange(4.0).reshape(2, 2)], axis=-1)
        scaled = data_io.normalize(HsiCube(values), split_of([(0, 0, 1), (1, 1, 1)]))
        self.assertFalse(scaled.values[..., 0].any())

    def test_empty_training_set(self):
        with self.assertRaises(SplitError):
            data_io.normalize(HsiCube(np.ones((2, 2, 2))), split_of([]))

    def test_out_of_range_bands(self):
        values = np.stack([np.arange(4.0).reshape(2, 2), np.full((2, 2), 1.0)], axis=-1)
        cube = HsiCube(values)
        normalizer = data_io.Normalizer.fit(cube, split_of([(0, 0, 1), (0, 1, 1)]))
        assert_array_equal(normalizer.out_of_range_bands(cube), [0])
        self.assertEqual(len(data_io.Normalizer.fit(cube, split_of([(0, 0, 1), (1, 1, 1)])).out_of_range_bands(cube)), 0)

    def test_normalizer_serializes(self):
        normalizer = data_io.Normalizer.fit(HsiCube(np.arange(8.0).reshape(2, 2, 2)), split_of([(0, 0, 1), (1, 1, 1)]))
        restored = data_io.Normalizer.from_dict(json.loads(json.dumps(normalizer.to_dict())))
        assert_array_equal(restored.band_min, [0.0, 1.0])
        assert_array_equal(restored.band_max, [6.0, 7.0])


class PatchTests(SimpleTestCase):
    def setUp(self):
        self.cube = HsiCube(np.random.default_rng(0).uniform(0.5, 1.0, size=(10, 12, 4)))

    def zero_positions(self, patch):
        return int((patch[0, 0] == 0).all(axis=-1).sum())

    def test_interior_pixel_has_no_fill(self):
        patch = data_io.extract_patch(self.cube, 5, 6)
        self.assertEqual(patch.shape, (1, 1, 7, 7, 4))
        self.assertEqual(self.zero_positions(patch), 0)

    def test_corner_pixel_fill(self):
        self.assertEqual(self.zero_positions(data_io.extract_patch(self.cube, 0, 0)), 33)

    def test_center_is_pixel_spectrum(self):
        for row, col in ((0, 0), (4, 7), (9, 11)):
            patch = data_io.extract_patch(self.cube, row, col)
            assert_array_equal(patch[0, 0, 3, 3], self.cube.values[row, col])

    def test_batch_matches_single_patches(self):
        coords = np.array([[0, 0], [3, 4], [9, 11]])
        patches = data_io.extract_patches(self.cube, coords, window=5)
        for i, (row, col) in enumerate(coords):
            assert_array_equal(patches[i:i + 1], data_io.extract_patch(self.cube, row, col, window=5))

    def test_constant_cube_patches_differ_only_by_fill(self):
        cube = HsiCube(np.full((10, 12, 4), 0.7))
        interior = data_io.extract_patch(cube, 5, 6)
        assert_array_equal(interior, data_io.extract_patch(cube, 4, 3))
        for row, col in ((0, 0), (9, 5), (2, 11)):
            edge = data_io.extract_patch(cube, row, col)
            filled = (edge == 0).all(axis=-1)
            self.assertTrue(filled.any())
            assert_array_equal(edge[~filled], interior[~filled])
            self.assertFalse(edge[filled].any())

    def test_even_window(self):
        with self.assertRaises(ConfigError):
            data_io.extract_patch(self.cube, 0, 0, window=6)

    def test_center_outside_image(self):
        with self.assertRaises(ShapeError):
            data_io.extract_patch(self.cube, 10, 0)


class StratifiedSplitTests(SimpleTestCase):
    def setUp(self):
        grid = np.zeros((10, 20), dtype=np.uint8)
        grid.flat[:100] = 1
        grid.flat[100:130] = 2
        grid.flat[130:140] = 3
        self.labels = LabelGrid(grid)

    def test_fixed_count_per_class(self):
        labels = LabelGrid(np.ones((1, 6631)), ["Asphalt"])
        split = data_io.stratified_split(labels, per_class_train=200, seed=0)
        self.assertEqual(split.class_counts(), [(1, 200, 6431)])

    def test_same_seed_same_manifest(self):
        first = data_io.stratified_split(self.labels, per_class_train=5, seed=3)
        second = data_io.stratified_split(self.labels, per_class_train=5, seed=3)
        assert_array_equal(first.train, second.train)
        assert_array_equal(first.test, second.test)

    def test_different_seed_different_draw(self):
        first = data_io.stratified_split(self.labels, per_class_train=5, seed=3)
        second = data_io.stratified_split(self.labels, per_class_train=5, seed=4)
        self.assertFalse(np.array_equal(first.train, second.train))

    def test_partition_of_labeled_pixels(self):
        split = data_io.stratified_split(self.labels, per_class_train=7, seed=1)
        train = set(map(tuple, split.train[:, :2].tolist()))
        test = set(map(tuple, split.test[:, :2].tolist()))
        labeled = set(map(tuple, np.argwhere(self.labels.labels > 0).tolist()))
        self.assertFalse(train & test)
        self.assertEqual(train | test, labeled)
        self.assertEqual([n for _, n, _ in split.class_counts()], [7, 7, 7])
        data_io.check_split(self.labels, split)

    def test_whole_class_in_train(self):
        split = data_io.stratified_split(self.labels, per_class_train=10, seed=0)
        self.assertEqual(split.class_counts()[2], (3, 10, 0))

    def test_class_too_small(self):
        with self.assertRaises(SplitError) as ctx:
            data_io.stratified_split(self.labels, per_class_train=20, seed=0)
        self.assertIn("Class 3", str(ctx.exception))

    def test_percent_mode_floors_with_minimum_one(self):
        split = data_io.stratified_split(self.labels, train_percent=5, seed=0)
        self.assertEqual(split.class_counts(), [(1, 5, 95), (2, 1, 29), (3, 1, 9)])

    def test_exactly_one_mode(self):
        with self.assertRaises(ConfigError):
            data_io.stratified_split(self.labels, per_class_train=5, train_percent=5)
        with self.assertRaises(ConfigError):
            data_io.stratified_split(self.labels)

    def test_check_split_rejects_relabelled_pixel(self):
        split = data_io.stratified_split(self.labels, per_class_train=5, seed=0)
        split.train[0, 2] = 3 if split.train[0, 2] != 3 else 1
        with self.assertRaises(SplitError):
            data_io.check_split(self.labels, split)

    def test_class_counts(self):
        self.assertEqual(data_io.class_counts(self.labels), {1: 100, 2: 30, 3: 10})
