import struct

import numpy as np
import pytest

from conftest import write_idx_images, write_idx_labels
from src.dataio.exporter import export_image, quantize, save_raw
from src.dataio.loaders import (
    DATA_DIR_ENV,
    load_cifar10,
    load_idx,
    load_image,
    load_raw,
    resolve_dataset,
    select_classes,
)
from src.dataio.serialization import load_bundle, save_bundle
from src.models.dataset import Dataset
from src.utils.error_handler import (
    ArgumentError,
    DatasetConsistencyError,
    DatasetFormatError,
    DatasetIOError,
    EmptyInputError,
)


def _images():
    return np.arange(3 * 2 * 2, dtype=np.uint8).reshape(3, 2, 2) * 20


class TestIdx:
    def test_columns_are_flattened_images(self, tmp_path):
        images = _images()
        ds = load_idx(write_idx_images(tmp_path / 'img', images), write_idx_labels(tmp_path / 'lbl', [4, 0, 9]))

        assert ds.shape == (2, 2, 1)
        assert ds.data.shape == (4, 3)
        np.testing.assert_allclose(ds.data[:, 1], images[1].reshape(-1) / 255.0, rtol=1e-6)
        np.testing.assert_array_equal(ds.labels, [4, 0, 9])
        assert ds.classes == 10

    def test_gzip_files(self, tmp_path):
        images = _images()
        ds = load_idx(write_idx_images(tmp_path / 'img.gz', images, compress=True),
                      write_idx_labels(tmp_path / 'lbl.gz', [1, 2, 3], compress=True))
        np.testing.assert_allclose(ds.data[:, 2], images[2].reshape(-1) / 255.0, rtol=1e-6)

    def test_bad_magic(self, tmp_path):
        labels = write_idx_labels(tmp_path / 'lbl', [0, 1, 2])
        with pytest.raises(DatasetFormatError):
            load_idx(labels, labels)

    def test_zero_magic_in_a_short_file(self, tmp_path):
        path = tmp_path / 'zero'
        path.write_bytes(bytes(8))
        with pytest.raises(DatasetFormatError):
            load_idx(path, write_idx_labels(tmp_path / 'lbl', [0]))

    def test_header_shorter_than_the_magic(self, tmp_path):
        path = tmp_path / 'stub'
        path.write_bytes(b'\x00\x00')
        with pytest.raises(DatasetIOError):
            load_idx(path, write_idx_labels(tmp_path / 'lbl', [0]))

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / 'img'
        path.write_bytes(struct.pack('>IIII', 0x00000803, 5, 2, 2) + bytes(7))
        with pytest.raises(DatasetIOError):
            load_idx(path, write_idx_labels(tmp_path / 'lbl', [0] * 5))

    def test_count_mismatch(self, tmp_path):
        with pytest.raises(DatasetConsistencyError):
            load_idx(write_idx_images(tmp_path / 'img', _images()), write_idx_labels(tmp_path / 'lbl', [0, 1]))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetIOError):
            load_idx(tmp_path / 'nope', tmp_path / 'nope')


class TestCifar:
    @staticmethod
    def _record(label, planes):
        return bytes([label]) + bytes(np.repeat(np.array(planes, dtype=np.uint8), 1024))

    def test_channel_planar_to_canonical(self, tmp_path):
        path = tmp_path / 'batch.bin'
        path.write_bytes(self._record(3, [10, 20, 30]) + self._record(7, [0, 0, 255]))
        ds = load_cifar10([path])

        assert ds.shape == (32, 32, 3)
        assert ds.data.shape == (3072, 2)
        np.testing.assert_allclose(ds.data[:6, 0], np.array([10, 20, 30, 10, 20, 30]) / 255.0, rtol=1e-6)
        np.testing.assert_array_equal(ds.labels, [3, 7])
        assert ds.classes == 10

    def test_batches_are_concatenated(self, tmp_path):
        first, second = tmp_path / 'a.bin', tmp_path / 'b.bin'
        first.write_bytes(self._record(1, [0, 0, 0]))
        second.write_bytes(self._record(2, [255, 255, 255]))
        ds = load_cifar10([first, second])
        np.testing.assert_array_equal(ds.labels, [1, 2])
        assert ds.data[:, 1].min() == 1.0

    def test_partial_record(self, tmp_path):
        path = tmp_path / 'batch.bin'
        path.write_bytes(self._record(0, [1, 2, 3])[:-1])
        with pytest.raises(DatasetFormatError):
            load_cifar10([path])

    def test_label_out_of_range(self, tmp_path):
        path = tmp_path / 'batch.bin'
        path.write_bytes(self._record(10, [1, 2, 3]))
        with pytest.raises(DatasetFormatError):
            load_cifar10([path])

    def test_no_batches(self):
        with pytest.raises(EmptyInputError):
            load_cifar10([])


class TestSelectClasses:
    def test_relabels_in_given_order(self):
        data = np.linspace(0, 1, 5)[None, :].repeat(4, axis=0)
        ds = Dataset(data, [0, 1, 2, 1, 0], (2, 2, 1))
        subset = select_classes(ds, [2, 0])

        np.testing.assert_array_equal(subset.labels, [1, 0, 1])
        np.testing.assert_allclose(subset.data[0], data[0, [0, 2, 4]])
        assert subset.classes == 2

    def test_absent_class(self, blobs):
        with pytest.raises(ArgumentError):
            select_classes(blobs, [0, 5])

    def test_duplicates(self, blobs):
        with pytest.raises(ArgumentError):
            select_classes(blobs, [1, 1])


class TestRawAndImages:
    def test_raw_dataset_round_trip(self, tmp_path, blobs):
        ds = load_raw(save_raw(blobs, tmp_path / 'blobs.json'))
        assert ds.shape == blobs.shape
        assert ds.classes == blobs.classes
        np.testing.assert_array_equal(ds.data, blobs.data.astype(np.float32))
        np.testing.assert_array_equal(ds.labels, blobs.labels)

    def test_raw_blob_too_short(self, tmp_path, blobs):
        header = save_raw(blobs, tmp_path / 'blobs.json')
        blob = header.with_suffix('.bin')
        blob.write_bytes(blob.read_bytes()[:10])
        with pytest.raises(DatasetIOError):
            load_raw(header)

    def test_quantize_rounds_half_up_and_clips(self):
        np.testing.assert_array_equal(quantize([0.5, -0.2, 1.3, 1.0 / 255.0]), [128, 0, 255, 1])

    @pytest.mark.parametrize('shape', [(3, 5, 1), (2, 4, 3)])
    def test_exported_image_reads_back_quantized(self, tmp_path, shape):
        x = np.random.default_rng(0).random(int(np.prod(shape)))
        path = export_image(x, shape, tmp_path / 'img.pnm')
        np.testing.assert_allclose(load_image(path, shape), quantize(x) / 255.0)

    def test_image_size_mismatch(self, tmp_path):
        path = export_image(np.zeros(12), (3, 4, 1), tmp_path / 'img.pgm')
        with pytest.raises(ArgumentError):
            load_image(path, (4, 3, 1))


class TestResolveDataset:
    def test_finds_mnist_files_under_data_dir(self, tmp_path, monkeypatch):
        root = tmp_path / 'mnist'
        root.mkdir()
        write_idx_images(root / 't10k-images-idx3-ubyte.gz', _images(), compress=True)
        write_idx_labels(root / 't10k-labels-idx1-ubyte.gz', [1, 2, 3], compress=True)
        monkeypatch.setenv(DATA_DIR_ENV, str(tmp_path))

        ds = resolve_dataset('mnist', 'test')
        assert ds.n == 3
        assert ds.name == 'mnist-test'

    def test_missing_files(self, tmp_path):
        with pytest.raises(DatasetIOError):
            resolve_dataset('cifar10', 'train', root=tmp_path)

    def test_unset_data_dir(self, monkeypatch):
        monkeypatch.delenv(DATA_DIR_ENV, raising=False)
        with pytest.raises(DatasetIOError):
            resolve_dataset('mnist')


class TestBundles:
    def test_arrays_and_metadata(self, tmp_path):
        arrays = {'W': np.arange(6.0).reshape(2, 3) / 4, 'idx': np.array([3, 1, 2])}
        path = save_bundle(tmp_path / 'thing', arrays, {'kind': 'demo', 'k': 2.5})
        loaded, meta = load_bundle(path)

        assert path.name == 'thing.json'
        assert meta == {'kind': 'demo', 'k': 2.5}
        np.testing.assert_array_equal(loaded['W'], arrays['W'])
        np.testing.assert_array_equal(loaded['idx'], arrays['idx'])
        assert loaded['idx'].dtype == np.int64

    def test_foreign_json(self, tmp_path):
        path = tmp_path / 'other.json'
        path.write_text('{"format": "something-else", "arrays": []}')
        with pytest.raises(DatasetFormatError):
            load_bundle(path)


class TestDataset:
    def test_is_read_only(self, blobs):
        with pytest.raises(ValueError):
            blobs.data[0, 0] = 0.5

    def test_rejects_out_of_range_pixels(self):
        with pytest.raises(ArgumentError):
            Dataset(np.full((4, 2), 1.5), [0, 1], (2, 2, 1))

    def test_label_count_must_match(self):
        with pytest.raises(DatasetConsistencyError):
            Dataset(np.zeros((4, 2)), [0, 1, 1], (2, 2, 1))

    def test_take_and_head(self, blobs):
        assert blobs.head(5).n == 5
        subset = blobs.take([3, 1])
        np.testing.assert_array_equal(subset.labels, blobs.labels[[3, 1]])
        assert subset.classes == blobs.classes
