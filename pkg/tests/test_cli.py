import json

import pandas as pd
import pytest

from src.dataio.exporter import export_image
from src.utils.error_handler import EXIT_OK, EXIT_USAGE, ArgumentError
from tiltlab import ExperimentConfig, create_parser, main


@pytest.fixture
def data_args(idx_dataset):
    return ['--images', idx_dataset['images'], '--labels', idx_dataset['labels'],
            '--test-images', idx_dataset['test_images'], '--test-labels', idx_dataset['test_labels']]


@pytest.fixture
def trained(tmp_path, data_args):
    out = tmp_path / 'mlp'
    code = main(['train', *data_args, '--hidden', '4', '--epochs', '5', '--lr', '0.1', '--batch-size', '8',
                 '--out', str(out)])
    assert code == EXIT_OK
    return out


def metrics_of(run_dir):
    with open(run_dir / 'summary.json', 'r', encoding='utf-8') as f:
        return json.load(f)['metrics']


class TestTrain:
    def test_run_directory(self, trained):
        for name in ('config.json', 'run.log', 'model.json', 'model.bin', 'metrics.csv', 'summary.json', 'summary.md'):
            assert (trained / name).exists(), name
        metrics = metrics_of(trained)
        assert metrics['sizes'] == [16, 4, 3]
        assert 0.0 <= metrics['test_accuracy'] <= 1.0
        assert len(pd.read_csv(trained / 'metrics.csv')) == 5

    def test_summary_lists_the_model_blob(self, trained):
        files = json.loads((trained / 'summary.json').read_text())['files']
        assert {'model.json', 'model.bin', 'metrics.csv'} <= set(files)

    def test_config_echo_reproduces_the_run(self, tmp_path, trained):
        config = json.loads((trained / 'config.json').read_text())
        assert config['command'] == 'train'
        assert 'out' not in config and 'force' not in config

        again = tmp_path / 'again'
        assert main(['--config', str(trained / 'config.json'), 'train', '--out', str(again)]) == EXIT_OK
        assert (again / 'model.bin').read_bytes() == (trained / 'model.bin').read_bytes()

    def test_refuses_a_non_empty_output_directory(self, tmp_path, data_args):
        out = tmp_path / 'busy'
        out.mkdir()
        (out / 'keep.txt').write_text('x')
        assert main(['train', *data_args, '--epochs', '1', '--out', str(out)]) == EXIT_USAGE
        assert main(['train', *data_args, '--epochs', '1', '--out', str(out), '--force']) == EXIT_OK

    def test_missing_dataset_file(self, tmp_path):
        code = main(['train', '--images', str(tmp_path / 'none'), '--labels', str(tmp_path / 'none'),
                     '--out', str(tmp_path / 'run')])
        assert code == EXIT_USAGE

    def test_invalid_parameter(self, tmp_path, data_args):
        assert main(['train', *data_args, '--epochs', '0', '--out', str(tmp_path / 'run')]) == EXIT_USAGE

    def test_unreadable_test_files_fail_the_run(self, tmp_path, idx_dataset):
        broken = tmp_path / 'broken-images'
        broken.write_bytes(bytes(8))
        for test_images in (tmp_path / 'missing', broken):
            code = main(['train', '--images', idx_dataset['images'], '--labels', idx_dataset['labels'],
                         '--test-images', str(test_images), '--test-labels', idx_dataset['test_labels'],
                         '--epochs', '1', '--out', str(tmp_path / f'run-{test_images.name}')])
            assert code == EXIT_USAGE

    def test_missing_standard_test_split_is_skipped(self, tmp_path, idx_dataset, monkeypatch):
        monkeypatch.setenv('TILTLAB_DATA_DIR', str(tmp_path / 'empty'))
        out = tmp_path / 'run'
        assert main(['train', '--images', idx_dataset['images'], '--labels', idx_dataset['labels'],
                     '--epochs', '1', '--no-calibrate', '--out', str(out)]) == EXIT_OK
        assert 'test_accuracy' not in metrics_of(out)


class TestTilt:
    def test_zero_directions_are_byte_identical(self, tmp_path, trained, data_args):
        out = tmp_path / 'tilted'
        code = main(['tilt', '--model', str(trained / 'model.json'), '--d', '0', *data_args, '--out', str(out)])
        assert code == EXIT_OK
        assert (out / 'model.bin').read_bytes() == (trained / 'model.bin').read_bytes()
        assert metrics_of(out)['logit_drift'] == 0.0

    def test_layer_tilt(self, tmp_path, trained, data_args):
        out = tmp_path / 'tilted'
        code = main(['tilt', '--model', str(trained / 'model.json'), '--layer', '1', '--d', '2', '--k', '5',
                     *data_args, '--out', str(out)])
        assert code == EXIT_OK
        assert (out / 'plan.json').exists()
        assert metrics_of(out)['d'] == 2

    def test_pixel_backdoor(self, tmp_path, trained, data_args):
        out = tmp_path / 'pixel'
        code = main(['tilt', '--mode', 'pixel', '--model', str(trained / 'model.json'), '--pixel', '0',
                     '--target', '1', *data_args, '--out', str(out)])
        assert code == EXIT_OK
        assert metrics_of(out)['zero_pixel_logit_drift'] <= 1e-9
        assert metrics_of(out)['sizes'] == [16, 5, 3]
        assert (out / 'flips.csv').exists()

    def test_pixel_backdoor_needs_no_training_images(self, tmp_path, trained, idx_dataset, monkeypatch):
        monkeypatch.delenv('TILTLAB_DATA_DIR', raising=False)
        out = tmp_path / 'pixel'
        code = main(['tilt', '--mode', 'pixel', '--model', str(trained / 'model.json'), '--pixel', '0',
                     '--target', '1', '--test-images', idx_dataset['test_images'],
                     '--test-labels', idx_dataset['test_labels'], '--out', str(out)])
        assert code == EXIT_OK
        assert (out / 'flips.csv').exists()

    def test_binary_sweep_exports(self, tmp_path, data_args):
        linear = tmp_path / 'linear'
        assert main(['train', *data_args, '--classes', '0', '1', '--epochs', '5', '--lr', '0.1',
                     '--batch-size', '8', '--out', str(linear)]) == EXIT_OK

        out = tmp_path / 'sweep'
        code = main(['tilt', '--mode', 'binary-sweep', '--model', str(linear / 'model.json'), '--classes', '0', '1',
                     '--ks', '0', '1', *data_args, '--out', str(out)])
        assert code == EXIT_OK
        for name in ('sweep.csv', 'w.pgm', 'u.pgm', 'reflections.csv',
                     'reflect_k0_original.pgm', 'reflect_k0_reflected.pgm',
                     'reflect_k1_original.pgm', 'reflect_k1_reflected.pgm'):
            assert (out / name).exists(), name
        reflections = pd.read_csv(out / 'reflections.csv')
        assert list(reflections['k']) == [0.0, 1.0]
        assert reflections['confidence'].between(0.5, 1.0).all()

    def test_layer_out_of_range(self, tmp_path, trained, data_args):
        code = main(['tilt', '--model', str(trained / 'model.json'), '--layer', '3', *data_args,
                     '--out', str(tmp_path / 'bad')])
        assert code == EXIT_USAGE


class TestAttack:
    def test_attack_csv(self, tmp_path, trained, data_args):
        out = tmp_path / 'attack'
        code = main(['attack', '--model', str(trained / 'model.json'), '--count', '5', '--max-iterations', '100',
                     *data_args, '--out', str(out)])
        assert code == EXIT_OK
        frame = pd.read_csv(out / 'attack.csv')
        assert len(frame) <= 5
        assert 'success_rate' in metrics_of(out)


class TestStego:
    def test_build_encode_decode(self, tmp_path, data_args, idx_dataset):
        codec_dir = tmp_path / 'codec'
        assert main(['stego', 'build', *data_args, '--out', str(codec_dir)]) == EXIT_OK
        assert metrics_of(codec_dir)['d'] == 8
        assert 'transparent_fraction' in metrics_of(codec_dir)

        images, _ = idx_dataset['arrays']
        carrier = export_image(images[0].reshape(-1) / 255.0, (4, 4, 1), tmp_path / 'carrier.pgm')
        target = export_image(images[1].reshape(-1) / 255.0, (4, 4, 1), tmp_path / 'target.pgm')

        encoded = tmp_path / 'encoded'
        assert main(['stego', 'encode', '--codec', str(codec_dir / 'codec.json'), '--carrier', str(carrier),
                     '--target-image', str(target), '--out', str(encoded)]) == EXIT_OK
        assert metrics_of(encoded)['raw_error'] < 1e-4

        decoded = tmp_path / 'decoded'
        assert main(['stego', 'decode', '--codec', str(codec_dir / 'codec.json'),
                     '--image', str(encoded / 'steganogram.json'), '--out', str(decoded)]) == EXIT_OK
        assert (decoded / 'decoded.pgm').exists()

    def test_encode_needs_images(self, tmp_path):
        assert main(['stego', 'encode', '--out', str(tmp_path / 'enc')]) == EXIT_USAGE

    def test_d_sweep(self, tmp_path, data_args):
        out = tmp_path / 'dsweep'
        assert main(['stego', 'd-sweep', *data_args, '--k', '5', '--ds', '0', '2', '100', '--pairs', '3',
                     '--out', str(out)]) == EXIT_OK
        table = pd.read_csv(out / 'd_sweep.csv')
        assert list(table['d']) == [0, 2, 8]
        assert table.loc[0, 'transparent_fraction'] == 1.0
        assert metrics_of(out)['ds'] == [0, 2, 8]
        for d in (0, 2, 8):
            assert (out / f'stego_grid_d{d}.png').exists()


class TestPoison:
    def test_signal_train_eval(self, tmp_path, data_args, trained):
        signal = tmp_path / 'signal'
        assert main(['poison', 'signal', *data_args, '--classes', '0', '1', '--target', '0',
                     '--out', str(signal)]) == EXIT_OK
        assert metrics_of(signal)['epsilon'] > 0

        common = [*data_args, '--classes', '0', '1', '--hidden', '4', '--epochs', '2', '--lr', '0.1']
        poisoned, clean = tmp_path / 'poisoned', tmp_path / 'clean'
        assert main(['poison', 'train', '--spec', str(signal / 'spec.json'), '--rate', '0.1',
                     '--decay-epochs', '1', *common, '--out', str(poisoned)]) == EXIT_OK
        assert metrics_of(poisoned)['rate'] == pytest.approx(0.1)
        assert len(pd.read_csv(poisoned / 'indices.csv')) == 4
        assert main(['train', *common, '--out', str(clean)]) == EXIT_OK

        curve_dir = tmp_path / 'curve'
        assert main(['poison', 'eval', '--spec', str(signal / 'spec.json'), '--model', str(poisoned / 'model.json'),
                     '--clean-model', str(clean / 'model.json'), '--classes', '0', '1', *data_args,
                     '--out', str(curve_dir)]) == EXIT_OK
        curve = pd.read_csv(curve_dir / 'curve.csv')
        assert list(curve['ratio']) == [0.0, 0.25, 0.5, 0.75, 1.0]

    def test_corrupt_writes_a_raw_dataset(self, tmp_path, data_args):
        signal = tmp_path / 'signal'
        assert main(['poison', 'signal', *data_args, '--classes', '0', '1', '--out', str(signal)]) == EXIT_OK
        out = tmp_path / 'corrupt'
        assert main(['poison', 'corrupt', '--spec', str(signal / 'spec.json'), '--rate', '0.25', *data_args,
                     '--classes', '0', '1', '--out', str(out)]) == EXIT_OK
        assert metrics_of(out)['corrupted'] == 10
        assert (out / 'corrupted.json').exists()

    def test_signal_needs_a_seed_source(self, tmp_path, data_args):
        assert main(['poison', 'signal', *data_args, '--out', str(tmp_path / 'signal')]) == EXIT_USAGE


class TestParsing:
    def test_no_command_prints_help(self, capsys):
        assert main([]) == EXIT_USAGE
        assert 'usage' in capsys.readouterr().out

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            create_parser().parse_args(['explode'])

    def test_config_written_by_another_command(self):
        with pytest.raises(ArgumentError):
            ExperimentConfig('train', file_values={'command': 'attack'}, flag_values={'out': 'x'})

    def test_unknown_config_key(self):
        with pytest.raises(ArgumentError):
            ExperimentConfig('train', file_values={'epochz': 3}, flag_values={'out': 'x'})

    def test_flags_override_the_file(self):
        config = ExperimentConfig('train', file_values={'epochs': 3, 'lr': 0.5}, flag_values={'epochs': 7, 'out': 'x'})
        assert (config.settings.epochs, config.settings.lr) == (7, 0.5)

    def test_pixel_mode_default_factor(self):
        config = ExperimentConfig('tilt', flag_values={'model': 'm.json', 'mode': 'pixel', 'out': 'x'})
        assert config.settings.tilt_factor == 1000.0

    def test_decay_must_end_before_training_does(self):
        with pytest.raises(ArgumentError):
            ExperimentConfig('poison', 'train', flag_values={'epochs': 4, 'decay_epochs': 4, 'out': 'x'})

    def test_default_decay_length(self):
        config = ExperimentConfig('poison', 'train', flag_values={'epochs': 40, 'out': 'x'})
        assert config.settings.decay_length == 10
        config = ExperimentConfig('poison', 'train', flag_values={'epochs': 40, 'decay_epochs': 0, 'out': 'x'})
        assert config.settings.decay_length == 0
