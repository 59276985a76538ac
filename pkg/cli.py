#!/usr/bin/env python3
"""
tiltlab command runner

One method per command; each receives validated settings and the run's
reporter, and returns the headline metrics plus the tables of its summary.
"""

import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError
from tabulate import tabulate

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.attacks.advgen import AttackConfig, attack_suite
from src.attacks.poison import (
    BackdoorSpec,
    corrupt_dataset,
    corruption_threshold,
    evaluate_backdoor,
    make_backdoor_signal,
    pick_seed_image,
    select_poison_indices,
    train_with_decay,
)
from src.attacks.stego import (
    TRANSPARENT_RATIO,
    StegoCodec,
    build_codec,
    d_sweep,
    decode,
    decode_distortion,
    encode,
    k_sweep,
    reconstruction_errors,
)
from src.attacks.tilt import (
    apply_tilt_to_model,
    binary_tilt_sweep,
    logit_drift,
    mlp_pixel_backdoor,
    pixel_flip_value,
    reflection_pairs,
)
from src.dataio.exporter import export_image, save_raw
from src.dataio.loaders import load_cifar10, load_idx, load_image, load_raw, resolve_dataset, select_classes
from src.dataio.serialization import load_bundle, save_bundle
from src.linalg.pca import fit
from src.models.dataset import Dataset
from src.models.network import Mlp, TrainConfig, binary_weights
from src.network.engine import calibrate_temperature, evaluate, forward, load_model, predict, save_model, train
from src.presentation.presentation_designer import ChartDesigner
from src.report.report_generator import RunReporter
from src.utils.error_handler import (
    EXIT_OK,
    ArgumentError,
    DatasetIOError,
    TiltLabError,
    attach_run_log,
    error_handler,
    setup_logger,
)

logger = setup_logger('tiltlab.cli')

MAX_STEGO_STRENGTH = 1024


class Colors:
    """ANSI color codes for terminal output"""
    HEADER = '\033[95m'
    OKBLUE = '\033[94m'
    OKCYAN = '\033[96m'
    OKGREEN = '\033[92m'
    WARNING = '\033[93m'
    FAIL = '\033[91m'
    ENDC = '\033[0m'
    BOLD = '\033[1m'


def fan_out(seed: int, count: int) -> List[int]:
    """Derive `count` independent integer seeds from one master seed"""
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(count)]


class TiltLabCLI:
    """Main CLI class for tiltlab experiments"""

    def __init__(self, verbose: bool = False):
        self.verbose = verbose

    def _print_header(self, title):
        """Print formatted header"""
        print(f"\n{Colors.HEADER}{'=' * 50}{Colors.ENDC}")
        print(f"{Colors.HEADER}{title.center(50)}{Colors.ENDC}")
        print(f"{Colors.HEADER}{'=' * 50}{Colors.ENDC}\n")

    def _print_success(self, message):
        print(f"{Colors.OKGREEN}✅ {message}{Colors.ENDC}")

    def _print_warning(self, message):
        print(f"{Colors.WARNING}⚠️  {message}{Colors.ENDC}")

    def _print_error(self, message):
        print(f"{Colors.FAIL}❌ {message}{Colors.ENDC}", file=sys.stderr)

    def _print_info(self, message):
        print(f"{Colors.OKCYAN}ℹ️  {message}{Colors.ENDC}")

    # ------------------------------------------------------------------ run

    def run(self, config) -> int:
        """
        Execute one command inside its own run directory

        Args:
            config: ExperimentConfig with validated settings

        Returns:
            int: Exit code (errors propagate as exceptions)
        """
        settings = config.settings
        reporter = RunReporter(settings.out, settings.force)
        reporter.prepare()
        handler = attach_run_log(reporter.path('run.log'), self.verbose)
        error_handler.reset_error_counts()

        title = f"tiltlab {config.command}" + (f" {config.action}" if config.action else '')
        self._print_header(title)
        try:
            reporter.write_config(config.echo())
            command = getattr(self, f'cmd_{config.command}')
            metrics, tables = command(settings, reporter, config.action)

            errors = error_handler.get_error_summary()
            if errors:
                metrics['recorded_errors'] = sum(errors.values())
                for key, count in errors.items():
                    self._print_warning(f"{key}: {count}")
            reporter.finalize(title.split(' ', 1)[1], metrics, tables)

            print(tabulate(RunReporter._metric_rows(metrics), headers=['metric', 'value'], tablefmt='simple'))
            self._print_success(f"Results written to {reporter.output_dir}")
            return EXIT_OK
        except TiltLabError as e:
            logger.error(f"{type(e).__name__}: {e}")
            raise
        finally:
            logging.getLogger('tiltlab').removeHandler(handler)
            handler.close()

    # -------------------------------------------------------------- datasets

    def load_split(self, settings, split: str = 'train', keep_classes: bool = True) -> Dataset:
        """
        Load the training or test split named by the settings

        Explicit files win over the standard files under $TILTLAB_DATA_DIR.
        """
        if split == 'train':
            images, labels, labels_flag = settings.images, settings.labels, '--labels'
        else:
            images, labels, labels_flag = settings.test_images, settings.test_labels, '--test-labels'

        if images:
            if settings.dataset == 'raw':
                ds = load_raw(images[0])
            elif settings.dataset == 'cifar10':
                ds = load_cifar10(images, name=f'cifar10-{split}')
            else:
                if not labels:
                    raise ArgumentError(f"{labels_flag} is required with IDX image files")
                ds = load_idx(images[0], labels, name=f'{Path(images[0]).name}')
        elif settings.dataset == 'raw':
            raise ArgumentError("Raw datasets need explicit --images/--test-images files")
        else:
            ds = resolve_dataset(settings.dataset, split)

        if keep_classes and settings.classes:
            ds = select_classes(ds, settings.classes)
        self._print_info(f"{split}: {ds.n} images of shape {ds.shape} from {ds.name}")
        return ds

    def _limit(self, ds: Dataset, count) -> Dataset:
        return ds.head(count) if count else ds

    def _optional_test(self, settings):
        """
        Test split when available; missing standard test files only skip the test metrics

        Explicit --test-images files must load; their errors propagate.
        """
        if settings.test_images:
            return self.load_split(settings, 'test')
        if settings.dataset == 'raw':
            self._print_warning("No test set given; skipping test metrics")
            return None
        ds, err = error_handler.capture('load test split', self.load_split, settings, 'test', catch=DatasetIOError)
        if err is not None:
            self._print_warning(f"No test set ({err}); skipping test metrics")
        return ds

    def _train_config(self, settings, seed: int) -> TrainConfig:
        schedule = settings.lr_schedule or [(0, settings.lr)]
        try:
            return TrainConfig(
                epochs=settings.epochs,
                learning_rate_schedule=schedule,
                momentum=settings.momentum,
                batch_size=settings.batch_size,
                l2_penalty=settings.l2,
                seed=seed,
            )
        except ValidationError as e:
            raise ArgumentError(f"Invalid training parameters: {e.errors()[0]['msg']}") from e

    def _image_path(self, reporter: RunReporter, stem: str, shape) -> Path:
        return reporter.path(f"{stem}.{'pgm' if shape[2] == 1 else 'ppm'}")

    @staticmethod
    def _signed_image(v) -> np.ndarray:
        """Map a signed vector to [0, 1] with zero at mid-gray"""
        scale = np.abs(v).max()
        return np.clip(0.5 + v / (2 * scale), 0.0, 1.0) if scale > 0 else np.full(np.shape(v), 0.5)

    # -------------------------------------------------------------- commands

    def cmd_train(self, s, reporter: RunReporter, action=None) -> Tuple[dict, Dict[str, pd.DataFrame]]:
        """Train, calibrate and evaluate a classifier"""
        init_seed, shuffle_seed = fan_out(s.seed, 2)
        train_ds = self._limit(self.load_split(s, 'train'), s.count)
        test_ds = self._optional_test(s)

        model = Mlp.initialize([train_ds.m] + list(s.hidden) + [train_ds.classes], init_seed)
        history = []
        model = train(model, train_ds, self._train_config(s, shuffle_seed), history=history,
                      progress=not self.verbose)

        metrics = {'sizes': model.sizes, 'train_accuracy': evaluate(model, train_ds)}
        if test_ds is not None:
            if s.calibrate:
                model = calibrate_temperature(model, test_ds, s.confidence)
            accuracy = evaluate(model, test_ds)
            metrics.update({'test_accuracy': accuracy, 'test_error': 1.0 - accuracy})
        elif s.calibrate:
            self._print_warning("Calibrating on the training set")
            model = calibrate_temperature(model, train_ds, s.confidence)
        metrics['temperature'] = model.temperature

        reporter.register_bundle(save_model(model, reporter.output_dir / 'model.json'))
        history_frame = pd.DataFrame(history, columns=['epoch', 'learning_rate', 'loss'])
        reporter.write_frame('metrics.csv', history_frame)
        ChartDesigner(reporter.output_dir).training_loss(history_frame)
        return metrics, {}

    def cmd_tilt(self, s, reporter: RunReporter, action=None):
        """Inject a vulnerability: layer tilt, pixel backdoor or binary sweep"""
        model = load_model(s.model)
        if s.mode == 'pixel':
            return self._pixel_backdoor(s, reporter, model)

        train_ds = self._limit(self.load_split(s, 'train'), s.count)
        if s.mode == 'binary-sweep':
            return self._binary_sweep(s, reporter, model, train_ds)

        compromised, plan = apply_tilt_to_model(model, s.layer, train_ds, s.d, s.tilt_factor, s.compensate_bias)
        reporter.register_bundle(save_model(compromised, reporter.output_dir / 'model.json'))
        reporter.register_bundle(plan.save(reporter.output_dir / 'plan.json'))
        metrics = {'layer': s.layer, 'd': plan.d, 'k': plan.k, 'bias_compensated': plan.bias_compensated}

        test_ds = self._optional_test(s)
        if test_ds is not None:
            before, after = evaluate(model, test_ds), evaluate(compromised, test_ds)
            metrics.update({
                'test_accuracy_before': before,
                'test_accuracy_after': after,
                'accuracy_change_points': 100.0 * (after - before),
                'logit_drift': logit_drift(model, compromised, test_ds),
            })
        return metrics, {}

    def _pixel_backdoor(self, s, reporter: RunReporter, model: Mlp):
        compromised = mlp_pixel_backdoor(model, s.pixel, s.target, s.tilt_factor)
        reporter.register_bundle(save_model(compromised, reporter.output_dir / 'model.json'))
        metrics = {'pixel': s.pixel, 'target': s.target, 'k': s.tilt_factor, 'sizes': compromised.sizes}

        test_ds = self._optional_test(s)
        if test_ds is None:
            return metrics, {}

        X = test_ds.data.astype(np.float64)
        X[s.pixel, :] = 0.0
        drift = np.max(np.abs(forward(model, X).logits - forward(compromised, X).logits))

        sample = test_ds.head(s.count) if s.count else test_ds
        candidates = np.flatnonzero(predict(model, X[:, :sample.n]) != s.target)
        values, flipped = [], []
        for j in candidates:
            value = pixel_flip_value(model, X[:, j], s.pixel, s.target, s.tilt_factor, s.margin)
            if value > 1.0:
                values.append(value)
                flipped.append(False)
                continue
            x = X[:, j].copy()
            x[s.pixel] = value
            values.append(value)
            flipped.append(int(np.argmax(forward(compromised, x).logits)) == s.target)

        flips = pd.DataFrame({'image_index': candidates, 'flip_value': values, 'flipped': flipped})
        reporter.write_frame('flips.csv', flips)
        metrics.update({
            'zero_pixel_logit_drift': float(drift),
            'attacked': int(candidates.size),
            'flip_rate': float(np.mean(flipped)) if flipped else float('nan'),
            'median_flip_value': float(np.median(values)) if values else float('nan'),
            'max_flip_value': float(np.max(values)) if values else float('nan'),
        })
        return metrics, {}

    def _binary_sweep(self, s, reporter: RunReporter, model: Mlp, train_ds: Dataset):
        test_ds = self.load_split(s, 'test')
        basis = fit(train_ds.data)
        sweep = binary_tilt_sweep(model, basis, test_ds, s.ks)
        reporter.write_frame('sweep.csv', sweep.table)

        w, _ = binary_weights(model)
        for stem, vector in (('w', w), ('u', basis.last_component)):
            export_image(self._signed_image(vector), train_ds.shape, self._image_path(reporter, stem, train_ds.shape))

        pairs = reflection_pairs(model, basis, test_ds, s.ks)
        panels = {}
        for pair in pairs:
            reflected = np.clip(pair.reflected, 0.0, 1.0)
            stem = f'reflect_k{pair.k:g}'
            export_image(pair.image, test_ds.shape, self._image_path(reporter, f'{stem}_original', test_ds.shape))
            export_image(reflected, test_ds.shape, self._image_path(reporter, f'{stem}_reflected', test_ds.shape))
            panels[f'k={pair.k:g}'] = pair.image
            panels[f'k={pair.k:g} mirrored'] = reflected
        reflections = pd.DataFrame([{
            'k': pair.k, 'image_index': pair.image_index, 'confidence': pair.confidence, 'distance': pair.distance,
            'out_of_range': float(np.mean((pair.reflected < 0) | (pair.reflected > 1))),
        } for pair in pairs])
        reporter.write_frame('reflections.csv', reflections)

        decreasing = np.all(np.diff(sweep.distances, axis=0) < 0, axis=0) if len(s.ks) > 1 else np.ones(0, bool)
        chart = ChartDesigner(reporter.output_dir)
        chart.distance_vs_k(sweep.table)
        chart.stego_grid(panels, test_ds.shape, name='reflections.png')
        metrics = {
            'ks': list(s.ks),
            'min_agreement': float(sweep.table['agreement'].min()),
            'max_test_error': float(sweep.table['test_error'].max()),
            'strictly_decreasing_fraction': float(decreasing.mean()) if decreasing.size else float('nan'),
        }
        return metrics, {'Binary tilt sweep': sweep.table, 'Reflected images': reflections}

    def cmd_attack(self, s, reporter: RunReporter, action=None):
        """Targeted attack over the first COUNT images of a split"""
        model = load_model(s.model)
        ds = self._limit(self.load_split(s, s.split), s.count)
        cfg = AttackConfig(step_size=s.step_size, confidence_target=s.confidence,
                           max_iterations=s.max_iterations, norm=s.norm)
        target = s.target if s.target == 'next' else int(s.target)

        report = attack_suite(model, ds, target, cfg, keep_samples=s.samples, progress=not self.verbose)
        report.to_csv(reporter.path('attack.csv'))

        for index, original, adversarial in report.samples:
            export_image(original, ds.shape, self._image_path(reporter, f'sample_{index}_original', ds.shape))
            export_image(adversarial, ds.shape, self._image_path(reporter, f'sample_{index}_adversarial', ds.shape))

        frame = report.to_frame()
        ChartDesigner(reporter.output_dir).attack_histogram(frame.loc[frame['success'], 'l2'])
        metrics = {**report.summary(), 'median_norm': report.median_norm, 'temperature': model.temperature}
        return metrics, {}

    def cmd_stego(self, s, reporter: RunReporter, action: str):
        """Steganogram codec operations"""
        return getattr(self, f"_stego_{action.replace('-', '_')}")(s, reporter)

    def _fit_codec(self, s) -> Tuple[StegoCodec, Dataset]:
        train_ds = self._limit(self.load_split(s, 'train'), s.count)
        d = s.d if s.d is not None else min(MAX_STEGO_STRENGTH, train_ds.m // 2)
        return build_codec(fit(train_ds.data), d, s.k, train_ds.shape), train_ds

    def _stego_build(self, s, reporter: RunReporter):
        codec, _ = self._fit_codec(s)
        reporter.register_bundle(codec.save(reporter.output_dir / 'codec.json'))
        metrics = {'d': codec.d, 'k': codec.k, 'm': codec.dim}

        test_ds = self._optional_test(s)
        if test_ds is not None:
            ratios = decode_distortion(codec, test_ds.data)
            reporter.write_frame('distortion.csv', pd.DataFrame({'image_index': np.arange(test_ds.n),
                                                                 'distortion_ratio': ratios}))
            metrics.update({'median_distortion_ratio': float(np.median(ratios)),
                            'transparent_fraction': float(np.mean(ratios <= TRANSPARENT_RATIO))})
        return metrics, {}

    def _load_codec(self, s) -> StegoCodec:
        if not s.codec:
            raise ArgumentError("--codec is required")
        codec = StegoCodec.load(s.codec)
        if len(codec.shape) != 3:
            raise ArgumentError(f"Codec {s.codec} does not record an image shape")
        return codec

    def _stego_encode(self, s, reporter: RunReporter):
        if not (s.carrier and s.target_image):
            raise ArgumentError("--carrier and --target-image are required")
        codec = self._load_codec(s)
        carrier = load_image(s.carrier, codec.shape)
        target = load_image(s.target_image, codec.shape)

        stego = encode(codec, carrier, target)
        reporter.register_bundle(save_bundle(reporter.output_dir / 'steganogram.json', {'image': stego.unclipped},
                                             {'kind': 'steganogram', 'shape': list(codec.shape)}))
        export_image(stego.image, codec.shape, self._image_path(reporter, 'steganogram', codec.shape))

        errors = reconstruction_errors(codec, carrier, target)
        ChartDesigner(reporter.output_dir).stego_grid({
            'carrier': carrier, 'steganogram': stego.image,
            'decoded': np.clip(decode(codec, stego.image), 0.0, 1.0), 'target': target,
        }, codec.shape)
        metrics = {
            'd': codec.d, 'k': codec.k,
            'carrier_change_l2': float(np.linalg.norm(stego.image - carrier)),
            'overflow_l1': stego.overflow_l1,
            'overflow_fraction': stego.overflow_fraction,
            **{f'{path}_error': value for path, value in errors.items() if path != 'overflow_fraction'},
        }
        return metrics, {}

    def _stego_decode(self, s, reporter: RunReporter):
        if not s.image:
            raise ArgumentError("--image is required")
        codec = self._load_codec(s)
        if Path(s.image).suffix == '.json':
            arrays, _ = load_bundle(s.image)
            image = arrays['image']
        else:
            image = load_image(s.image, codec.shape)

        decoded = decode(codec, image)
        reporter.register_bundle(save_bundle(reporter.output_dir / 'decoded.json', {'image': decoded},
                                             {'kind': 'decoded', 'shape': list(codec.shape)}))
        export_image(decoded, codec.shape, self._image_path(reporter, 'decoded', codec.shape))
        return {'d': codec.d, 'k': codec.k, 'decoded_out_of_range': float(np.mean((decoded < 0) | (decoded > 1)))}, {}

    def _stego_pairs(self, s, pool: Dataset) -> Tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(fan_out(s.seed, 1)[0])
        picks = rng.choice(pool.n, size=(2, min(s.pairs, pool.n)), replace=True)
        return pool.data[:, picks[0]], pool.data[:, picks[1]]

    def _stego_sweep(self, s, reporter: RunReporter):
        codec, train_ds = self._fit_codec(s)
        pool = self._optional_test(s)
        carriers, targets = self._stego_pairs(s, train_ds if pool is None else pool)
        table = k_sweep(codec.basis, codec.d, s.ks, carriers, targets, progress=not self.verbose)
        reporter.write_frame('k_sweep.csv', table)
        return {'d': codec.d, 'pairs': int(carriers.shape[1])}, {'Reconstruction error vs k': table}

    def _stego_d_sweep(self, s, reporter: RunReporter):
        train_ds = self._limit(self.load_split(s, 'train'), s.count)
        basis = fit(train_ds.data)
        pool = self._optional_test(s)
        pool = train_ds if pool is None else pool
        carriers, targets = self._stego_pairs(s, pool)

        table = d_sweep(basis, s.ds, s.k, carriers, targets, natural=pool.data, progress=not self.verbose)
        reporter.write_frame('d_sweep.csv', table)

        chart = ChartDesigner(reporter.output_dir)
        for d in table['d'].astype(int):
            codec = build_codec(basis, d, s.k)
            stego = encode(codec, carriers[:, 0], targets[:, 0])
            chart.stego_grid({
                'carrier': carriers[:, 0], f'steganogram d={d}': stego.image,
                'decoded': np.clip(decode(codec, stego.image), 0.0, 1.0), 'target': targets[:, 0],
            }, train_ds.shape, name=f'stego_grid_d{d}.png')

        metrics = {'k': s.k, 'ds': table['d'].astype(int).tolist(), 'pairs': int(carriers.shape[1]),
                   'transparency_images': pool.name}
        return metrics, {'Reconstruction error and transparency vs d': table}

    def cmd_poison(self, s, reporter: RunReporter, action: str):
        """Backdoor poisoning steps"""
        return getattr(self, f'_poison_{action}')(s, reporter)

    def _load_spec(self, s) -> BackdoorSpec:
        if not s.spec:
            raise ArgumentError("--spec is required")
        spec = BackdoorSpec.load(s.spec)
        return spec.with_rate(s.rate) if s.rate is not None else spec

    def _poison_signal(self, s, reporter: RunReporter):
        pick_seed, = fan_out(s.seed, 1)
        raw = self.load_split(s, 'train', keep_classes=False)
        train_ds = self._limit(select_classes(raw, s.classes) if s.classes else raw, s.count)
        basis = fit(train_ds.data)

        if s.seed_image:
            seed_image, source = load_image(s.seed_image, train_ds.shape), str(s.seed_image)
        else:
            if not s.classes:
                raise ArgumentError("Pass --classes (seed images come from excluded classes) or --seed-image")
            seed_image, index = pick_seed_image(raw, s.classes, pick_seed)
            source = f'{raw.name}[{index}] label {int(raw.labels[index])}'

        p = make_backdoor_signal(seed_image, basis, s.variance_fraction)
        epsilon = corruption_threshold(p, train_ds, basis.mu)
        spec = BackdoorSpec(p, epsilon, s.target, s.rate if s.rate is not None else 0.01, source)
        reporter.register_bundle(spec.save(reporter.output_dir / 'spec.json'))
        export_image(self._signed_image(p), train_ds.shape, self._image_path(reporter, 'signal', train_ds.shape))

        projections = np.abs(p @ train_ds.data - p @ basis.mu)
        metrics = {
            'source_image': source,
            'epsilon': epsilon,
            'max_pixel_change': float(epsilon * np.abs(p).max()),
            'below_half_epsilon': float(np.mean(projections < epsilon / 2)),
            'tail_components': int(basis.tail_components(s.variance_fraction).shape[1]),
        }
        return metrics, {}

    def _poison_corrupt(self, s, reporter: RunReporter):
        spec = self._load_spec(s)
        select_seed, = fan_out(s.seed, 1)
        train_ds = self._limit(self.load_split(s, 'train'), s.count)
        indices = select_poison_indices(train_ds.n, spec.rate, select_seed)

        corrupted = corrupt_dataset(train_ds, spec, indices=indices)
        reporter.register_bundle(save_raw(corrupted, reporter.output_dir / 'corrupted.json'))
        reporter.write_frame('indices.csv', pd.DataFrame({'image_index': indices}))
        return {'rate': spec.rate, 'corrupted': int(indices.size), 'images': train_ds.n}, {}

    def _poison_train(self, s, reporter: RunReporter):
        spec = self._load_spec(s)
        init_seed, shuffle_seed, select_seed = fan_out(s.seed, 3)
        train_ds = self._limit(self.load_split(s, 'train'), s.count)
        test_ds = self._optional_test(s)

        model = Mlp.initialize([train_ds.m] + list(s.hidden) + [train_ds.classes], init_seed)
        history = []
        model = train_with_decay(model, train_ds, spec, self._train_config(s, shuffle_seed), s.decay_length,
                                 select_seed, history=history, progress=not self.verbose)
        reporter.write_frame('indices.csv',
                             pd.DataFrame({'image_index': select_poison_indices(train_ds.n, spec.rate, select_seed)}))

        metrics = {'rate': spec.rate, 'decay_epochs': s.decay_length}
        if test_ds is not None:
            if s.calibrate:
                model = calibrate_temperature(model, test_ds, s.confidence)
            metrics['clean_test_accuracy'] = evaluate(model, test_ds)
        metrics['temperature'] = model.temperature

        reporter.register_bundle(save_model(model, reporter.output_dir / 'model.json'))
        reporter.write_frame('metrics.csv', pd.DataFrame(history, columns=['epoch', 'learning_rate', 'loss']))
        return metrics, {}

    def _poison_eval(self, s, reporter: RunReporter):
        if not (s.model and s.clean_model):
            raise ArgumentError("--model and --clean-model are required")
        spec = self._load_spec(s)
        test_ds = self._limit(self.load_split(s, 'test'), s.count)
        curve = evaluate_backdoor(load_model(s.clean_model), load_model(s.model), test_ds, spec, s.ratios)

        reporter.write_frame('curve.csv', curve)
        ChartDesigner(reporter.output_dir).accuracy_vs_ratio(curve)
        at_one = curve[curve['ratio'] == 1.0]
        metrics = {'epsilon': spec.epsilon, 'target_class': spec.target_class}
        if len(at_one):
            metrics['target_fraction_at_1'] = float(at_one['target_fraction'].iloc[0])
        return metrics, {'Accuracy on the corrupted test set': curve}
