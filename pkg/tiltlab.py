#!/usr/bin/env python3
"""
tiltlab - adversarial vulnerability injection toolkit

Trains small classifiers, tilts their decision boundaries along low-variance
directions, builds steganogram decoders and poisons training data, writing
every run into its own output directory.
"""

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

# Add project root to path for imports
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from cli import Colors, TiltLabCLI
from src.attacks.poison import default_decay_epochs
from src.utils.error_handler import (
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_USAGE,
    ArgumentError,
    TiltLabError,
    exit_code_for,
)

VERSION = 'tiltlab 1.0.0'


class CommonSettings(BaseModel):
    """Dataset selection and run bookkeeping shared by every command"""

    model_config = ConfigDict(extra='forbid')

    dataset: Literal['mnist', 'cifar10', 'raw'] = 'mnist'
    images: Optional[List[str]] = None
    labels: Optional[str] = None
    test_images: Optional[List[str]] = None
    test_labels: Optional[str] = None
    classes: Optional[List[int]] = None
    count: Optional[int] = Field(None, ge=1)
    seed: int = 0
    out: str
    force: bool = False


class TrainSettings(CommonSettings):
    epochs: int = Field(50, ge=1)
    hidden: List[int] = Field(default_factory=list)
    lr: float = Field(0.01, gt=0.0)
    lr_schedule: Optional[List[Tuple[int, float]]] = None
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    batch_size: int = Field(32, ge=1)
    l2: float = Field(0.0, ge=0.0)
    confidence: float = Field(0.95, gt=0.0, lt=1.0)
    calibrate: bool = True

    @field_validator('hidden')
    @classmethod
    def _positive_sizes(cls, hidden):
        if any(h < 1 for h in hidden):
            raise ValueError("hidden layer sizes must be positive")
        return hidden


class TiltSettings(CommonSettings):
    model: str
    mode: Literal['layer', 'pixel', 'binary-sweep'] = 'layer'
    layer: int = Field(1, ge=1)
    d: int = Field(32, ge=0)
    k: Optional[float] = None
    compensate_bias: bool = True
    pixel: int = Field(0, ge=0)
    target: int = Field(0, ge=0)
    margin: float = Field(0.01, ge=0.0)
    ks: List[float] = Field(default_factory=lambda: [0.0, 25.0, 50.0, 75.0, 100.0])

    @property
    def tilt_factor(self) -> float:
        if self.k is not None:
            return self.k
        return 1000.0 if self.mode == 'pixel' else 40.0


class AttackSettings(CommonSettings):
    model: str
    split: Literal['train', 'test'] = 'test'
    count: Optional[int] = Field(1000, ge=1)
    step_size: float = Field(0.01, gt=0.0)
    confidence: float = Field(0.95, gt=0.0, lt=1.0)
    max_iterations: int = Field(10000, ge=1)
    target: str = 'next'
    norm: Literal['l2', 'linf'] = 'l2'
    samples: int = Field(4, ge=0)

    @field_validator('target')
    @classmethod
    def _target_rule(cls, target):
        if target != 'next' and not target.isdigit():
            raise ValueError("target must be 'next' or a class index")
        return target


class StegoSettings(CommonSettings):
    d: Optional[int] = Field(None, ge=0)
    k: float = 450.0
    codec: Optional[str] = None
    carrier: Optional[str] = None
    target_image: Optional[str] = None
    image: Optional[str] = None
    ks: List[float] = Field(default_factory=lambda: [50.0, 150.0, 450.0])
    ds: List[int] = Field(default_factory=lambda: [0, 64, 256, 1024])
    pairs: int = Field(20, ge=1)

    @field_validator('k')
    @classmethod
    def _nonzero(cls, k):
        if k == 0:
            raise ValueError("k must be nonzero")
        return k

    @field_validator('ds')
    @classmethod
    def _strengths(cls, ds):
        if not ds or min(ds) < 0:
            raise ValueError("ds must be non-empty and non-negative")
        return sorted(set(ds))


class PoisonSettings(TrainSettings):
    spec: Optional[str] = None
    model: Optional[str] = None
    clean_model: Optional[str] = None
    rate: Optional[float] = Field(None, gt=0.0, le=1.0)
    target: int = Field(0, ge=0)
    variance_fraction: float = Field(0.005, gt=0.0, lt=1.0)
    decay_epochs: Optional[int] = Field(None, ge=0)
    ratios: List[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    seed_image: Optional[str] = None

    @field_validator('ratios')
    @classmethod
    def _non_negative(cls, ratios):
        if any(r < 0 for r in ratios):
            raise ValueError("ratios must be non-negative")
        return ratios

    @model_validator(mode='after')
    def _decay_fits_the_epochs(self):
        if self.decay_epochs and self.decay_epochs >= self.epochs:
            raise ValueError(f"decay_epochs ({self.decay_epochs}) must be smaller than epochs ({self.epochs})")
        return self

    @property
    def decay_length(self) -> int:
        """Decay epochs, a quarter of the training epochs by default"""
        return default_decay_epochs(self.epochs) if self.decay_epochs is None else self.decay_epochs


SETTINGS = {
    'train': TrainSettings,
    'tilt': TiltSettings,
    'attack': AttackSettings,
    'stego': StegoSettings,
    'poison': PoisonSettings,
}

# keys that describe where a run goes, not what it computes
RUN_KEYS = ('out', 'force')


class ExperimentConfig:
    """Parameters of one command run: built-in defaults, then the config file, then flags"""

    def __init__(self, command: str, action: Optional[str] = None,
                 file_values: Optional[Dict[str, Any]] = None,
                 flag_values: Optional[Dict[str, Any]] = None):
        if command not in SETTINGS:
            raise ArgumentError(f"Unknown command '{command}'")
        self.command = command
        self.action = action
        self.file_values = dict(file_values or {})
        self.flag_values = dict(flag_values or {})

        file_command = self.file_values.pop('command', command)
        if file_command != command:
            raise ArgumentError(f"Config file was written by '{file_command}', not '{command}'")
        file_action = self.file_values.pop('action', None)
        self.action = self.action or file_action

        merged = {**self.file_values, **self.flag_values}
        try:
            self.settings = SETTINGS[command](**merged)
        except ValidationError as e:
            problems = '; '.join(f"{'.'.join(map(str, err['loc'])) or command}: {err['msg']}" for err in e.errors())
            raise ArgumentError(f"Invalid {command} parameters: {problems}") from e

    @staticmethod
    def load_file(path) -> Dict[str, Any]:
        """Read a JSON config file"""
        path = Path(path)
        try:
            with open(path, 'r', encoding='utf-8') as f:
                values = json.load(f)
        except FileNotFoundError as e:
            raise ArgumentError(f"Config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ArgumentError(f"Config file {path} is not valid JSON: {e}") from e
        if not isinstance(values, dict):
            raise ArgumentError(f"Config file {path} must hold a JSON object")
        return values

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> 'ExperimentConfig':
        flags = {key: value for key, value in vars(args).items()
                 if key not in ('command', 'action', 'config', 'verbose')}
        file_values = cls.load_file(args.config) if getattr(args, 'config', None) else {}
        return cls(args.command, getattr(args, 'action', None), file_values, flags)

    def echo(self) -> Dict[str, Any]:
        """Resolved configuration without the run location"""
        values = {'command': self.command}
        if self.action:
            values['action'] = self.action
        values.update(self.settings.model_dump(mode='json', exclude=set(RUN_KEYS)))
        return values


def _add_run_args(parser):
    parser.add_argument('--out', '-o', type=str, help='Output directory of the run')
    parser.add_argument('--force', action='store_true', help='Reuse a non-empty output directory')
    parser.add_argument('--seed', type=int, help='Master seed, fanned out to every random step (default: 0)')


def _add_dataset_args(parser):
    group = parser.add_argument_group('dataset')
    group.add_argument('--dataset', choices=['mnist', 'cifar10', 'raw'],
                       help='Dataset family (default: mnist, read from $TILTLAB_DATA_DIR)')
    group.add_argument('--images', nargs='+', help='Training image file(s); CIFAR-10 takes several batches')
    group.add_argument('--labels', help='Training label file (IDX)')
    group.add_argument('--test-images', nargs='+', help='Test image file(s)')
    group.add_argument('--test-labels', help='Test label file (IDX)')
    group.add_argument('--classes', type=int, nargs='+', help='Keep these classes, relabelled 0..n-1 in order')
    group.add_argument('--count', type=int, help='Use only the first COUNT images')


def _add_training_args(parser):
    group = parser.add_argument_group('training')
    group.add_argument('--epochs', type=int, help='Training epochs (default: 50)')
    group.add_argument('--hidden', type=int, nargs='*', help='Hidden layer sizes; none gives logistic regression')
    group.add_argument('--lr', type=float, help='Learning rate (default: 0.01)')
    group.add_argument('--momentum', type=float, help='SGD momentum (default: 0.9)')
    group.add_argument('--batch-size', type=int, help='Mini-batch size (default: 32)')
    group.add_argument('--l2', type=float, help='L2 penalty on weights (default: 0)')
    group.add_argument('--confidence', type=float, help='Calibrated median confidence (default: 0.95)')
    group.add_argument('--no-calibrate', dest='calibrate', action='store_false',
                       help='Keep temperature 1 after training')


def create_parser() -> argparse.ArgumentParser:
    """Create the main argument parser for the tiltlab command."""

    parser = argparse.ArgumentParser(
        prog='tiltlab',
        description='Adversarial vulnerability injection toolkit - tilting, steganograms and poisoning',
        epilog='For more information on each command, use: tiltlab <command> --help',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        argument_default=argparse.SUPPRESS,
    )
    parser.add_argument('--version', action='version', version=VERSION)
    parser.add_argument('--verbose', '-V', action='store_true', default=False, help='Log DEBUG records to the console')
    parser.add_argument('--config', '-c', type=str, default=None,
                        help='JSON config file; flags override its values')

    subparsers = parser.add_subparsers(dest='command', help='Available commands', metavar='<command>')

    # =================== TRAIN COMMAND ===================
    train_parser = subparsers.add_parser(
        'train',
        help='Train and calibrate a classifier',
        description='Train a logistic regression or ReLU MLP with SGD, then calibrate its temperature',
        epilog='''
Examples:
  tiltlab train --classes 3 7 --epochs 20 --out runs/lr37
  tiltlab train --hidden 512 512 512 --epochs 50 --out runs/mlp
        ''',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        argument_default=argparse.SUPPRESS,
    )
    _add_dataset_args(train_parser)
    _add_training_args(train_parser)
    _add_run_args(train_parser)

    # =================== TILT COMMAND ===================
    tilt_parser = subparsers.add_parser(
        'tilt',
        help='Inject a vulnerability into a trained model',
        description='Tilt a layer in its PCA bases, add a pixel backdoor, or sweep a binary tilt',
        epilog='''
Examples:
  tiltlab tilt --model runs/mlp/model.json --layer 1 --d 32 --k 40 --out runs/tilted
  tiltlab tilt --model runs/mlp/model.json --mode pixel --pixel 0 --target 0 --out runs/pixel
  tiltlab tilt --model runs/lr37/model.json --mode binary-sweep --classes 3 7 --out runs/sweep
        ''',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        argument_default=argparse.SUPPRESS,
    )
    tilt_parser.add_argument('--model', help='Serialized model (model.json)')
    tilt_parser.add_argument('--mode', choices=['layer', 'pixel', 'binary-sweep'], help='Construction (default: layer)')
    tilt_parser.add_argument('--layer', type=int, help='Layer to tilt, 1 being the first (default: 1)')
    tilt_parser.add_argument('--d', type=int, help='Number of tilted directions (default: 32)')
    tilt_parser.add_argument('--k', type=float, help='Tilting factor (default: 40, or 1000 for pixel)')
    tilt_parser.add_argument('--no-bias-compensation', dest='compensate_bias', action='store_false',
                             help='Leave the layer bias untouched')
    tilt_parser.add_argument('--pixel', type=int, help='Backdoor pixel index (default: 0)')
    tilt_parser.add_argument('--target', type=int, help='Backdoor target class (default: 0)')
    tilt_parser.add_argument('--margin', type=float, help='Logit margin of the pixel flip (default: 0.01)')
    tilt_parser.add_argument('--ks', type=float, nargs='+', help='Tilting factors of the binary sweep')
    _add_dataset_args(tilt_parser)
    _add_run_args(tilt_parser)

    # =================== ATTACK COMMAND ===================
    attack_parser = subparsers.add_parser(
        'attack',
        help='Generate targeted adversarial examples',
        description='Normalized-gradient ascent until the target class reaches the confidence target',
        epilog='''
Examples:
  tiltlab attack --model runs/tilted/model.json --count 1000 --out runs/attack
  tiltlab attack --model runs/mlp/model.json --target 3 --step-size 0.005 --out runs/attack3
        ''',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        argument_default=argparse.SUPPRESS,
    )
    attack_parser.add_argument('--model', help='Serialized model (model.json)')
    attack_parser.add_argument('--split', choices=['train', 'test'], help='Split to attack (default: test)')
    attack_parser.add_argument('--step-size', type=float, help='Step size in pixel units (default: 0.01)')
    attack_parser.add_argument('--confidence', type=float, help='Target-class confidence to reach (default: 0.95)')
    attack_parser.add_argument('--max-iterations', type=int, help='Step cap per image (default: 10000)')
    attack_parser.add_argument('--target', help="'next' for (label+1) mod C, or a class index (default: next)")
    attack_parser.add_argument('--norm', choices=['l2', 'linf'], help='Norm of the headline median (default: l2)')
    attack_parser.add_argument('--samples', type=int, help='Original/adversarial pairs exported (default: 4)')
    _add_dataset_args(attack_parser)
    _add_run_args(attack_parser)

    # =================== STEGO COMMAND ===================
    stego_parser = subparsers.add_parser(
        'stego',
        help='Build and use steganogram codecs',
        description='Tilted-identity decoder that reveals images hidden in low-variance components',
        epilog='''
Examples:
  tiltlab stego build --dataset cifar10 --d 1024 --k 450 --out runs/codec
  tiltlab stego encode --codec runs/codec/codec.json --carrier a.ppm --target-image b.ppm --out runs/enc
  tiltlab stego decode --codec runs/codec/codec.json --image runs/enc/steganogram.json --out runs/dec
  tiltlab stego d-sweep --dataset cifar10 --k 450 --ds 0 64 256 1024 --out runs/dsweep
        ''',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        argument_default=argparse.SUPPRESS,
    )
    stego_parser.add_argument('action', choices=['build', 'encode', 'decode', 'sweep', 'd-sweep'],
                              help='Codec operation')
    stego_parser.add_argument('--d', type=int, help='Decoder strength (default: min(1024, m/2))')
    stego_parser.add_argument('--k', type=float, help='Tilting factor (default: 450)')
    stego_parser.add_argument('--codec', help='Serialized codec (codec.json)')
    stego_parser.add_argument('--carrier', help='Carrier image file')
    stego_parser.add_argument('--target-image', help='Image to hide')
    stego_parser.add_argument('--image', help='Steganogram to decode (raw .json bundle or image file)')
    stego_parser.add_argument('--ks', type=float, nargs='+', help='Tilting factors of the sweep')
    stego_parser.add_argument('--pairs', type=int, help='Carrier/target pairs of the sweep (default: 20)')
    stego_parser.add_argument('--ds', type=int, nargs='+',
                              help='Strengths of the d-sweep, capped at m/2 (default: 0 64 256 1024)')
    _add_dataset_args(stego_parser)
    _add_run_args(stego_parser)

    # =================== POISON COMMAND ===================
    poison_parser = subparsers.add_parser(
        'poison',
        help='Imperceptible backdoor poisoning',
        description='Build a low-variance backdoor, corrupt training data, train and measure',
        epilog='''
Examples:
  tiltlab poison signal --classes 0 1 2 3 4 5 6 7 8 --target 0 --out runs/signal
  tiltlab poison train --spec runs/signal/spec.json --classes 0 1 2 3 4 5 6 7 8 --rate 0.01 --out runs/poisoned
  tiltlab poison eval --spec runs/signal/spec.json --clean-model runs/mlp/model.json \\
      --model runs/poisoned/model.json --classes 0 1 2 3 4 5 6 7 8 --out runs/curve
        ''',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        argument_default=argparse.SUPPRESS,
    )
    poison_parser.add_argument('action', choices=['signal', 'corrupt', 'train', 'eval'], help='Poisoning step')
    poison_parser.add_argument('--spec', help='Serialized backdoor spec (spec.json)')
    poison_parser.add_argument('--model', help='Corrupted model for eval')
    poison_parser.add_argument('--clean-model', help='Clean model for eval')
    poison_parser.add_argument('--rate', type=float, help='Poisoning rate in (0, 1]')
    poison_parser.add_argument('--target', type=int, help='Target class (default: 0)')
    poison_parser.add_argument('--variance-fraction', type=float, help='Variance share of the tail (default: 0.005)')
    poison_parser.add_argument('--decay-epochs', type=int,
                               help='Epochs of threshold decay, fewer than --epochs (default: a quarter of them)')
    poison_parser.add_argument('--ratios', type=float, nargs='+', help='Threshold ratios of the eval curve')
    poison_parser.add_argument('--seed-image', help='Image file used as backdoor seed instead of a random one')
    _add_dataset_args(poison_parser)
    _add_training_args(poison_parser)
    _add_run_args(poison_parser)

    return parser


def main(argv=None) -> int:
    """Main CLI entry point; returns the process exit code."""
    parser = create_parser()
    args = parser.parse_args(argv)

    if not getattr(args, 'command', None):
        parser.print_help()
        return EXIT_USAGE

    app = TiltLabCLI(verbose=args.verbose)
    try:
        config = ExperimentConfig.from_args(args)
        return app.run(config)
    except KeyboardInterrupt:
        app._print_warning("Operation cancelled by user")
        return EXIT_RUNTIME
    except (TiltLabError, OSError) as e:
        app._print_error(f"{type(e).__name__}: {e}")
        return exit_code_for(e)
    except Exception as e:
        app._print_error(f"Unexpected error: {type(e).__name__}: {e}")
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
