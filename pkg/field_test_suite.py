#!/usr/bin/env python3
"""
Field Testing Suite for tiltlab

End-to-end acceptance runs on MNIST and CIFAR-10. Every case drives tiltlab.py
through subprocess, then checks the metrics the runs wrote. Cases whose data
is missing under $TILTLAB_DATA_DIR are skipped.
"""

import argparse
import json
import os
import subprocess
import sys
import time
from datetime import datetime
from pathlib import Path

import numpy as np
import pandas as pd

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from cli import Colors
from src.dataio.loaders import DATA_DIR_ENV, resolve_dataset

ROOT = Path(__file__).resolve().parent
NINE_CLASSES = [str(c) for c in range(9)]


class CaseFailure(Exception):
    """Raised when a check of a case does not hold"""


class FieldTestSuite:
    """Acceptance runs against real datasets"""

    def __init__(self, work_dir, signals: int = 3, epochs: int = 20):
        self.work_dir = Path(work_dir).resolve()
        self.runs = 0
        self.signals = signals
        self.epochs = epochs
        self.results = []
        self.start_time = None

    # ----------------------------------------------------------- plumbing

    def tiltlab(self, *args, timeout=1800) -> Path:
        """Run one tiltlab command into a fresh directory and return it"""
        args = [str(a) for a in args]
        self.runs += 1
        out = self.work_dir / f'{self.runs:03d}_{args[0]}'
        cmd = [sys.executable, str(ROOT / 'tiltlab.py')] + args + ['--out', str(out), '--force']
        print(f"{Colors.OKCYAN}Command: {' '.join(cmd[1:])}{Colors.ENDC}")

        result = subprocess.run(cmd, capture_output=True, text=True, timeout=timeout, cwd=ROOT)
        if result.returncode != 0:
            raise CaseFailure(f"exit code {result.returncode}: {result.stderr.strip()[-400:]}")
        return out

    @staticmethod
    def metrics(run_dir: Path) -> dict:
        with open(run_dir / 'summary.json', 'r', encoding='utf-8') as f:
            return json.load(f)['metrics']

    @staticmethod
    def check(condition: bool, message: str):
        if not condition:
            raise CaseFailure(message)
        print(f"{Colors.OKGREEN}   ✓ {message}{Colors.ENDC}")

    @staticmethod
    def available(name: str) -> bool:
        try:
            resolve_dataset(name, 'test')
            return True
        except Exception:
            return False

    def run_case(self, name: str, dataset: str, func):
        print(f"\n{Colors.HEADER}{'=' * 60}{Colors.ENDC}")
        print(f"{Colors.HEADER}Testing: {name}{Colors.ENDC}")
        print(f"{Colors.HEADER}{'=' * 60}{Colors.ENDC}")

        start = time.time()
        if dataset and not self.available(dataset):
            print(f"{Colors.WARNING}⏭  SKIPPED{Colors.ENDC} - {dataset} not found under ${DATA_DIR_ENV}")
            self.results.append({'name': name, 'status': 'skipped', 'duration': 0.0, 'error': None})
            return

        try:
            func()
            status, error = 'passed', None
            print(f"{Colors.OKGREEN}✅ PASSED{Colors.ENDC} - {time.time() - start:.1f}s")
        except subprocess.TimeoutExpired as e:
            status, error = 'failed', f'timeout after {e.timeout}s'
            print(f"{Colors.FAIL}⏰ TIMEOUT{Colors.ENDC} - {error}")
        except CaseFailure as e:
            status, error = 'failed', str(e)
            print(f"{Colors.FAIL}❌ FAILED{Colors.ENDC} - {error}")
        except Exception as e:
            status, error = 'failed', f'{type(e).__name__}: {e}'
            print(f"{Colors.FAIL}💥 ERROR{Colors.ENDC} - {error}")

        self.results.append({'name': name, 'status': status, 'duration': time.time() - start, 'error': error})

    # -------------------------------------------------------------- cases

    def case_binary_tilt(self):
        model = self.tiltlab('train', '--classes', 3, 7, '--epochs', self.epochs, '--lr', 0.01)
        self.check(self.metrics(model)['test_error'] <= 0.04, "logistic regression 3v7 test error <= 4%")

        sweep = self.metrics(self.tiltlab('tilt', '--mode', 'binary-sweep', '--model', model / 'model.json',
                                          '--classes', 3, 7, '--ks', 0, 25, 50, 75, 100))
        self.check(sweep['min_agreement'] >= 0.999, "predictions identical across k for >= 99.9% of images")
        self.check(sweep['strictly_decreasing_fraction'] == 1.0,
                   "closed-form distance strictly decreases with k on every correct image")

    def case_reflection(self):
        result = subprocess.run([sys.executable, '-m', 'pytest', '-q', 'tests/test_tilt.py', '-k', 'reflect'],
                                capture_output=True, text=True, cwd=ROOT, timeout=300)
        self.check(result.returncode == 0, "reflection identities hold on random instances")

    def case_pixel_backdoor(self):
        model = self.tiltlab('train', '--hidden', 128, '--epochs', 10)
        run = self.tiltlab('tilt', '--mode', 'pixel', '--model', model / 'model.json', '--pixel', 0,
                           '--target', 0, '--k', 1000, '--count', 1000)
        metrics = self.metrics(run)
        self.check(metrics['zero_pixel_logit_drift'] <= 1e-6, "logits preserved when the backdoor pixel is 0")

        flips = pd.read_csv(run / 'flips.csv')
        self.check(np.mean(flips['flipped'] & (flips['flip_value'] <= 0.02)) >= 0.99,
                   ">= 99% of sampled images flip with a pixel change <= 0.02")

    def case_layer_tilt(self):
        model = self.tiltlab('train', '--hidden', 512, 512, 512, '--epochs', self.epochs)
        tilted = self.tiltlab('tilt', '--model', model / 'model.json', '--layer', 1, '--d', 32, '--k', 40)
        self.check(abs(self.metrics(tilted)['accuracy_change_points']) <= 0.5, "test accuracy changes <= 0.5 points")

        before = self.metrics(self.tiltlab('attack', '--model', model / 'model.json', '--count', 1000))
        after = self.metrics(self.tiltlab('attack', '--model', tilted / 'model.json', '--count', 1000))
        ratio = before['median_l2'] / after['median_l2']
        self.check(ratio >= 5.0, f"median adversarial L2 drops by >= 5x (measured {ratio:.1f}x)")

    def case_stego(self):
        from src.attacks.stego import build_codec, decode, decode_distortion, encode
        from src.linalg.pca import fit

        built = self.metrics(self.tiltlab('stego', 'build', '--dataset', 'cifar10', '--d', 1024, '--k', 450))
        self.check(built['transparent_fraction'] >= 0.95, "decode distortion <= 5% for >= 95% of test images")

        train, test = resolve_dataset('cifar10', 'train'), resolve_dataset('cifar10', 'test')
        codec = build_codec(fit(train.data), 1024, 450.0)
        rng = np.random.default_rng(0)
        worst_transport, worst_carrier = 0.0, 0.0
        for a, b in rng.choice(test.n, size=(100, 2)):
            x, t = test.data[:, a].astype(np.float64), test.data[:, b].astype(np.float64)
            stego = encode(codec, x, t)
            decoded = codec.basis.to_coords(decode(codec, stego.unclipped))[:codec.d]
            worst_transport = max(worst_transport, np.abs(decoded - codec.basis.to_coords(t)[:codec.d]).max())
            moved = codec.basis.to_coords(stego.unclipped)[:codec.dim - codec.d] - codec.basis.to_coords(x)[:codec.dim - codec.d]
            worst_carrier = max(worst_carrier, np.abs(moved).max())
        self.check(worst_transport <= 1e-6, f"decoded leading coefficients match the target (max {worst_transport:.2e})")
        self.check(worst_carrier <= 1e-9, f"encode leaves the first m-d coefficients unchanged (max {worst_carrier:.2e})")
        self.check(np.mean(decode_distortion(codec, test.data[:, :1000]) <= 0.05) >= 0.95,
                   "in-process transparency agrees with the CLI run")

    def case_poisoning(self):
        common = ['--classes', *NINE_CLASSES, '--hidden', 256, '--epochs', self.epochs]
        clean = self.tiltlab('train', *common)
        clean_accuracy = self.metrics(clean)['test_accuracy']

        for signal_seed in range(self.signals):
            signal = self.tiltlab('poison', 'signal', '--classes', *NINE_CLASSES, '--target', 0,
                                  '--seed', signal_seed)
            fractions = {}
            for rate in (0.01, 0.001, 0.0001):
                poisoned = self.tiltlab('poison', 'train', '--spec', signal / 'spec.json', '--rate', rate,
                                        '--decay-epochs', self.epochs // 4, *common)
                accuracy = self.metrics(poisoned)['clean_test_accuracy']
                curve_run = self.tiltlab('poison', 'eval', '--spec', signal / 'spec.json', '--classes', *NINE_CLASSES,
                                         '--clean-model', clean / 'model.json', '--model', poisoned / 'model.json')
                curve = pd.read_csv(curve_run / 'curve.csv')
                at_one = curve[curve['ratio'] == 1.0].iloc[0]
                fractions[rate] = at_one['target_fraction']

                if rate >= 0.001:
                    self.check(clean_accuracy - accuracy <= 0.01,
                               f"signal {signal_seed}, rate {rate}: clean accuracy cost <= 1 point")
                    self.check(at_one['target_fraction'] >= 0.85,
                               f"signal {signal_seed}, rate {rate}: >= 85% of corrupted images go to the target")
                    self.check(np.all(np.diff(curve['corrupted_model_acc']) <= 0.02),
                               f"signal {signal_seed}, rate {rate}: accuracy non-increasing in the ratio")
                self.check(abs(at_one['clean_model_acc'] - curve['clean_model_acc'].iloc[0]) <= 0.02,
                           f"signal {signal_seed}, rate {rate}: clean model unaffected by the signal")

            self.check(fractions[0.0001] < fractions[0.001], f"signal {signal_seed}: rate 0.01% is less effective")

    def case_numerics(self):
        result = subprocess.run([sys.executable, '-m', 'pytest', '-q', 'tests/test_pca.py', 'tests/test_network.py'],
                                capture_output=True, text=True, cwd=ROOT, timeout=600)
        self.check(result.returncode == 0, "PCA, gradient and calibration properties hold")

    # ------------------------------------------------------------- report

    def run_all(self, only=None):
        self.start_time = time.time()
        self.work_dir.mkdir(parents=True, exist_ok=True)
        cases = [
            ('binary tilt invariance', 'mnist', self.case_binary_tilt),
            ('reflection identities', None, self.case_reflection),
            ('MLP pixel backdoor', 'mnist', self.case_pixel_backdoor),
            ('generic layer tilt', 'mnist', self.case_layer_tilt),
            ('steganogram codec', 'cifar10', self.case_stego),
            ('backdoor poisoning', 'mnist', self.case_poisoning),
            ('numerical foundations', None, self.case_numerics),
        ]
        for index, (name, dataset, func) in enumerate(cases, start=1):
            if only and index not in only:
                continue
            self.run_case(f'{index}. {name}', dataset, func)
        self.generate_final_report()

    def generate_final_report(self):
        print(f"\n{Colors.HEADER}{'=' * 60}{Colors.ENDC}")
        print(f"{Colors.HEADER}{'FIELD TEST REPORT'.center(60)}{Colors.ENDC}")
        print(f"{Colors.HEADER}{'=' * 60}{Colors.ENDC}")

        counts = {status: sum(r['status'] == status for r in self.results) for status in ('passed', 'failed', 'skipped')}
        print(f"\n📊 Passed: {counts['passed']}  Failed: {counts['failed']}  Skipped: {counts['skipped']}")
        for r in self.results:
            color = {'passed': Colors.OKGREEN, 'failed': Colors.FAIL}.get(r['status'], Colors.WARNING)
            print(f"   {color}{r['status']:>7}{Colors.ENDC}  {r['name']} ({r['duration']:.1f}s)")
            if r['error']:
                print(f"            {r['error']}")

        results_file = self.work_dir / f"field_test_results_{datetime.now().strftime('%Y%m%d_%H%M%S')}.json"
        with open(results_file, 'w') as f:
            json.dump({
                'timestamp': datetime.now().isoformat(),
                'total_duration': time.time() - self.start_time if self.start_time else 0,
                'summary': counts,
                'results': self.results,
            }, f, indent=2, default=str)
        print(f"\n💾 Detailed results saved to: {results_file}")
        return counts['failed'] == 0


def main():
    """Main entry point"""
    parser = argparse.ArgumentParser(description='tiltlab field testing suite')
    parser.add_argument('--work-dir', default='field_runs', help='Directory of the runs')
    parser.add_argument('--cases', type=int, nargs='+', help='Run only these case numbers')
    parser.add_argument('--signals', type=int, default=3, help='Independent backdoor signals (default: 3)')
    parser.add_argument('--epochs', type=int, default=20, help='Training epochs per run (default: 20)')
    args = parser.parse_args()

    suite = FieldTestSuite(args.work_dir, args.signals, args.epochs)
    suite.run_all(set(args.cases) if args.cases else None)
    return 0 if all(r['status'] != 'failed' for r in suite.results) else 1


if __name__ == "__main__":
    sys.exit(main())
