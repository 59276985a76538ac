from pathlib import Path

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

from src.dataio.exporter import quantize
from src.utils.error_handler import handle_gracefully, setup_logger

logger = setup_logger('tiltlab.presentation')


class ChartDesigner:
    """
    Renders the PNG charts of a run

    Chart failures are logged and skipped; they never fail a command.
    """

    def __init__(self, output_dir):
        """
        Args:
            output_dir: Directory the charts are written to
        """
        self.output_dir = Path(output_dir)

    def _save(self, name: str) -> str:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        output_file = self.output_dir / name
        plt.tight_layout()
        plt.savefig(output_file, dpi=100, bbox_inches='tight')
        plt.close()
        logger.debug(f"Saved chart {output_file}")
        return str(output_file)

    @handle_gracefully('attack histogram chart')
    def attack_histogram(self, l2_norms, title: str = 'Adversarial perturbation size', name: str = 'attack_l2.png'):
        """Histogram of the L2 norms of successful attacks"""
        l2_norms = np.asarray(l2_norms, dtype=np.float64)
        if l2_norms.size == 0:
            return None

        plt.figure(figsize=(8, 5))
        plt.hist(l2_norms, bins=min(40, max(5, l2_norms.size // 10)), color='#4a6fa5', edgecolor='white')
        plt.axvline(np.median(l2_norms), color='#c0504d', linestyle='--', linewidth=2,
                    label=f'median {np.median(l2_norms):.3g}')
        plt.xlabel('L2 norm of the perturbation', fontsize=12)
        plt.ylabel('Images', fontsize=12)
        plt.title(title, fontsize=14, fontweight='bold')
        plt.legend()
        plt.grid(axis='y', linestyle='--', alpha=0.7)
        return self._save(name)

    @handle_gracefully('accuracy vs ratio chart')
    def accuracy_vs_ratio(self, curve, name: str = 'backdoor_curve.png'):
        """Clean and corrupted model accuracies on the corrupted test set"""
        plt.figure(figsize=(8, 5))
        plt.plot(curve['ratio'], curve['clean_model_acc'], marker='o', linestyle='-', color='#4a6fa5',
                 linewidth=2, markersize=8, label='clean model')
        plt.plot(curve['ratio'], curve['corrupted_model_acc'], marker='s', linestyle='-', color='#c0504d',
                 linewidth=2, markersize=8, label='corrupted model')
        plt.xlabel('Corruption threshold (ratio of training threshold)', fontsize=12)
        plt.ylabel('Accuracy', fontsize=12)
        plt.ylim(0, 1.05)
        plt.title('Accuracy on the corrupted test set', fontsize=14, fontweight='bold')
        plt.legend()
        plt.grid(linestyle='--', alpha=0.7)
        return self._save(name)

    @handle_gracefully('distance vs k chart')
    def distance_vs_k(self, table, name: str = 'binary_sweep.png'):
        """Median closed-form adversarial distance and test error against the tilting factor"""
        fig, ax = plt.subplots(figsize=(8, 5))
        ax.plot(table['k'], table['median_distance'], marker='o', color='#4a6fa5', linewidth=2,
                label='median distance')
        ax.set_xlabel('Tilting factor k', fontsize=12)
        ax.set_ylabel('Median adversarial distance', fontsize=12)
        ax.grid(linestyle='--', alpha=0.7)

        error_ax = ax.twinx()
        error_ax.plot(table['k'], 100 * table['test_error'], marker='s', color='#5b8c5a', linewidth=2,
                      label='test error')
        error_ax.set_ylabel('Test error (%)', fontsize=12)
        error_ax.set_ylim(0, max(5.0, 100 * float(table['test_error'].max()) * 1.5))

        plt.title('Boundary tilting', fontsize=14, fontweight='bold')
        fig.legend(loc='upper right')
        return self._save(name)

    @handle_gracefully('steganogram grid chart')
    def stego_grid(self, images: dict, shape, name: str = 'stego_grid.png'):
        """
        Side-by-side panels, e.g. carrier, steganogram, decoded and target

        Args:
            images: Title to image vector
            shape: (height, width, channels)
        """
        height, width, channels = shape
        fig, axes = plt.subplots(1, len(images), figsize=(3 * len(images), 3.4))
        for ax, (title, vector) in zip(np.atleast_1d(axes), images.items()):
            pixels = quantize(vector).reshape(height, width, channels)
            if channels == 1:
                ax.imshow(pixels[:, :, 0], cmap='gray', vmin=0, vmax=255)
            else:
                ax.imshow(pixels)
            ax.set_title(title, fontsize=11)
            ax.axis('off')
        return self._save(name)

    @handle_gracefully('training loss chart')
    def training_loss(self, history, name: str = 'training_loss.png'):
        """Per-epoch loss curve"""
        if not len(history):
            return None
        plt.figure(figsize=(8, 5))
        plt.plot(history['epoch'], history['loss'], marker='o', linestyle='-', color='#4a6fa5',
                 linewidth=2, markersize=4)
        plt.xlabel('Epoch', fontsize=12)
        plt.ylabel('Cross-entropy', fontsize=12)
        plt.title('Training loss', fontsize=14, fontweight='bold')
        plt.grid(linestyle='--', alpha=0.7)
        return self._save(name)
