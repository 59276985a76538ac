import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from src.attacks.advgen import AttackConfig, attack_suite, generate
from src.models.dataset import Dataset
from src.models.network import Mlp, binary_model
from src.network.engine import forward
from src.utils.error_handler import ArgumentError, EmptyInputError, MaskedGradientError


@pytest.fixture
def linear_model():
    # logit difference 5 * sum(x) - 8, i.e. +2 at x = 0.5
    return binary_model(np.full(4, 5.0), -8.0)


@pytest.fixture
def flat_images():
    return Dataset(np.full((4, 5), 0.5), [0, 0, 0, 1, 1], (2, 2, 1), classes=2)


class TestGenerate:
    def test_walks_straight_to_the_target(self, linear_model):
        x = np.full(4, 0.5)
        adv, entry = generate(linear_model, x, 0)

        # each step lowers the score by 0.1; class 0 needs a score below -ln(19)
        assert entry.success
        assert entry.iterations == 50
        assert forward(linear_model, adv).probs[0] >= 0.95
        np.testing.assert_allclose(entry.l2, 0.5, rtol=1e-9)
        np.testing.assert_allclose(entry.linf, 0.25, rtol=1e-9)

    def test_already_confident(self):
        x = np.full(4, 0.5)
        adv, entry = generate(binary_model(np.full(4, 5.0)), x, 1)
        assert entry.success
        assert entry.iterations == 0
        np.testing.assert_array_equal(adv, x)

    def test_stays_inside_the_pixel_box(self):
        model = binary_model(np.array([4.0, -4.0, -1.0, 0.0]), 0.0)
        adv, entry = generate(model, np.array([0.9, 0.1, 0.99, 0.5]), 0, AttackConfig(step_size=0.05))
        assert entry.success
        assert adv.min() >= 0.0 and adv.max() <= 1.0
        assert adv[2] == 1.0

    def test_iteration_cap(self, linear_model):
        _, entry = generate(linear_model, np.full(4, 0.5), 0, AttackConfig(max_iterations=10))
        assert not entry.success
        assert entry.iterations == 10

    def test_masked_gradient(self):
        dead = Mlp([(np.zeros((3, 4)), -np.ones(3)), (np.ones((2, 3)), np.zeros(2))])
        with pytest.raises(MaskedGradientError):
            generate(dead, np.full(4, 0.5), 1)

    def test_rejects_out_of_range_images(self, linear_model):
        with pytest.raises(ArgumentError):
            generate(linear_model, np.full(4, 1.5), 0)

    def test_rejects_unknown_targets(self, linear_model):
        with pytest.raises(ArgumentError):
            generate(linear_model, np.full(4, 0.5), 2)


class TestAttackSuite:
    def test_next_rule_skips_images_already_on_target(self, linear_model, flat_images):
        # every image is predicted as class 1, which is the 'next' target of the class-0 images
        report = attack_suite(linear_model, flat_images, 'next', progress=False)

        assert [e.image_index for e in report.entries] == [3, 4]
        assert [e.target for e in report.entries] == [0, 0]
        assert report.success_rate == 1.0
        assert report.median_l2 == pytest.approx(0.5)

    def test_fixed_target_attacks_everything(self, linear_model, flat_images):
        report = attack_suite(linear_model, flat_images, 0, progress=False)
        assert len(report.entries) == 5
        assert report.target_rule == 'fixed:0'
        assert report.summary()['attacked'] == 5

    def test_masked_gradients_become_failed_entries(self, flat_images):
        dead = Mlp([(np.zeros((3, 4)), -np.ones(3)), (np.ones((2, 3)), np.zeros(2))])
        report = attack_suite(dead, flat_images, 1, progress=False)
        assert report.success_rate == 0.0
        assert all(e.error == 'MaskedGradientError' for e in report.entries)
        assert np.isnan(report.median_l2)

    def test_csv_columns(self, tmp_path, linear_model, flat_images):
        report = attack_suite(linear_model, flat_images, 'next', keep_samples=1, progress=False)
        frame = pd.read_csv(report.to_csv(tmp_path / 'attack.csv'))
        assert list(frame.columns) == ['image_index', 'true_label', 'target', 'l2', 'linf', 'iterations', 'success']
        assert len(report.samples) == 1

    def test_linf_headline(self, linear_model, flat_images):
        report = attack_suite(linear_model, flat_images, 0, AttackConfig(norm='linf'), progress=False)
        assert report.median_norm == report.median_linf

    def test_unknown_rule(self, linear_model, flat_images):
        with pytest.raises(ArgumentError):
            attack_suite(linear_model, flat_images, 'previous', progress=False)

    def test_empty_dataset(self, linear_model):
        empty = Dataset(np.zeros((4, 0)), np.zeros(0, dtype=int), (2, 2, 1), classes=2)
        with pytest.raises(EmptyInputError):
            attack_suite(linear_model, empty, progress=False)


def test_config_validation():
    with pytest.raises(ValidationError):
        AttackConfig(step_size=0.0)
    with pytest.raises(ValidationError):
        AttackConfig(confidence_target=1.0)
