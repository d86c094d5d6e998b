"""Feature-shaping loss: hand fixtures, gradients, invariances, schedule."""

import numpy as np
import pytest

from superosr import nn
from superosr.errors import ConfigError, InputError, StratificationError
from superosr.loss import (
    LossConfig,
    boundary_distance,
    boundary_radius,
    inter_separation,
    intra_compactness,
    loss_schedule,
    superlative_loss,
)
from superosr.representation import compute_mavs, fit_pca_basis, mav_matrix


def proj(rows):
    return np.array(rows, dtype=float)


class TestBoundaryRadius:
    def test_hand_fixture_spread_times_gamma(self):
        samples = proj([[-2.0, 0, 0], [0.0, 0, 0], [3.0, 0, 0]])
        assert boundary_radius(samples, gamma=2.0) == 10.0

    def test_identical_samples_zero_spread(self):
        samples = proj([[1.5, 2.0, 0]] * 4)
        assert boundary_radius(samples, gamma=3.0) == 0.0

    def test_linear_in_gamma(self):
        samples = proj([[0.0, 0, 0], [4.0, 1, 1]])
        assert boundary_radius(samples, 3.0) == 2.0 * boundary_radius(samples, 1.5)

    def test_empty_input(self):
        with pytest.raises(InputError):
            boundary_radius(np.empty((0, 3)), 2.0)


class TestBoundaryDistance:
    def test_point_on_shell_is_zero(self):
        assert boundary_distance(proj([[10.0, 0, 0]]), 10.0, "shell-squared") == 0.0

    def test_rotational_symmetry_on_shell(self):
        assert boundary_distance(proj([[6.0, 8.0, 0]]), 10.0, "shell-squared") == 0.0

    def test_literal_form_hand_fixture(self):
        # norm^2 of (1,2,2) is 9; 5 - 9 = -4
        assert boundary_distance(proj([[1.0, 2.0, 2.0]]), 5.0, "literal") == -4.0

    def test_unknown_form_rejected(self):
        with pytest.raises(ConfigError):
            boundary_distance(proj([[1, 0, 0]]), 1.0, "other")


class TestInterSeparation:
    FIX = proj([[0, 0, 0], [3.0, 0, 0], [0, 4.0, 0]])  # pair dists^2: 9, 16, 25

    def test_min_pairwise_hand_enumeration(self):
        assert inter_separation(self.FIX, "min-pairwise") == 9.0

    def test_literal_max_hand_enumeration(self):
        assert inter_separation(self.FIX, "literal-max") == 25.0

    def test_coincident_points_zero_both_forms(self):
        pts = proj([[1, 1, 1], [1, 1, 1]])
        assert inter_separation(pts, "min-pairwise") == 0.0
        assert inter_separation(pts, "literal-max") == 0.0

    def test_translation_invariance(self):
        shift = np.array([5.0, -2.0, 1.0])
        for form in ("min-pairwise", "literal-max"):
            assert inter_separation(self.FIX, form) == pytest.approx(
                inter_separation(self.FIX + shift, form), rel=1e-12
            )

    def test_needs_two_points(self):
        with pytest.raises(InputError):
            inter_separation(proj([[0, 0, 0]]))


class TestIntraCompactness:
    def test_samples_at_their_means_is_zero(self):
        m = proj([[1, 0, 0], [0, 1, 0]])
        samples = proj([[1, 0, 0], [0, 1, 0], [1, 0, 0]])
        assert intra_compactness(m, samples, [0, 1, 0]) == 0.0

    def test_hand_fixture(self):
        m = proj([[1.0, 0, 0]])
        samples = proj([[0.0, 0, 0], [2.0, 0, 0]])
        assert intra_compactness(m, samples, [0, 0]) == 2.0

    def test_additivity_over_class_partition(self):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((3, 3))
        samples = rng.standard_normal((12, 3))
        labels = np.repeat([0, 1, 2], 4)
        total = intra_compactness(m, samples, labels)
        parts = sum(
            intra_compactness(m, samples[labels == c], labels[labels == c])
            for c in range(3)
        )
        assert total == pytest.approx(parts, rel=1e-12)

    def test_unknown_class_id_rejected(self):
        with pytest.raises(InputError):
            intra_compactness(proj([[0, 0, 0]]), proj([[1, 1, 1]]), [1])


def random_batch(seed=7, d=8, k=6, per=4, scale=0.5):
    rng = np.random.default_rng(seed)
    avs = scale * rng.standard_normal((k * per, d))
    labels = np.repeat(np.arange(k), per)
    return avs, labels


class TestSuperlativeLoss:
    def test_term_composition_identity_is_exact(self):
        avs, labels = random_batch()
        report = superlative_loss(avs, labels, LossConfig())
        assert report.l_s == report.bd - report.is_ + report.ic  # bit-exact
        assert 4.0 - 9.0 + 2.0 == -3.0  # the composition rule itself

    def test_constructed_optimum_on_external_shell(self):
        # four classes at coincident shell points: IC = 0, BD = 0, L = -IS
        radius = 2.0
        pts = radius * np.array(
            [[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0]]
        )
        avs = np.repeat(pts, 2, axis=0)
        labels = np.repeat(np.arange(4), 2)
        basis = fit_pca_basis(mav_matrix(compute_mavs(avs, labels, 4)))
        report = superlative_loss(
            avs, labels, LossConfig(gamma=1.5), basis=basis, radius=radius
        )
        assert report.ic == pytest.approx(0.0, abs=1e-18)
        assert report.bd == pytest.approx(0.0, abs=1e-12)
        assert report.l_s == pytest.approx(-report.is_, rel=1e-12)

    @pytest.mark.parametrize("bd_form", ["shell-squared", "literal"])
    @pytest.mark.parametrize("is_form", ["min-pairwise", "literal-max"])
    def test_gradient_matches_finite_differences(self, bd_form, is_form):
        avs, labels = random_batch()
        cfg = LossConfig(gamma=1.25, bd_form=bd_form, is_form=is_form)
        basis = fit_pca_basis(mav_matrix(compute_mavs(avs, labels, 6)))
        report = superlative_loss(avs, labels, cfg, basis=basis)
        frozen_r = report.radius

        def loss_fn():
            return superlative_loss(avs, labels, cfg, basis=basis, radius=frozen_r).l_s

        worst = nn.finite_diff_check(loss_fn, [avs], [report.grad_avs], 3e-5)
        assert worst < 1e-4

    def test_gradients_finite_and_shaped(self):
        avs, labels = random_batch(seed=3, d=16)
        report = superlative_loss(avs, labels, LossConfig())
        assert report.grad_avs.shape == avs.shape
        assert np.all(np.isfinite(report.grad_avs))

    def test_rigid_motion_invariance(self):
        avs, labels = random_batch(seed=11, d=8)
        rng = np.random.default_rng(5)
        q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
        cfg = LossConfig(gamma=1.5)
        a = superlative_loss(avs, labels, cfg)
        b = superlative_loss(avs @ q.T, labels, cfg)
        assert a.bd == pytest.approx(b.bd, rel=1e-7)
        assert a.is_ == pytest.approx(b.is_, rel=1e-7)
        assert a.ic == pytest.approx(b.ic, rel=1e-7)
        assert a.l_s == pytest.approx(b.l_s, rel=1e-7)

    def test_descent_on_free_activation_matrix(self):
        avs, labels = random_batch(seed=13, d=8)
        cfg = LossConfig(gamma=1.5)
        lr = 1e-3
        current = superlative_loss(avs, labels, cfg)
        initial = current.l_s
        for _ in range(50):
            trial = avs - lr * current.grad_avs
            candidate = superlative_loss(trial, labels, cfg)
            if candidate.l_s >= current.l_s:
                lr /= 2.0
                continue
            avs = trial
            current = candidate
        assert current.l_s < initial

    def test_missing_class_is_stratification_error(self):
        avs, labels = random_batch()
        with pytest.raises(StratificationError):
            superlative_loss(avs, labels, LossConfig(), n_classes=7)

    def test_narrow_activations_rejected(self):
        with pytest.raises(InputError):
            superlative_loss(np.ones((4, 2)), [0, 0, 1, 1], LossConfig())

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            LossConfig(gamma=1.0)
        with pytest.raises(ConfigError):
            LossConfig(bd_form="nope")
        with pytest.raises(ConfigError):
            LossConfig(switch_iteration=-1)
        with pytest.raises(ConfigError):
            LossConfig(companion_loss="mse")


class TestLossSchedule:
    def test_feature_loss_first_under_companion(self):
        cfg = LossConfig(switch_iteration=1500, companion_loss="cross-entropy")
        assert loss_schedule(0, cfg) == "ls"
        assert loss_schedule(1499, cfg) == "ls"

    def test_switch_boundary_belongs_to_companion(self):
        cfg = LossConfig(switch_iteration=1500, companion_loss="cross-entropy")
        assert loss_schedule(1500, cfg) == "cross-entropy"

    def test_standalone_mode_never_switches(self):
        cfg = LossConfig(companion_loss="none", switch_iteration=1500)
        assert loss_schedule(2999, cfg) == "ls"

    def test_om_backbone_companion(self):
        cfg = LossConfig(switch_iteration=10, companion_loss="openmax-backbone")
        assert loss_schedule(10, cfg) == "openmax-backbone"

    def test_negative_iteration_rejected(self):
        with pytest.raises(InputError):
            loss_schedule(-1, LossConfig())
