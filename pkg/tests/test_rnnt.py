import numpy as np
import pytest

from transducer_lab.errors import InputError, NumericError
from transducer_lab.gradcheck import max_rel_error
from transducer_lab.rnnt import (Lattice, PosteriorGrid, anti_diagonal_totals,
                                 backward_beta, count_paths, fill_lattice,
                                 forward_alpha, oracle_loss, rnnt_loss)


def random_instance(rng, t_max=5, u_max=4, v_max=3):
    T = int(rng.integers(1, t_max + 1))
    U = int(rng.integers(0, u_max + 1))
    V = int(rng.integers(1, v_max + 1))
    logits = rng.normal(size=(T, U + 1, V + 1))
    labels = rng.integers(1, V + 1, size=U)
    return logits, labels


class TestForwardAlpha:
    def test_single_cell(self):
        grid = PosteriorGrid.from_probs(np.array([[[0.7, 0.3]]]))
        lat = forward_alpha(grid, [])
        assert lat.log_alpha[0, 0] == 0.0
        assert lat.log_total_from_alpha == pytest.approx(np.log(0.7))

    def test_uniform_two_paths(self):
        # T=2, U=1, V=1, all probs 1/2: two paths, each (1/2)^3
        grid = PosteriorGrid.from_probs(np.full((2, 2, 2), 0.5))
        lat = forward_alpha(grid, [1])
        assert np.exp(lat.log_total_from_alpha) == pytest.approx(0.25, rel=1e-12)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(0)
        grid = PosteriorGrid.from_logits(rng.normal(size=(4, 4, 4)))
        labels = rng.integers(1, 4, size=3)
        lat = forward_alpha(grid, labels)
        oracle = oracle_loss(grid, labels)
        assert -lat.log_total_from_alpha == pytest.approx(oracle, rel=1e-10)

    def test_blank_in_labels_rejected(self):
        grid = PosteriorGrid.from_probs(np.full((2, 3, 3), 1 / 3))
        with pytest.raises(InputError):
            forward_alpha(grid, [0, 1])


class TestBackwardBeta:
    def test_single_cell(self):
        grid = PosteriorGrid.from_probs(np.array([[[0.4, 0.6]]]))
        lat = backward_beta(grid, [])
        assert lat.log_beta[0, 0] == pytest.approx(np.log(0.4))

    def test_totals_agree(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            logits, labels = random_instance(rng)
            grid = PosteriorGrid.from_logits(logits)
            fa = forward_alpha(grid, labels).log_total_from_alpha
            bb = backward_beta(grid, labels).log_total_from_beta
            assert fa == pytest.approx(bb, rel=1e-10)

    def test_anti_diagonal_identity(self):
        rng = np.random.default_rng(2)
        grid = PosteriorGrid.from_logits(rng.normal(size=(5, 5, 4)))
        labels = rng.integers(1, 4, size=4)
        lat = fill_lattice(grid, labels)
        totals = anti_diagonal_totals(lat)
        ref = lat.log_total_from_beta
        assert np.all(np.abs(totals - ref) < 1e-9 * max(abs(ref), 1.0))


class TestRnntLoss:
    def test_certain_event(self):
        # blank probability ~1 everywhere: loss ~0, gradients ~0
        logits = np.zeros((1, 1, 2))
        logits[..., 0] = 40.0
        loss, d = rnnt_loss(logits, [])
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.abs(d).max() < 1e-12

    def test_uniform_ln4(self):
        loss, _ = rnnt_loss(np.zeros((2, 2, 2)), [1])
        assert loss == pytest.approx(np.log(4), rel=1e-12)

    def test_gradient_vs_fd(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=(4, 4, 4))
        labels = rng.integers(1, 4, size=3)
        _, d = rnnt_loss(logits, labels)
        err, _ = max_rel_error(lambda x: rnnt_loss(x, labels)[0], logits, d)
        assert err < 1e-4

    def test_gradient_sums_to_zero_over_symbols(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            logits, labels = random_instance(rng)
            _, d = rnnt_loss(logits, labels)
            assert np.abs(d.sum(axis=-1)).max() < 1e-10

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        logits, labels = random_instance(rng)
        loss1, _ = rnnt_loss(logits, labels)
        shifted = logits + rng.normal(size=logits.shape[:2])[:, :, None]
        loss2, _ = rnnt_loss(shifted, labels)
        assert loss1 == pytest.approx(loss2, abs=1e-10)

    def test_impossible_alignment(self):
        # label has probability exactly zero everywhere: P underflows to -inf
        from transducer_lab.rnnt import rnnt_loss_from_grid
        probs = np.zeros((2, 2, 2))
        probs[..., 0] = 1.0
        grid = PosteriorGrid.from_probs(probs)
        with pytest.raises(NumericError):
            rnnt_loss_from_grid(grid, [1])


class TestOracle:
    def test_self_consistency_sweep(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            logits, labels = random_instance(rng)
            grid = PosteriorGrid.from_logits(logits)
            dp = forward_alpha(grid, labels).log_total_from_alpha
            assert -dp == pytest.approx(oracle_loss(grid, labels), rel=1e-10)

    def test_path_counts(self):
        assert count_paths(3, 2) == 6
        assert count_paths(4, 3) == 20
        assert count_paths(1, 0) == 1

    def test_size_bound(self):
        grid = PosteriorGrid.from_probs(np.full((10, 6, 2), 0.5))
        with pytest.raises(InputError):
            oracle_loss(grid, [1] * 5)


class TestBatchEquivalence:
    def test_batched_equals_per_utterance(self):
        # batch evaluation is per-utterance by construction: mean of single
        # losses equals the batch loss exactly
        from transducer_lab.config import default_config, build_model
        cfg = default_config()
        cfg.update({"encoder.dim": 8, "encoder.heads": 2, "encoder.ff_dim": 12,
                    "predictor.dim": 8, "predictor.ff_dim": 12,
                    "jointer.dim": 8, "task.feature_dim": 4})
        model = build_model(cfg)
        rng = np.random.default_rng(7)
        batch = [(rng.normal(size=(int(rng.integers(2, 9)), 4)),
                  rng.integers(1, 9, size=int(rng.integers(1, 4))))
                 for _ in range(3)]
        total, _ = model.batch_loss(batch)
        singles = [model.utterance_loss(f, l)[0].value for f, l in batch]
        assert float(total.value) == pytest.approx(float(np.mean(singles)),
                                                   abs=1e-12)
