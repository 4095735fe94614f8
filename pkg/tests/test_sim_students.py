"""Student models and the distillation loop."""

import numpy as np
import pytest

from sinemark.errors import DivergenceError
from sinemark.sim.students import (
    StudentModel,
    distill_student,
    new_student,
    train_negative,
)
from sinemark.sim.task import make_task, victim_accuracy


def _soft_answers(table, queries):
    return table[queries]


class TestNewStudent:
    def test_table_starts_uniform(self):
        s = new_student("table", 20, 4)
        np.testing.assert_allclose(s.predict_table(), 0.25)

    def test_featurized_predictions_valid(self):
        s = new_student("featurized", 50, 3, feature_dim=16, seed=2)
        p = s.predict(np.arange(50))
        assert p.shape == (50, 3)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
        assert p.min() > 0

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            new_student("linear", 10, 2)

    def test_predict_validates_tokens(self):
        s = new_student("table", 10, 2)
        with pytest.raises(ValueError):
            s.predict(np.array([10]))


class TestTableDistillation:
    def test_full_rate_is_one_epoch_exact(self):
        """At rate 1 each row jumps to the mean of its targets, so one epoch
        already sits at the fixed point."""
        rng = np.random.default_rng(0)
        table = rng.dirichlet(np.ones(3), 30)
        queries = np.repeat(np.arange(30), 2)
        student = distill_student(new_student("table", 30, 3),
                                  queries, _soft_answers(table, queries),
                                  loss="kl", epochs=1, lr=1.0)
        np.testing.assert_allclose(student.predict_table(), table, atol=1e-12)

    def test_unqueried_rows_untouched(self):
        rng = np.random.default_rng(1)
        table = rng.dirichlet(np.ones(3), 30)
        queries = np.arange(10)
        student = distill_student(new_student("table", 30, 3),
                                  queries, table[queries], loss="kl")
        np.testing.assert_allclose(student.predict_table()[10:], 1 / 3)

    def test_duplicate_queries_average(self):
        answers = np.array([[0.8, 0.2], [0.2, 0.8]])
        student = distill_student(new_student("table", 5, 2),
                                  np.array([0, 0]), answers,
                                  loss="kl", epochs=1, lr=1.0)
        np.testing.assert_allclose(student.predict_table()[0], [0.5, 0.5], atol=1e-12)

    def test_partial_rate_converges_monotonically(self):
        rng = np.random.default_rng(2)
        table = rng.dirichlet(np.ones(4), 20)
        queries = np.arange(20)
        _, history = distill_student(new_student("table", 20, 4),
                                     queries, table[queries],
                                     loss="kl", epochs=25, lr=0.5,
                                     return_history=True)
        diffs = np.diff(history)
        assert np.all(diffs <= 1e-12)
        assert history[-1] < history[0] * 1e-3

    def test_hard_labels_learn_empirical_frequencies(self):
        queries = np.array([0, 0, 0, 0, 1, 1])
        labels = np.array([1, 1, 1, 0, 0, 0])
        student = distill_student(new_student("table", 3, 2),
                                  queries, labels, loss="ce",
                                  epochs=1, lr=1.0)
        table = student.predict_table()
        np.testing.assert_allclose(table[0], [0.25, 0.75], atol=1e-12)
        np.testing.assert_allclose(table[1], [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(table[2], [0.5, 0.5], atol=1e-12)

    def test_overshoot_rate_diverges(self):
        rng = np.random.default_rng(3)
        table = rng.dirichlet(np.ones(3), 10)
        queries = np.arange(10)
        with pytest.raises(DivergenceError) as exc:
            distill_student(new_student("table", 10, 3),
                            queries, table[queries],
                            loss="kl", epochs=60, lr=2.5)
        assert "2.5" in str(exc.value)


class TestLossModeGuards:
    def test_kl_rejects_labels(self):
        with pytest.raises(ValueError):
            distill_student(new_student("table", 5, 2),
                            np.array([0]), np.array([1]), loss="kl")

    def test_ce_rejects_vectors(self):
        with pytest.raises(ValueError):
            distill_student(new_student("table", 5, 2),
                            np.array([0]), np.array([[0.5, 0.5]]), loss="ce")

    def test_unknown_loss(self):
        with pytest.raises(ValueError):
            distill_student(new_student("table", 5, 2),
                            np.array([0]), np.array([[0.5, 0.5]]), loss="huber")

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            distill_student(new_student("table", 5, 2),
                            np.array([0, 1]), np.array([[0.5, 0.5]]), loss="kl")


class TestFeaturizedDistillation:
    def test_loss_decreases(self):
        rng = np.random.default_rng(4)
        table = rng.dirichlet(np.ones(3), 40)
        queries = np.arange(40)
        _, history = distill_student(
            new_student("featurized", 40, 3, feature_dim=64, seed=0),
            queries, table[queries], loss="kl",
            epochs=60, lr=2.0, return_history=True)
        assert history[-1] < 0.5 * history[0]

    def test_capacity_recovers_small_table(self):
        """With feature dim at vocab size the random features span the
        table and gradient descent drives the fit close to the targets."""
        rng = np.random.default_rng(5)
        table = rng.dirichlet(np.ones(2), 12)
        queries = np.arange(12)
        student = distill_student(
            new_student("featurized", 12, 2, feature_dim=12, seed=1),
            queries, table[queries], loss="kl", epochs=400, lr=4.0)
        err = np.abs(student.predict_table() - table).max()
        assert err < 0.05

    def test_hard_labels_supported(self):
        queries = np.repeat(np.arange(6), 8)
        rng = np.random.default_rng(6)
        labels = rng.integers(0, 2, queries.size)
        student = distill_student(
            new_student("featurized", 6, 2, feature_dim=8, seed=2),
            queries, labels, loss="ce", epochs=30, lr=1.0)
        p = student.predict_table()
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


class TestTrainNegative:
    @pytest.mark.parametrize("kind", ["unwatermarked", "true_label"])
    def test_trains_competent_student(self, kind):
        task = make_task(7, vocab_size=300, m=3)
        student = train_negative(task, kind, seed=(9, 0))
        preds = student.predict_table()
        acc = float(np.sum(task.token_freq *
                           task.pi[np.arange(300), preds.argmax(axis=1)]))
        assert acc > 0.8 * victim_accuracy(task)

    def test_unknown_kind(self):
        task = make_task(7, vocab_size=50)
        with pytest.raises(ValueError):
            train_negative(task, "pirate", seed=0)


class TestStudentModelValidation:
    def test_bad_table_rows(self):
        with pytest.raises(ValueError):
            StudentModel(kind="table", probs=np.array([[0.7, 0.7]]))

    def test_featurized_needs_weights(self):
        with pytest.raises(ValueError):
            StudentModel(kind="featurized", features=np.ones((4, 3)))

    def test_table_kind_rejects_features(self):
        with pytest.raises(ValueError):
            StudentModel(kind="table", probs=np.ones((2, 2)) / 2,
                         features=np.ones((2, 3)))
