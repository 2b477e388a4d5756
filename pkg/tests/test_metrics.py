import random

import pytest

from kusent.metrics import ConfusionMatrix, confusion, report


def brute_force_report(truths, preds, labels):
    """Independent recount straight from the raw pairs."""
    out = {}
    for label in labels:
        tp = sum(1 for t, p in zip(truths, preds) if t == label and p == label)
        fp = sum(1 for t, p in zip(truths, preds) if t != label and p == label)
        fn = sum(1 for t, p in zip(truths, preds) if t == label and p != label)
        support = sum(1 for t in truths if t == label)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out[label] = (precision, recall, f1, support)
    accuracy = (
        sum(1 for t, p in zip(truths, preds) if t == p) / len(truths) if truths else 0.0
    )
    weighted = sum(v[3] / len(truths) * v[2] for v in out.values()) if truths else 0.0
    return accuracy, out, weighted


class TestConfusion:
    def test_counting(self):
        cm = confusion(["P", "N"], ["P", "P"], ["P", "N"])
        assert cm.counts == ((1, 0), (1, 0))

    def test_perfect_predictions_diagonal(self):
        truths = ["a", "b", "c", "a"]
        cm = confusion(truths, truths, ["a", "b", "c"])
        assert cm.counts == ((2, 0, 0), (0, 1, 0), (0, 0, 1))

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="2 truths but 1"):
            confusion(["a", "b"], ["a"], ["a", "b"])

    def test_unknown_label(self):
        with pytest.raises(ValueError, match="unknown true label 'z'"):
            confusion(["z"], ["a"], ["a", "b"])
        with pytest.raises(ValueError, match="unknown predicted label 'z'"):
            confusion(["a"], ["z"], ["a", "b"])

    def test_empty_input_all_zero(self):
        cm = confusion([], [], ["a", "b"])
        assert cm.total() == 0
        rep = report(cm)
        assert rep.accuracy == 0.0
        assert rep.weighted_f1 == 0.0
        assert rep.micro_f1 == 0.0
        assert set(rep.undefined_classes) == {"a", "b"}


class TestWorkedBinaryExample:
    # TP=40, FP=10, FN=20, TN=30 for the positive class
    CM = ConfusionMatrix(counts=((40, 20), (10, 30)), labels=("positive", "negative"))

    def test_accuracy(self):
        assert report(self.CM).accuracy == pytest.approx(0.70, abs=1e-12)

    def test_precision(self):
        assert report(self.CM).per_class["positive"].precision == pytest.approx(0.80, abs=1e-12)

    def test_recall(self):
        assert report(self.CM).per_class["positive"].recall == pytest.approx(
            0.6667, abs=5e-5
        )

    def test_f1(self):
        assert report(self.CM).per_class["positive"].f1 == pytest.approx(0.7273, abs=5e-5)


class TestReport:
    def test_matches_brute_force_on_random_sample(self):
        rng = random.Random(42)
        labels = ["positive", "negative", "neutral"]
        truths = [rng.choice(labels) for _ in range(1000)]
        preds = [rng.choice(labels) for _ in range(1000)]
        rep = report(confusion(truths, preds, labels))
        accuracy, per_class, weighted = brute_force_report(truths, preds, labels)
        assert rep.accuracy == pytest.approx(accuracy, abs=1e-12)
        assert rep.weighted_f1 == pytest.approx(weighted, abs=1e-12)
        for label in labels:
            p, r, f1, support = per_class[label]
            got = rep.per_class[label]
            assert got.precision == pytest.approx(p, abs=1e-12)
            assert got.recall == pytest.approx(r, abs=1e-12)
            assert got.f1 == pytest.approx(f1, abs=1e-12)
            assert got.support == support

    def test_micro_f1_equals_accuracy(self):
        rng = random.Random(7)
        labels = ["a", "b", "c"]
        for _ in range(20):
            n = rng.randrange(1, 200)
            truths = [rng.choice(labels) for _ in range(n)]
            preds = [rng.choice(labels) for _ in range(n)]
            rep = report(confusion(truths, preds, labels))
            assert abs(rep.micro_f1 - rep.accuracy) < 1e-12

    def test_empty_class_no_division_error(self):
        cm = confusion(["a", "a"], ["a", "a"], ["a", "b"])
        rep = report(cm)
        assert rep.per_class["b"].precision == 0.0
        assert rep.per_class["b"].recall == 0.0
        assert rep.per_class["b"].f1 == 0.0
        assert "b" in rep.undefined_classes

    def test_weighted_f1_is_convex_combination(self):
        rng = random.Random(3)
        labels = ["x", "y", "z"]
        for _ in range(20):
            truths = [rng.choice(labels) for _ in range(100)]
            preds = [rng.choice(labels) for _ in range(100)]
            rep = report(confusion(truths, preds, labels))
            f1s = [m.f1 for m in rep.per_class.values()]
            assert min(f1s) - 1e-12 <= rep.weighted_f1 <= max(f1s) + 1e-12

    def test_label_permutation_invariance(self):
        rng = random.Random(5)
        labels = ["p", "n", "u"]
        truths = [rng.choice(labels) for _ in range(300)]
        preds = [rng.choice(labels) for _ in range(300)]
        base = report(confusion(truths, preds, labels))
        permuted = report(confusion(truths, preds, ["u", "p", "n"]))
        assert permuted.accuracy == pytest.approx(base.accuracy, abs=1e-15)
        assert permuted.weighted_f1 == pytest.approx(base.weighted_f1, abs=1e-15)
        assert permuted.micro_f1 == pytest.approx(base.micro_f1, abs=1e-15)
        for label in labels:
            assert permuted.per_class[label] == base.per_class[label]

    def test_accuracy_is_trace_over_total(self):
        cm = confusion(["a", "a", "b", "b"], ["a", "b", "b", "b"], ["a", "b"])
        rep = report(cm)
        assert rep.accuracy == 3 / 4

    def test_json_shape(self):
        cm = confusion(["a", "b"], ["a", "b"], ["a", "b"])
        payload = report(cm).to_json_dict()
        assert set(payload) == {"accuracy", "per_class", "weighted_f1", "micro_f1"}
        assert set(payload["per_class"]["a"]) == {"precision", "recall", "f1", "support"}

    def test_table_renders(self):
        cm = confusion(["a", "b"], ["a", "b"], ["a", "b"])
        table = report(cm).to_table()
        assert "precision" in table and "accuracy" in table
