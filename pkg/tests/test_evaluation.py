import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dramn.errors import DataError, UndefinedMetricError
from dramn.evaluation import (
    BenchCase,
    auroc,
    confusion_metrics,
    evaluate_scores,
    timing_benchmark,
)


def pairwise_auroc(probs, labels):
    """Independent oracle: exact pairwise counting with half-credit ties."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    pos = probs[labels == 1]
    neg = probs[labels == 0]
    wins = ties = 0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1
            elif p == q:
                ties += 1
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


class TestConfusionMetrics:
    def test_hand_counts(self):
        probs = np.array([0.9, 0.8, 0.6, 0.2, 0.1, 0.3, 0.4, 0.45, 0.2, 0.05])
        labels = np.array([1, 1, 0, 1, 0, 0, 0, 0, 0, 0])
        rep = confusion_metrics(probs, labels)
        assert (rep.tp, rep.fp, rep.fn, rep.tn) == (2, 1, 1, 6)
        assert rep.accuracy == pytest.approx(0.8)
        assert rep.precision == pytest.approx(2 / 3)
        assert rep.recall == pytest.approx(2 / 3)
        assert rep.specificity == pytest.approx(6 / 7)

    def test_perfect(self):
        rep = confusion_metrics([0.9, 0.1], [1, 0])
        for name in ("accuracy", "precision", "recall", "f1", "specificity"):
            assert getattr(rep, name) == 1.0
        assert not rep.undefined

    def test_all_negative_predictions_flagged(self):
        rep = confusion_metrics([0.1, 0.2, 0.3], [1, 0, 1])
        assert rep.recall == 0.0
        assert "precision" in rep.undefined

    def test_threshold_zero_all_positive(self):
        rep = confusion_metrics([0.5, 0.0, 0.7], [1, 0, 0], threshold=0.0)
        assert rep.recall == 1.0
        assert rep.specificity == 0.0

    def test_counts_reproduce_ratios(self):
        rng = np.random.default_rng(0)
        probs = rng.uniform(size=50)
        labels = rng.integers(0, 2, 50)
        rep = confusion_metrics(probs, labels)
        assert rep.accuracy == (rep.tp + rep.tn) / rep.n_samples
        if rep.tp + rep.fp:
            assert rep.precision == rep.tp / (rep.tp + rep.fp)
        if rep.tp + rep.fn:
            assert rep.recall == rep.tp / (rep.tp + rep.fn)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            confusion_metrics([0.5], [1, 0])


class TestAuroc:
    def test_hand_example(self):
        assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == pytest.approx(0.75)

    def test_perfect_separation(self):
        assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties(self):
        assert auroc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedMetricError):
            auroc([0.1, 0.2], [1, 1])

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n = int(rng.integers(4, 60))
            probs = np.round(rng.uniform(size=n), 2)  # induce ties
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            assert auroc(probs, labels) == pytest.approx(
                pairwise_auroc(probs, labels), abs=1e-12)

    @given(st.lists(st.floats(min_value=0, max_value=1, allow_nan=False),
                    min_size=4, max_size=40))
    @settings(max_examples=40, deadline=None)
    def test_monotone_transform_invariance(self, raw):
        # rounding keeps distinct scores far enough apart that the sigmoid
        # stays strictly increasing in float arithmetic
        probs = np.round(np.asarray(raw), 3)
        labels = (np.arange(probs.size) % 2)
        base = auroc(probs, labels)
        squashed = auroc(1.0 / (1.0 + np.exp(-5.0 * probs)), labels)
        assert squashed == pytest.approx(base, abs=1e-12)


class TestEvaluateScores:
    def test_attaches_auroc(self):
        rep = evaluate_scores(np.array([0.9, 0.1]), np.array([1, 0]))
        assert rep.auroc == 1.0

    def test_single_class_flagged(self):
        rep = evaluate_scores(np.array([0.9, 0.8]), np.array([1, 1]))
        assert rep.auroc is None
        assert "auroc" in rep.undefined


class TestTimingBenchmark:
    def test_sizes_and_format(self):
        rows = timing_benchmark([BenchCase(n=6, t=120, l_seq=2, f=8, h=8),
                                 BenchCase(n=12, t=120, l_seq=2, f=8, h=8)],
                                repetitions=5, warmup=1, seed=0)
        stages = {(r["stage"], r["n"]) for r in rows}
        assert stages == {("adjacency", 6), ("inference", 6),
                          ("adjacency", 12), ("inference", 12)}
        for r in rows:
            assert r["mean_ms"] > 0
            assert r["p95_ms"] >= 0

    def test_adjacency_time_grows_with_channels(self):
        rows = timing_benchmark([BenchCase(n=4, t=400, l_seq=2, f=8, h=8),
                                 BenchCase(n=40, t=400, l_seq=2, f=8, h=8)],
                                repetitions=15, warmup=3, seed=1)
        adj = {r["n"]: r["mean_ms"] for r in rows if r["stage"] == "adjacency"}
        assert adj[40] > adj[4]

    def test_single_repetition_p95_equals_mean(self):
        rows = timing_benchmark([BenchCase(n=5, t=100, l_seq=2, f=8, h=8)],
                                repetitions=1, warmup=0, seed=2)
        for r in rows:
            assert r["p95_ms"] == pytest.approx(r["mean_ms"])

    def test_rejects_zero_repetitions(self):
        with pytest.raises(DataError):
            timing_benchmark([BenchCase(n=4)], repetitions=0)
