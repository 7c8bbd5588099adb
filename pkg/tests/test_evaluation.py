"""AUROC oracle equivalence, report invariants, and export formats."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trifuse.config import DetectorConfig
from trifuse.detector import init_params
from trifuse.embeddings import synth_dataset
from trifuse.errors import LengthMismatch, SingleClass
from trifuse.evaluation import (
    auroc,
    evaluate,
    export_attention,
    export_features,
    write_scores,
)


def auroc_bruteforce(scores, labels):
    """Independent oracle: count positive/negative pairs, ties half credit."""
    positives = [s for s, y in zip(scores, labels) if y == 1]
    negatives = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in positives:
        for n in negatives:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(positives) * len(negatives))


class TestAuroc:
    def test_worked_example(self):
        assert auroc([0.9, 0.4, 0.8, 0.3], [1, 1, 0, 0]) == 0.75

    def test_perfect_ranking(self):
        assert auroc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_all_ties_half_credit(self):
        assert auroc([0.5, 0.5, 0.5, 0.5], [1, 1, 0, 0]) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(SingleClass):
            auroc([0.1, 0.2], [1, 1])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            auroc([0.1, 0.2, 0.3], [1, 0])

    def test_matches_bruteforce_on_random_sets(self):
        rng = np.random.default_rng(42)
        for trial in range(100):
            n = int(rng.integers(2, 201))
            labels = rng.integers(0, 2, n).tolist()
            if len(set(labels)) < 2:
                labels[0], labels[1] = 0, 1
            if trial % 3 == 0:
                # tie-heavy: quantised scores
                scores = (rng.integers(0, 4, n) / 4.0).tolist()
            else:
                scores = rng.normal(0, 1, n).tolist()
            fast = auroc(scores, labels)
            slow = auroc_bruteforce(scores, labels)
            assert abs(fast - slow) <= 1e-12

    @settings(max_examples=100, deadline=None, derandomize=True)
    @given(
        st.lists(
            st.tuples(st.integers(min_value=-8, max_value=8), st.integers(0, 1)),
            min_size=2,
            max_size=60,
        )
    )
    def test_hypothesis_oracle_equivalence(self, pairs):
        scores = [float(s) / 4.0 for s, _ in pairs]
        labels = [y for _, y in pairs]
        if len(set(labels)) < 2:
            return
        assert abs(auroc(scores, labels) - auroc_bruteforce(scores, labels)) <= 1e-12

    def test_invariant_under_monotone_transforms(self):
        rng = np.random.default_rng(7)
        scores = rng.normal(0, 1, 80).tolist()
        labels = rng.integers(0, 2, 80).tolist()
        labels[0], labels[1] = 0, 1
        base = auroc(scores, labels)
        assert abs(auroc([2 * s + 1 for s in scores], labels) - base) <= 1e-12
        assert abs(auroc([s ** 3 for s in scores], labels) - base) <= 1e-12


@pytest.fixture(scope="module")
def tiny_world():
    records, states, units = synth_dataset(16, 16, seed=2, separation=2.0)
    config = DetectorConfig(
        hidden_dim=16, num_heads=2, encoder_layers=1, ffn_multiplier=2,
        max_units=8, seed=0,
    ).validate()
    params = init_params(config)
    return records, states, units, config, params


class TestEvaluate:
    def test_report_fields_and_determinism(self, tiny_world):
        records, states, units, config, params = tiny_world
        report1 = evaluate(params, config, records, "train", states, units)
        report2 = evaluate(params, config, records, "train", states, units)
        assert report1.auroc == report2.auroc
        assert report1.scores == report2.scores
        assert report1.n_pos + report1.n_neg == len(report1.scores)
        assert 0.0 <= report1.auroc <= 1.0
        for _, p, _ in report1.scores:
            assert 0.0 <= p <= 1.0

    def test_rank_based_matches_bruteforce_on_report(self, tiny_world):
        records, states, units, config, params = tiny_world
        report = evaluate(params, config, records, "train", states, units)
        scores = [p for _, p, _ in report.scores]
        labels = [y for _, _, y in report.scores]
        assert abs(report.auroc - auroc_bruteforce(scores, labels)) <= 1e-12

    def test_score_file_round_trip(self, tiny_world, tmp_path):
        import json

        records, states, units, config, params = tiny_world
        report = evaluate(params, config, records, "train", states, units)
        path = tmp_path / "scores.jsonl"
        write_scores(report, path)
        lines = [json.loads(line) for line in path.read_text().splitlines()]
        assert [entry["id"] for entry in lines] == [rid for rid, _, _ in report.scores]
        assert all(set(entry) == {"id", "p_halluc", "label"} for entry in lines)


class TestExports:
    def test_attention_rows_sum_to_one(self, tiny_world, tmp_path):
        records, states, units, config, params = tiny_world
        ids = [r.id for r in records[:3]]
        path = tmp_path / "attention.tsv"
        unit_texts = {ids[0]: ["first step", "second step"]}
        export_attention(params, config, ids, states, units, path, unit_texts=unit_texts)
        blocks = path.read_text().strip().split("\n")
        data_rows = [line for line in blocks if line.split("\t")[0] in ("query", "answer", "reverse")]
        assert len(data_rows) == 9
        for row in data_rows:
            weights = [float(w) for w in row.split("\t")[1:]]
            assert abs(sum(weights) - 1.0) <= 1e-6
        header = next(line for line in blocks if line.startswith("segment"))
        assert "u1:first step" in header

    def test_feature_dump_widths(self, tiny_world, tmp_path):
        records, states, units, config, params = tiny_world
        path = tmp_path / "features.tsv"
        export_features(params, config, records, "train", states, units, path)
        lines = path.read_text().strip().split("\n")
        header = lines[0].split("\t")
        d = config.hidden_dim
        assert sum(1 for c in header if c.startswith("fused_")) == d
        assert sum(1 for c in header if c.startswith("raw_")) == 3 * d
        for line in lines[1:]:
            assert len(line.split("\t")) == 2 + d + 3 * d
