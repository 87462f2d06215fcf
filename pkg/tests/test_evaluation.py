import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ecs_engine.errors import ConfigError, MissingBaseline
from ecs_engine.evaluation import (
    RunRecord,
    aggregate,
    answers_match,
    extract_math_answer,
    normalize_answer,
    read_aggregate_csv,
    read_records,
    score_multiple_choice,
    write_aggregate_csv,
    write_records,
)

from oracles import reference_softmax_full_then_renormalize

CASES = json.loads((Path(__file__).parent / "data" / "math_extraction_cases.json").read_text())


class TestScoring:
    def test_uniform_tie_breaks_to_a(self):
        probs, letter = score_multiple_choice(np.zeros(10), [1, 2, 3, 4])
        np.testing.assert_allclose(probs, 0.25)
        assert letter == "A"

    def test_closed_form(self):
        logits = np.zeros(10)
        logits[4] = math.log(3)
        probs, letter = score_multiple_choice(logits, [1, 2, 3, 4])
        assert letter == "D"
        assert probs[3] == pytest.approx(0.5, abs=1e-12)
        np.testing.assert_allclose(probs[:3], 1 / 6, atol=1e-12)

    def test_tie_between_later_labels(self):
        logits = np.array([0.0, 1.0, 2.0, 2.0])
        assert score_multiple_choice(logits, [0, 1, 2, 3])[1] == "C"

    def test_other_tokens_ignored(self):
        logits = np.zeros(10)
        logits[9] = 100.0
        probs, _ = score_multiple_choice(logits, [0, 1, 2])
        np.testing.assert_allclose(probs, 1 / 3)

    @pytest.mark.parametrize("ids", [[1, 1, 2], [1, 2], [1, 2, 3, 4, 5, 6], [1, 2, 99]])
    def test_invalid_option_ids(self, ids):
        with pytest.raises(ConfigError):
            score_multiple_choice(np.zeros(10), ids)

    def test_matches_full_softmax_renormalized(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            logits = rng.normal(scale=5, size=64)
            ids = list(rng.choice(64, size=4, replace=False))
            probs, _ = score_multiple_choice(logits, ids)
            ref = np.array(reference_softmax_full_then_renormalize(logits, ids), dtype=float)
            np.testing.assert_allclose(probs, ref, rtol=1e-9, atol=1e-12)

    @given(st.lists(st.floats(-1e4, 1e4), min_size=5, max_size=5))
    def test_normalized_for_any_logits(self, values):
        probs, _ = score_multiple_choice(np.array(values), [0, 1, 2, 3, 4])
        assert abs(probs.sum() - 1) <= 1e-9


class TestMathExtraction:
    def test_corpus_size(self):
        assert len(CASES) == 50

    @pytest.mark.parametrize("case", CASES, ids=[f"case{i:02d}" for i in range(len(CASES))])
    def test_corpus(self, case):
        assert extract_math_answer(case["text"]) == case["expected"]

    def test_boxed_beats_answer_is(self):
        assert extract_math_answer("The answer is 3. \\boxed{5}") == "5"

    def test_unclosed_box_falls_back(self):
        assert extract_math_answer("\\boxed{12 and then 7") == "7"

    @pytest.mark.parametrize("pred,gold,ok", [
        ("1234", "1,234", True), ("0.5", "0.50", True), ("3/4", "\\frac{3}{4}", True),
        ("3/4", "0.75", False), (None, "1", False), ("12", "12.", True),
    ])
    def test_answers_match(self, pred, gold, ok):
        assert answers_match(pred, gold) is ok

    def test_normalize_is_idempotent(self):
        for case in CASES:
            if case["expected"] is not None:
                assert normalize_answer(case["expected"]) == case["expected"]


def _records(kind, count, accs_by_seed, n, position="before_answer_cue", checkpoint=""):
    out = []
    for seed, correct in accs_by_seed.items():
        for i in range(n):
            out.append(RunRecord(f"s{i}", kind, count, position, seed, "A", "A" if i < correct else "B",
                                 i < correct, checkpoint=checkpoint))
    return out


class TestAggregate:
    def test_mmlu_style_fixture(self):
        # per-seed accuracies average exactly to the target percentages
        records = _records("space", 0, {0: 40638, 1: 40639, 2: 40640}, 100000)
        records += _records("space", 64, {0: 43919, 1: 43920, 2: 43921}, 100000)
        row = aggregate(records).row("space", 64)
        assert (row.baseline, row.accuracy, row.delta_pp, row.improved) == (40.639, 43.92, 3.281, True)
        assert row.seed_count == 3

    def test_arc_style_fixture(self):
        records = _records("space", 0, {0: 42747, 1: 42747, 2: 42747}, 100000)
        records += _records("space", 64, {0: 52986, 1: 52986, 2: 52986}, 100000)
        row = aggregate(records).row("space", 64)
        assert row.delta_pp == 10.239 and row.improved

    def test_self_comparison(self):
        row = aggregate(_records("tab", 0, {0: 5}, 5)).row("tab", 0)
        assert row.delta_pp == 0.0 and not row.improved and row.accuracy == 100.0

    def test_missing_baseline(self):
        with pytest.raises(MissingBaseline):
            aggregate(_records("tab", 16, {0: 1}, 2))

    def test_baseline_fallback_across_kinds(self):
        records = _records("none", 0, {0: 1}, 2, position="none") + _records("tab", 16, {0: 2}, 2)
        row = aggregate(records).row("tab", 16)
        assert row.baseline == 50.0 and row.delta_pp == 50.0

    def test_seed_mismatch(self):
        records = _records("tab", 0, {0: 1, 1: 1}, 2) + _records("tab", 16, {0: 1}, 2)
        with pytest.raises(ConfigError, match="seeds"):
            aggregate(records)

    def test_empty(self):
        assert aggregate([]).rows == []

    def test_checkpoints_are_separate_groups(self):
        records = _records("tab", 0, {0: 1}, 2, checkpoint="a") + _records("tab", 0, {0: 2}, 2, checkpoint="b")
        report = aggregate(records)
        assert report.row("tab", 0, checkpoint="a").accuracy == 50.0
        assert report.row("tab", 0, checkpoint="b").accuracy == 100.0

    def test_csv_round_trip(self, tmp_path):
        records = _records("space", 0, {0: 1, 1: 2}, 3) + _records("space", 16, {0: 3, 1: 3}, 3)
        report = aggregate(records)
        write_aggregate_csv(report, tmp_path / "agg.csv")
        rows = read_aggregate_csv(tmp_path / "agg.csv")
        assert [r["M"] for r in rows] == [0, 16]
        assert rows[1]["delta_pp"] == report.row("space", 16).delta_pp
        text = (tmp_path / "agg.csv").read_text()
        assert text.splitlines()[0] == "kind,M,position,seed_count,accuracy,baseline,delta_pp,improved"
        assert "+50.000,true" in text

    def test_records_round_trip(self, tmp_path):
        records = _records("space", 0, {0: 1}, 3)
        records[0].probabilities = {"A": 0.25, "B": 0.75}
        write_records(records, tmp_path / "r.jsonl")
        assert read_records(tmp_path / "r.jsonl") == records
