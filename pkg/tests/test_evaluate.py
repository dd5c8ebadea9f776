"""Accuracy protocol tests: strict threshold, buckets, relation split."""

import numpy as np
import pytest

from vglab.evaluate import (
    EvalReport,
    SampleResult,
    evaluate,
    per_count_table,
    split_by_relation,
    stratify_by_distractors,
    validate_report_dict,
)
from vglab.geometry import Box
from vglab.model import ModelConfig, init_params
from vglab.queries import Dataset, build_base_dataset

TINY = ModelConfig(dim=32, heads=2, text_layers=1, enc_layers=1, dec_layers=1, patch=16)


def result(d=0, relation=None, iou=0.9, correct=None):
    return SampleResult(
        scene_id="s", distractor_count=d, relation=relation, iou=iou,
        correct=(iou > 0.5) if correct is None else correct,
    )


class TestThreshold:
    def test_strict_inequality_at_half(self):
        flags = [iou > 0.5 for iou in (0.6, 0.5, 0.4)]
        assert sum(flags) == 1  # 0.5 does not count as correct

    def test_hand_tallied_set(self):
        ious = [0.9, 0.51, 0.5, 0.49, 0.0, 0.7, 0.500001, 0.3, 1.0, 0.2]
        results = [result(iou=v) for v in ious]
        acc = np.mean([r.correct for r in results])
        assert acc == pytest.approx(5 / 10)


class TestStratify:
    def test_bucket_arithmetic(self):
        results = [result(d=d) for d in (0, 1, 2, 3, 4, 6)]
        table = stratify_by_distractors(results)
        by_label = {b["label"]: b["n"] for b in table}
        assert by_label == {"0-1": 2, "2-3": 2, "4-5": 1, ">=6": 1}

    def test_empty_bucket_reports_null(self):
        table = stratify_by_distractors([result(d=0)])
        tail = next(b for b in table if b["label"] == ">=6")
        assert tail["n"] == 0 and tail["accuracy"] is None

    def test_partition_property(self):
        rng = np.random.default_rng(0)
        results = [result(d=int(rng.integers(0, 10))) for _ in range(500)]
        table = stratify_by_distractors(results)
        assert sum(b["n"] for b in table) == 500

    def test_per_count_table(self):
        results = [result(d=0, iou=0.9), result(d=0, iou=0.1), result(d=2, iou=0.9)]
        table = per_count_table(results)
        assert table[0] == {"distractor_count": 0, "n": 2, "accuracy": 0.5}
        assert table[1]["distractor_count"] == 2


class TestRelationSplit:
    def test_all_relation(self):
        results = [result(relation="leftmost") for _ in range(4)]
        split = split_by_relation(results)
        assert split["without_relation"]["n"] == 0
        assert split["without_relation"]["accuracy"] is None
        assert split["with_relation"]["n"] == 4

    def test_mixed_hand_tally(self):
        results = [
            result(relation="leftmost", iou=0.9),
            result(relation="middle", iou=0.1),
            result(relation=None, iou=0.9),
            result(relation=None, iou=0.95),
        ]
        split = split_by_relation(results)
        assert split["with_relation"]["accuracy"] == pytest.approx(0.5)
        assert split["without_relation"]["accuracy"] == pytest.approx(1.0)
        assert split["with_relation"]["n"] + split["without_relation"]["n"] == 4


class TestEvaluate:
    def test_order_independence_and_fields(self):
        data = build_base_dataset(30, seed=3)
        params = init_params(TINY, seed=0)
        rep = evaluate(params, TINY, data)
        shuffled = Dataset(samples=list(reversed(data.samples)), scenes=data.scenes)
        rep2 = evaluate(params, TINY, shuffled)
        assert rep.overall == rep2.overall
        assert rep.buckets == rep2.buckets
        assert rep.relation_split == rep2.relation_split
        assert rep.n == 30

    def test_report_recomputable_from_results(self):
        data = build_base_dataset(20, seed=4)
        params = init_params(TINY, seed=0)
        rep = evaluate(params, TINY, data)
        assert rep.overall == pytest.approx(np.mean([r.correct for r in rep.results]))
        assert all(r.correct == (r.iou > 0.5) for r in rep.results)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            evaluate(init_params(TINY, 0), TINY, Dataset([], {}))

    def test_schema_validation(self):
        data = build_base_dataset(15, seed=5)
        rep = evaluate(init_params(TINY, 0), TINY, data)
        d = rep.to_json_dict()
        validate_report_dict(d)  # should not raise
        assert EvalReport.from_json_dict(d).overall == rep.overall
        bad = dict(d, n=d["n"] + 1)
        with pytest.raises(ValueError, match="sum"):
            validate_report_dict(bad)
        with pytest.raises(ValueError, match="missing"):
            validate_report_dict({"n": 1})

    def test_csv_layout(self):
        data = build_base_dataset(12, seed=6)
        rep = evaluate(init_params(TINY, 0), TINY, data)
        lines = rep.to_csv().strip().splitlines()
        assert lines[0] == "bucket,n,accuracy"
        assert len(lines) == 5
