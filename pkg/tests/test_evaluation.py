import io
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from racewalk.classifier import Hyperparameters
from racewalk.evaluation import (
    ConfusionMatrix,
    FoldError,
    FoldSpec,
    MetricsRow,
    compute_metrics,
    eligible_walkers,
    evaluate_models,
    make_lowo_folds,
    read_metrics_csv,
    run_cv,
    task_samples,
    write_metrics_csv,
    write_metrics_json,
)
from racewalk.gait_cycle import ChannelMatrix, ProcessedCycle
from racewalk.pose_data import FaultLabel

N, BK, LC = FaultLabel.NORMAL, FaultLabel.BK, FaultLabel.LC


def make_cycles(walkers=("A", "B", "C", "D"), per_class=4, skip=(), seed=0):
    """Random cycles where BK shifts the right knee angle channel and LC the knee-y channels."""
    rng = np.random.default_rng(seed)
    cycles = []
    for w in walkers:
        for label in (N, BK, LC):
            if (w, label) in skip:
                continue
            for i in range(per_class):
                m = rng.normal(size=(18, 85))
                if label is BK:
                    m[17] += 3.0
                if label is LC:
                    m[3] += 3.0
                    m[11] += 3.0
                cycles.append(ProcessedCycle(f"{w}_{label.value}_{i}", w, label, ChannelMatrix(m)))
    return cycles


def test_metrics_worked_example():
    m = compute_metrics(ConfusionMatrix(tp=9, fp=1, fn=2, tn=8))
    assert m["accuracy"] == pytest.approx(0.85, abs=1e-15)
    assert m["precision"] == pytest.approx(0.9, abs=1e-15)
    assert m["recall"] == pytest.approx(9 / 11, abs=1e-15)
    assert m["f_score"] == pytest.approx(2 * 0.9 * (9 / 11) / (0.9 + 9 / 11), abs=1e-15)
    assert round(m["f_score"], 4) == 0.8571


def test_metrics_absent_values():
    m = compute_metrics(ConfusionMatrix(tp=0, fp=0, fn=3, tn=5))
    assert m["precision"] is None and m["f_score"] is None and m["recall"] == 0.0
    assert compute_metrics(ConfusionMatrix(5, 0, 0, 5)) == {"accuracy": 1.0, "precision": 1.0, "recall": 1.0, "f_score": 1.0}
    with pytest.raises(ValueError):
        compute_metrics(ConfusionMatrix(0, 0, 0, 0))


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=60))
def test_metrics_brute_force_recount(pairs):
    tp = sum(1 for t, p in pairs if t and p)
    fp = sum(1 for t, p in pairs if not t and p)
    fn = sum(1 for t, p in pairs if t and not p)
    tn = len(pairs) - tp - fp - fn
    cm = ConfusionMatrix.from_predictions([t for t, _ in pairs], [p for _, p in pairs])
    assert (cm.tp, cm.fp, cm.fn, cm.tn) == (tp, fp, fn, tn)
    m = compute_metrics(cm)
    assert m["accuracy"] == pytest.approx(float(Fraction(tp + tn, len(pairs))), abs=1e-12)
    for v in m.values():
        assert v is None or 0.0 <= v <= 1.0


def test_folds_basic():
    cycles = make_cycles(("A", "B", "C"))
    folds = make_lowo_folds(cycles, BK)
    assert [f.test_walker_id for f in folds] == ["A", "B", "C"]
    for f in folds:
        assert f.test_walker_id not in f.train_walker_ids
        assert len(f.train_walker_ids) == 2
    with pytest.raises(FoldError):
        FoldSpec("x", "A", ("A", "B"))


def test_walker_without_bk_is_skipped():
    cycles = make_cycles(("A", "B", "C", "D", "E"), skip={("E", BK)})
    assert eligible_walkers(cycles, BK) == ["A", "B", "C", "D"]
    assert eligible_walkers(cycles, LC) == ["A", "B", "C", "D", "E"]
    bk = run_cv(cycles, BK)
    lc = run_cv(cycles, LC)
    assert len(bk.rows) == 4 and len(lc.rows) == 5
    assert all("E" not in m.train_video_ids[0] for m in bk.manifests)
    assert not any(v.startswith("E_") for m in bk.manifests for v in m.train_video_ids)


def test_too_few_walkers():
    with pytest.raises(FoldError):
        make_lowo_folds(make_cycles(("A",)), BK)


def test_task_samples_selection():
    cycles = make_cycles(("A", "B"), per_class=2)
    assert {c.label for c in task_samples(cycles, BK)} == {N, BK}
    assert {c.label for c in task_samples(cycles, BK, include_other_faults=True)} == {N, BK, LC}
    with pytest.raises(ValueError):
        task_samples(cycles, N)


def test_cv_partitions_samples_and_counts():
    cycles = make_cycles()
    res = run_cv(cycles, LC)
    eligible = {c.video_id for c in task_samples(cycles, LC)}
    tests = [set(m.test_video_ids) for m in res.manifests]
    assert set().union(*tests) == eligible
    assert sum(len(t) for t in tests) == len(eligible)
    for m, row in zip(res.manifests, res.rows):
        assert set(m.train_video_ids).isdisjoint(m.test_video_ids)
        assert row.confusion.total == len(m.test_video_ids) == 8
        assert row.walker_id == m.fold.test_walker_id


def test_cv_separable_is_accurate():
    res = run_cv(make_cycles(per_class=6), BK)
    assert all(r.accuracy >= 0.95 for r in res.rows)


def test_cv_order_independent():
    cycles = make_cycles()
    shuffled = [cycles[i] for i in np.random.default_rng(9).permutation(len(cycles))]
    a, b = run_cv(cycles, BK), run_cv(shuffled, BK)
    assert [r.__dict__ for r in a.rows] == [r.__dict__ for r in b.rows]
    for ma, mb in zip(a.models, b.models):
        assert np.array_equal(ma.weights, mb.weights)


def test_cv_parallel_matches_serial():
    cycles = make_cycles()
    a, b = run_cv(cycles, LC, jobs=1), run_cv(cycles, LC, jobs=4)
    for ma, mb in zip(a.models, b.models):
        assert np.array_equal(ma.weights, mb.weights) and ma.bias == mb.bias


def test_standardizer_from_training_fold_only():
    cycles = make_cycles()
    res = run_cv(cycles, BK)
    by_id = {c.video_id: c for c in cycles}
    for model, man in zip(res.models, res.manifests):
        X = np.stack([by_id[v].features.values for v in man.train_video_ids])
        np.testing.assert_array_equal(model.standardizer.mean, X.mean(axis=0))


def test_evaluate_saved_models_matches_cv_and_detects_leakage():
    cycles = make_cycles()
    res = run_cv(cycles, BK, Hyperparameters(lam=2.0))
    again = evaluate_models(cycles, res.models)
    assert [r.__dict__ for r in again.rows] == [r.__dict__ for r in res.rows]
    # relabel one test video to look like a training video of the same fold
    model = res.models[0]
    test_walker = model.metadata["fold"]["test_walker_id"]
    leaked_id = model.metadata["fold"]["train_video_ids"][0]
    victim = next(c for c in cycles if c.walker_id == test_walker)
    tampered = [c for c in cycles if c is not victim] + [
        ProcessedCycle(leaked_id, test_walker, victim.label, victim.matrix)
    ]
    with pytest.raises(FoldError, match="used for training"):
        evaluate_models(tampered, [model])


def test_metrics_csv_round_trip_with_absent(tmp_path):
    rows = [
        MetricsRow.from_confusion("A", BK, ConfusionMatrix(3, 1, 0, 4)),
        MetricsRow.from_confusion("E", BK, ConfusionMatrix(0, 0, 0, 5)),
    ]
    path = tmp_path / "m.csv"
    write_metrics_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "walker_id,fault,accuracy,precision,recall,f_score"
    assert lines[2] == "E,bk,1,,,"
    back = read_metrics_csv(path)
    assert back[1].precision is None and back[0].precision == 0.75


def test_metrics_json_has_manifests(tmp_path):
    res = run_cv(make_cycles(("A", "B", "C")), LC)
    path = tmp_path / "m.json"
    write_metrics_json([res], path, config={"lambda": 1.0})
    doc = json.loads(path.read_text())
    assert doc["config"] == {"lambda": 1.0}
    task = doc["tasks"][0]
    assert task["fault"] == "lc" and len(task["rows"]) == 3 and len(task["folds"]) == 3
    assert set(task["folds"][0]) >= {"train_video_ids", "test_video_ids", "test_walker_id"}
