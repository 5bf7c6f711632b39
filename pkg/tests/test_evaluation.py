import csv
import io

import numpy as np
import pytest

from mixmatch.data import RunConfig, make_synthetic
from mixmatch.evaluation import (CSV_FIELDS, EvaluationError, ExperimentResult,
                                 batch_size_for_nodes, compare_strategies, csv_without_timing,
                                 evaluate, experiment_svg, intra_inter_ratio, knn_accuracy,
                                 line_chart_svg, sweep_graph_size)
from mixmatch.tuning import init_embedder, tune

SMALL = dict(patch_resize=8, embed_dim=8, hidden_dim=16, images_per_batch=4,
             patches_per_image=5, iterations=20)


@pytest.fixture(scope="module")
def images():
    return make_synthetic(10, 3, (32, 32), seed=1)


def test_perfect_clusters():
    emb = np.repeat(np.eye(3), 4, axis=0)
    labels = np.repeat([0, 1, 2], 4)
    assert knn_accuracy(emb, labels) == 1.0
    assert intra_inter_ratio(emb, labels) == 0.0


def test_knn_uses_normalised_distance():
    # scaled copies of one direction are identical under the metric
    emb = np.array([[1.0, 0.0], [10.0, 0.1], [0.0, 1.0], [0.1, 5.0]])
    assert knn_accuracy(emb, [0, 0, 1, 1]) == 1.0


@pytest.mark.parametrize("k", [2, 4, 8])
def test_random_embeddings_score_at_chance(k):
    accs = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        labels = np.arange(400) % k
        accs.append(knn_accuracy(rng.normal(size=(400, 16)), labels))
    assert abs(np.mean(accs) - 1 / k) <= 0.1


def test_ratio_needs_both_pair_kinds():
    with pytest.raises(EvaluationError):
        intra_inter_ratio(np.eye(3), [0, 1, 2])
    with pytest.raises(EvaluationError):
        intra_inter_ratio(np.eye(3), [0, 0, 0])
    with pytest.raises(EvaluationError):
        knn_accuracy(np.eye(1), [0])


def test_evaluation_batch_is_shared(images):
    cfg = RunConfig(**SMALL)
    e = init_embedder(images, cfg)
    a, b = evaluate(e, images, cfg, 3), evaluate(e, images, cfg, 3)
    assert a == b
    assert 0 <= a.triplet_satisfaction <= 1 and 0 <= a.knn_accuracy <= 1


def test_trained_beats_untrained():
    imgs = make_synthetic(16, 2, (48, 48), seed=11)
    cfg_kw = dict(SMALL, iterations=60, images_per_batch=8)
    wins = 0
    for seed in range(10):
        cfg = RunConfig(seed=seed, **cfg_kw)
        before = evaluate(init_embedder(imgs, cfg), imgs, cfg, seed).triplet_satisfaction
        after = evaluate(tune(imgs, cfg).embedder, imgs, cfg, seed).triplet_satisfaction
        wins += after > before
    assert wins >= 8


@pytest.fixture(scope="module")
def compared(images):
    return compare_strategies(images, RunConfig(**SMALL), [0, 1, 2])


def test_compare_csv_layout(compared):
    text = compared.to_csv()
    head, summary = text.split("\n\n")
    rows = list(csv.DictReader(io.StringIO(head)))
    assert tuple(rows[0]) == CSV_FIELDS
    assert len(rows) == 6
    assert [r["arm"] for r in rows] == ["graph", "random"] * 3
    assert all(r["iters"] == "20" for r in rows)
    srows = list(csv.DictReader(io.StringIO(summary)))
    assert [s["arm"] for s in srows] == ["graph", "random"]
    assert srows[0]["runs"] == "3"
    vals = [float(r["knn_accuracy"]) for r in rows if r["arm"] == "graph"]
    assert float(srows[0]["knn_accuracy_mean"]) == pytest.approx(np.mean(vals))
    assert float(srows[0]["knn_accuracy_std"]) == pytest.approx(np.std(vals, ddof=1))


def test_arm_rerun_in_isolation_matches(images, compared):
    cfg = RunConfig(seed=1, **SMALL)
    rep = evaluate(tune(images, cfg, "random").embedder, images, cfg, 1)
    row = [r for r in compared.rows if r["seed"] == 1 and r["arm"] == "random"][0]
    assert rep.as_dict() == {k: row[k] for k in rep.as_dict()}


def test_compare_needs_two_seeds(images):
    with pytest.raises(ValueError):
        compare_strategies(images, RunConfig(**SMALL), [0])


def test_timing_columns_are_dropped(compared):
    text = csv_without_timing(compared.to_csv())
    assert "wall_ms" not in text
    first = text.splitlines()[0].split(",")
    assert first == [f for f in CSV_FIELDS if f != "wall_ms"]


def test_node_targets():
    assert batch_size_for_nodes(200, 10) == 20
    for bad in (0, 15, 5):
        with pytest.raises(ValueError, match="multiple"):
            batch_size_for_nodes(bad, 10)


def test_sweep_labels_and_batches(images):
    res = sweep_graph_size(images, RunConfig(**SMALL), [5, 10], [0, 1])
    assert res.arms() == ["nodes5", "nodes10"]
    assert len(res.rows) == 4
    with pytest.raises(ValueError):
        sweep_graph_size(images, RunConfig(**SMALL), [7], [0])


def test_svg_output(compared):
    svg = experiment_svg(compared)
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert "graph" in svg and "random" in svg
    chart = line_chart_svg({"a<b": [(0, 1.0), (1, 2.0)]}, "t", "x", "y")
    assert "a&lt;b" in chart


def test_empty_result_has_header_only():
    assert ExperimentResult("x").to_csv() == ",".join(CSV_FIELDS) + "\n"
