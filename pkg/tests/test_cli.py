import csv
import io
import json

import numpy as np
import pytest

from tsprank import metrics
from tsprank.cli import BENCH_COLUMNS, bench_latency, evaluate_rankings, main
from tsprank.core import BilinearModel, RankingGroup
from tsprank.data_io import generate_synthetic, load_model_with_config, read_predictions, save_model, write_embeddings

import oracles


@pytest.fixture
def dataset(tmp_path):
    groups, _ = generate_synthetic(6, 5, 3, seed=0)
    path = tmp_path / "train.jsonl"
    write_embeddings(path, groups)
    return path


def test_train_writes_model_and_log(tmp_path, dataset):
    out, log = tmp_path / "m.bin", tmp_path / "log.jsonl"
    code = main(["train", "--data", str(dataset), "--mode", "global", "--epochs", "2", "--extra-epochs", "1",
                 "--out", str(out), "--log", str(log), "--valid", str(dataset)])
    assert code == 0
    model, cfg = load_model_with_config(out)
    assert cfg["epochs"] == 2 and cfg["extra_epochs"] == 1 and cfg["mode"] == "global"
    records = [json.loads(line) for line in log.read_text().splitlines()]
    assert [r["epoch"] for r in records] == [1, 2, 3] and "valid_tau" in records[0]


def test_train_defaults(tmp_path, dataset):
    out = tmp_path / "m.bin"
    assert main(["train", "--data", str(dataset), "--epochs", "1", "--out", str(out),
                 "--log", str(tmp_path / "l")]) == 0
    cfg = load_model_with_config(out)[1]
    assert cfg["learning_rate"] == 1e-4 and cfg["weight_decay"] == 1e-5 and cfg["extra_epochs"] == 50


def test_train_config_file(tmp_path, dataset):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"epochs": 1, "lr": 0.5}))
    out = tmp_path / "m.bin"
    assert main(["train", "--config", str(conf), "--data", str(dataset), "--out", str(out),
                 "--log", str(tmp_path / "l")]) == 0
    assert load_model_with_config(out)[1]["learning_rate"] == 0.5
    conf.write_text(json.dumps({"bogus": 1}))
    assert main(["train", "--config", str(conf), "--data", str(dataset), "--out", str(out)]) == 2


def test_usage_errors(tmp_path, dataset):
    assert main(["train", "--out", str(tmp_path / "m")]) == 2
    assert main(["train", "--data", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "m")]) == 2
    assert main(["train", "--data", str(dataset), "--out", "m", "--nope"]) == 2
    assert main(["bench-latency", "--trials", "0"]) == 2
    assert main([]) == 2


def _dominance_model_file(tmp_path):
    # s(i, j) = 5 (x_i - x_j): the best path starts at the largest first coordinate
    path = tmp_path / "dom.bin"
    save_model(BilinearModel([[0.0, 5.0], [-5.0, 0.0]]), path)
    return path


def test_predict_constructed_instance(tmp_path, capsys):
    data = tmp_path / "g.jsonl"
    write_embeddings(data, [RankingGroup("q", ("a", "b", "c"), [[3.0, 1.0], [1.0, 1.0], [2.0, 1.0]], (1, 3, 2))])
    out = tmp_path / "p.jsonl"
    assert main(["predict", "--model", str(_dominance_model_file(tmp_path)), "--data", str(data),
                 "--out", str(out)]) == 0
    assert read_predictions(out) == {"q": {"a": 1, "b": 3, "c": 2}}


def test_predict_capacity_error_record(tmp_path):
    groups, _ = generate_synthetic(1, 12, 2, seed=1)
    small, _ = generate_synthetic(1, 4, 2, seed=2)
    small = [RankingGroup("small", g.entity_ids, g.embeddings, g.gold_ranks) for g in small]
    data = tmp_path / "g.jsonl"
    write_embeddings(data, groups + small)
    out = tmp_path / "p.jsonl"
    code = main(["predict", "--model", str(_dominance_model_file(tmp_path)), "--data", str(data),
                 "--solver", "brute", "--out", str(out)])
    assert code == 1
    lines = [json.loads(x) for x in out.read_text().splitlines()]
    assert "at most 10" in lines[0]["error"] and lines[0]["group_id"] == "syn-0"
    assert read_predictions(out)["small"]


def test_dump_adjacency(tmp_path):
    data = tmp_path / "g.jsonl"
    write_embeddings(data, [RankingGroup("q", ("a", "b"), [[1.0, 2.0], [3.0, 1.0]], (1, 2))])
    dump = tmp_path / "adj.jsonl"
    assert main(["predict", "--model", str(_dominance_model_file(tmp_path)), "--data", str(data),
                 "--out", str(tmp_path / "p"), "--dump-adjacency", str(dump)]) == 0
    [rec] = [json.loads(x) for x in dump.read_text().splitlines()]
    flat = [v for row in rec["scores"] for v in row if v is not None]
    assert len(flat) == 2 and rec["scores"][0][0] is None


def test_predict_jobs_preserve_order(tmp_path, dataset):
    model = tmp_path / "m.bin"
    save_model(BilinearModel.init(3, seed=2, scale=1.0), model)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["predict", "--model", str(model), "--data", str(dataset), "--out", str(a)]) == 0
    assert main(["predict", "--model", str(model), "--data", str(dataset), "--out", str(b), "--jobs", "3"]) == 0
    assert a.read_text() == b.read_text()


def _predictions_file(tmp_path, groups, transform):
    path = tmp_path / "pred.jsonl"
    recs = [{"group_id": g.group_id, "entity_id": e, "rank": transform(g.n, r)}
            for g in groups for e, r in zip(g.entity_ids, g.gold_ranks)]
    path.write_text("".join(json.dumps(r) + "\n" for r in recs))
    return path


def test_evaluate_perfect_and_reversed(tmp_path, dataset):
    groups, _ = generate_synthetic(6, 5, 3, seed=0)
    report = tmp_path / "r.json"
    perfect = _predictions_file(tmp_path, groups, lambda n, r: r)
    assert main(["evaluate", "--data", str(dataset), "--predictions", str(perfect), "--report", str(report)]) == 0
    m = json.loads(report.read_text())["metrics"]
    assert m["kendall_tau"]["value"] == 1.0 and m["exact_match"]["value"] == 1.0
    assert m["rmse"]["value"] == 0.0 and m["mrr"]["value"] == 1.0
    assert all(m[f"ndcg@{k}"]["value"] == 1.0 for k in (3, 5, 10))
    reversed_ = _predictions_file(tmp_path, groups, lambda n, r: n + 1 - r)
    assert main(["evaluate", "--data", str(dataset), "--predictions", str(reversed_), "--report", str(report)]) == 0
    assert json.loads(report.read_text())["metrics"]["kendall_tau"]["value"] == -1.0


def test_evaluate_matches_oracles():
    rng = np.random.default_rng(7)
    pairs = [(list(rng.permutation(6) + 1), list(rng.permutation(6) + 1)) for _ in range(30)]
    rep = evaluate_rankings(pairs, ndcg_k=(3,), map_k=(2,))
    assert rep["kendall_tau"]["value"] == pytest.approx(np.mean([oracles.kendall(p, g) for p, g in pairs]), abs=1e-12)
    assert rep["ndcg@3"]["value"] == pytest.approx(np.mean([oracles.ndcg(p, g, 3) for p, g in pairs]), abs=1e-12)
    assert rep["map@2"]["value"] == pytest.approx(
        np.mean([oracles.average_precision(p, g, 2) for p, g in pairs]), abs=1e-12)
    assert rep["mrr"]["value"] == pytest.approx(np.mean([oracles.reciprocal_rank(p, g) for p, g in pairs]), abs=1e-12)


def test_evaluate_undefined_metric_does_not_abort(tmp_path, dataset):
    groups, _ = generate_synthetic(6, 5, 3, seed=0)
    perfect = _predictions_file(tmp_path, groups, lambda n, r: r)
    prices = tmp_path / "prices.json"
    prices.write_text(json.dumps({"entity_ids": ["e0", "e1"], "prices": [[1, 1], [1, 1], [1, 1]],
                                  "rankings": [[1, 2], [1, 2]], "k": [1]}))
    report = tmp_path / "r.json"
    assert main(["evaluate", "--data", str(dataset), "--predictions", str(perfect), "--prices", str(prices),
                 "--report", str(report)]) == 0
    m = json.loads(report.read_text())["metrics"]
    assert m["irr@1"]["value"] == 0.0 and m["sr@1"]["value"] is None and m["sr@1"]["errors"]
    assert m["kendall_tau"]["value"] == 1.0


def test_bench_latency_rows(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench-latency", "--sizes", "5,10,30,50,100", "--trials", "1", "--backends", "hk",
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert list(rows[0]) == BENCH_COLUMNS and len(rows) == 5
    assert [r["status"] for r in rows] == ["ok", "ok", "skipped", "skipped", "skipped"]


def test_bench_latency_function_shapes():
    rows = bench_latency([5, 11], 2, 4, ["brute", "milp"])
    assert [(r["backend"], r["size"], r["status"]) for r in rows] == [
        ("brute", 5, "ok"), ("brute", 11, "skipped"), ("milp", 5, "ok"), ("milp", 11, "ok")]
    assert all(0 < r["solver_share"] < 1 for r in rows if r["status"] == "ok")
