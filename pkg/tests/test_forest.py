import numpy as np
import pytest

from scalesentry.forest import (
    ForestModel,
    ForestParams,
    ModelUnavailable,
    f1,
    feature_matrix,
    fit_forest,
    load_model,
    predict_proba,
    save_model,
    top_k_attackers,
    train,
)
from scalesentry.logpipe import LabeledRecord

from oracles import brute_force_stump, node_impurity


def records_for(ips_labels, repeat=1):
    out = []
    t = 0.0
    for _ in range(repeat):
        for ip, label in ips_labels:
            out.append(LabeledRecord(ip, "/admin" if label else "/", 404 if label else 200, t, label))
            t += 0.01
    return out


def separable_corpus(seed=0, n_normal=60, n_attack=10):
    rng = np.random.default_rng(seed)
    normal = [f"{rng.integers(11, 100)}.{rng.integers(256)}.{rng.integers(256)}.{rng.integers(1, 255)}"
              for _ in range(n_normal)]
    attack = [f"{rng.integers(150, 220)}.{rng.integers(256)}.{rng.integers(256)}.{rng.integers(1, 255)}"
              for _ in range(n_attack)]
    return normal, attack


def test_f1_examples():
    pred = [1] * 8 + [1] * 2 + [0] * 2 + [0] * 5
    truth = [1] * 8 + [0] * 2 + [1] * 2 + [0] * 5
    assert f1(pred, truth) == pytest.approx(0.8)
    assert f1([0, 0], [1, 0]) == 0.0
    assert f1([1, 0], [1, 0]) == 1.0
    with pytest.raises(ValueError):
        f1([1], [1, 0])


def test_empty_training_set():
    with pytest.raises(ModelUnavailable):
        train([])


def test_single_label_is_degenerate():
    model = train(records_for([("1.2.3.4", 0), ("5.6.7.8", 0)], repeat=20), ForestParams(n_trees=5))
    assert model.degenerate and model.f1 == 0.0
    assert predict_proba(model, "1.2.3.4") == 0.0


def test_separable_corpus_scores_perfect_f1():
    normal, attack = separable_corpus()
    recs = records_for([(ip, 0) for ip in normal] + [(ip, 1) for ip in attack], repeat=20)
    model = train(recs, ForestParams(n_trees=30))
    assert model.f1 == 1.0
    ranking = top_k_attackers(model, recs, k=10)
    assert {ip for ip, _ in ranking} == set(attack)
    assert ranking[0][1] >= 0.9


def test_ranking_ties_break_on_positive_count_then_ip():
    recs = records_for([("9.9.9.9", 1), ("8.8.8.8", 1), ("8.8.8.8", 1), ("7.7.7.7", 1)])
    model = fit_forest(np.array([[1, 1, 1, 1], [2, 2, 2, 2]]), np.array([1, 0]), ForestParams(n_trees=1))
    ranking = top_k_attackers(model, recs, k=3)
    assert [ip for ip, _ in ranking] == ["8.8.8.8", "7.7.7.7", "9.9.9.9"]
    assert top_k_attackers(model, [], k=3) == []


@pytest.mark.parametrize("seed", range(50))
def test_depth_one_tree_matches_brute_force_stump(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 201))
    X = rng.integers(0, int(rng.integers(2, 12)), size=(n, 4))
    y = (rng.random(n) < rng.uniform(0.1, 0.9)).astype(np.int64)
    params = ForestParams(n_trees=1, max_depth=1, bootstrap=False, features_per_split=4, rng_seed=seed)
    tree = fit_forest(X, y, params).trees[0]
    expected = None if len(set(y.tolist())) < 2 else brute_force_stump(X, y)
    got = node_impurity(tree, X, y)
    if expected is None:
        assert got is None
    else:
        assert got == pytest.approx(expected, abs=1e-12)
    assert tree.depth() <= 1


def test_forest_probability_is_mean_of_trees():
    rng = np.random.default_rng(3)
    X = rng.integers(0, 50, size=(300, 4))
    y = (X[:, 0] + rng.integers(0, 10, 300) > 30).astype(np.int64)
    model = fit_forest(X, y, ForestParams(n_trees=15))
    proba = model.predict_proba(X)
    manual = np.mean([t.predict_proba(X) for t in model.trees], axis=0)
    assert np.allclose(proba, manual)
    assert ((proba >= 0) & (proba <= 1)).all()


def test_single_full_tree_fits_consistent_data():
    rng = np.random.default_rng(8)
    X = np.unique(rng.integers(0, 256, size=(400, 4)), axis=0)
    y = rng.integers(0, 2, len(X))
    model = fit_forest(X, y, ForestParams(n_trees=1, bootstrap=False, max_depth=64, features_per_split=4))
    assert (model.predict(X) == y).all()


def test_training_is_deterministic():
    normal, attack = separable_corpus(seed=5)
    recs = records_for([(ip, 0) for ip in normal] + [(ip, 1) for ip in attack], repeat=5)
    a = train(recs, ForestParams(n_trees=10, rng_seed=1))
    b = train(recs, ForestParams(n_trees=10, rng_seed=1))
    assert a.to_dict() == b.to_dict()


def test_model_json_round_trip(tmp_path):
    normal, attack = separable_corpus(seed=2)
    recs = records_for([(ip, 0) for ip in normal] + [(ip, 1) for ip in attack], repeat=3)
    model = train(recs, ForestParams(n_trees=8))
    path = tmp_path / "model" / "m.json"
    save_model(model, path)
    loaded = load_model(path)
    X = feature_matrix(normal + attack)
    assert np.array_equal(loaded.predict_proba(X), model.predict_proba(X))
    assert loaded.f1 == model.f1
    with pytest.raises(ValueError):
        ForestModel.from_dict({"format": "other"})


def test_predict_proba_checks_width():
    model = fit_forest(np.array([[1, 2, 3, 4], [5, 6, 7, 8]]), np.array([0, 1]), ForestParams(n_trees=2))
    with pytest.raises(ValueError):
        predict_proba(model, (1, 2, 3))
