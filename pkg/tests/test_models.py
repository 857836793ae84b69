import math
from itertools import product

import numpy as np
import pytest

from augkit.chat import Transcript
from augkit.corpus import AudioSignal
from augkit.errors import (DegenerateSignal, EmptyCorpus, IdMismatch, LeakageDetected, SchemaError,
                           SingleClass, TooFewSamples)
from augkit.models import (AUDIO_FEATURE_NAMES, CVData, FeatureMatrix, Tfidf, build_tree, check_leakage,
                           cross_validate, extract_audio_features, majority_vote, read_predictions,
                           stratified_group_folds, tfidf_fit_transform, train_linear, train_random_forest,
                           write_predictions)
from augkit.seeding import derive_seed, make_rng

from synth import noisy_xor, separable_set


# ---- TF-IDF -----------------------------------------------------------------------------

def test_tfidf_idf_formula():
    vec = Tfidf().fit(["a a b", "b c"])
    idf = dict(zip(vec.vocabulary, vec.idf))
    assert idf["b"] == pytest.approx(1.0)
    assert idf["a"] == pytest.approx(math.log(3 / 2) + 1) == idf["c"]
    assert vec.vocabulary == sorted(vec.vocabulary)
    assert "a b" in vec.vocabulary and "a a" in vec.vocabulary


def test_tfidf_rows_and_errors():
    fm, vocab = tfidf_fit_transform([Transcript("x", "AD", ["the boy fell ."])])
    assert fm.ids == ["x"] and np.linalg.norm(fm.X[0]) == pytest.approx(1.0)
    with pytest.raises(EmptyCorpus):
        tfidf_fit_transform([])


def test_tfidf_permutation_equivariant():
    docs = ["the boy falls", "the jar is full", "mother dries dishes", "the water overflows"]
    X = Tfidf().fit_transform(docs)
    perm = [2, 0, 3, 1]
    Xp = Tfidf().fit_transform([docs[i] for i in perm])
    assert np.array_equal(Xp, X[perm])


# ---- audio features -------------------------------------------------------------------

def test_audio_features_shape_and_silence():
    sr = 16000
    f = extract_audio_features(AudioSignal(np.zeros(sr), sr))
    assert f.shape == (36,) and len(AUDIO_FEATURE_NAMES) == 36
    names = dict(zip(AUDIO_FEATURE_NAMES, f))
    assert names["rms_mean"] == 0 and names["zcr_mean"] == 0
    assert names["mfcc0_mean"] == pytest.approx(math.log(1e-10) * math.sqrt(64))
    with pytest.raises(DegenerateSignal):
        extract_audio_features(AudioSignal(np.zeros(100), sr))


def test_audio_features_scaling():
    sr = 16000
    x = np.random.default_rng(0).standard_normal(sr) * 0.1
    a = dict(zip(AUDIO_FEATURE_NAMES, extract_audio_features(AudioSignal(x, sr))))
    b = dict(zip(AUDIO_FEATURE_NAMES, extract_audio_features(AudioSignal(2 * x, sr))))
    assert b["zcr_mean"] == a["zcr_mean"] and b["zcr_std"] == a["zcr_std"]
    assert b["rms_mean"] == pytest.approx(2 * a["rms_mean"])


# ---- linear model ------------------------------------------------------------------------

def test_linear_two_points():
    X = np.array([[1.0, 2.0], [-1.0, -2.0]])
    m = train_linear(X, [1, 0])
    assert list(m.predict(X)) == [1, 0]


def test_linear_determinism_and_errors():
    X, y = separable_set(60, 5, seed=3)
    a, b = train_linear(X, y, seed=4), train_linear(X, y, seed=4)
    assert np.array_equal(a.parameters["w"], b.parameters["w"]) and a.parameters["b"] == b.parameters["b"]
    with pytest.raises(SingleClass):
        train_linear(X, np.ones(60, int))
    with pytest.raises(SchemaError):
        a.predict(np.zeros((2, 3)))


def test_feature_schema_guard():
    X, y = separable_set(20, 3, seed=1)
    fm = FeatureMatrix([str(i) for i in range(20)], X, ["a", "b", "c"])
    m = train_linear(fm, y)
    assert m.predict(fm).shape == (20,)
    with pytest.raises(SchemaError):
        m.predict(FeatureMatrix(fm.ids, X, ["a", "b", "z"]))


# ---- random forest -----------------------------------------------------------------------

def test_forest_on_noisy_xor():
    X, y = noisy_xor(200, 0.05, seed=0)
    Xt, yt = noisy_xor(200, 0.05, seed=1)
    m = train_random_forest(X, y, n_trees=100, seed=7)
    assert np.mean(m.predict(Xt) == yt) >= 0.9
    m2 = train_random_forest(X, y, n_trees=100, seed=7)
    assert np.array_equal(m.decision(Xt), m2.decision(Xt))


def test_forest_single_tree_equals_cart():
    X, y = noisy_xor(100, 0.1, seed=2)
    forest = train_random_forest(X, y, n_trees=1, bootstrap=False, max_features=None, seed=0)
    tree = build_tree(X, y, None, 2, make_rng(derive_seed(0, "tree", 0)))
    assert forest.parameters["trees"][0] == tree


def test_forest_constant_features_predict_majority():
    X = np.ones((10, 3))
    y = np.array([1] * 7 + [0] * 3)
    assert set(train_random_forest(X, y, n_trees=5).predict(X)) == {1}


def test_forest_tree_order_invariance():
    X, y = noisy_xor(100, 0.1, seed=3)
    m = train_random_forest(X, y, n_trees=15, seed=1)
    before = m.decision(X)
    m.parameters["trees"] = m.parameters["trees"][::-1]
    assert np.array_equal(before, m.decision(X))


def test_min_leaf_respected():
    X, y = noisy_xor(60, 0.2, seed=4)
    tree = build_tree(X, y, None, min_leaf=2)
    leaves = {}
    for r in range(X.shape[0]):
        node = 0
        while tree.feature[node] >= 0:
            node = tree.left[node] if X[r, tree.feature[node]] <= tree.threshold[node] else tree.right[node]
        leaves[node] = leaves.get(node, 0) + 1
    assert min(leaves.values()) >= 2 or len(leaves) == 1


# ---- cross-validation ------------------------------------------------------------------------

def test_cv_separable_linear():
    X, y = separable_set(100, 10, seed=0)
    res = cross_validate(CVData([f"s{i}" for i in range(100)], X, y), "linear", k=10, n_seeds=5)
    assert res.mean_acc >= 0.95 and res.std_acc <= 0.05
    assert len(res.folds) == 50
    assert 0 <= res.mean_sensitivity <= 1


def test_cv_k2_on_four_samples():
    X = np.array([[1.0], [2.0], [-1.0], [-2.0]])
    res = cross_validate(CVData(list("abcd"), X, [1, 1, 0, 0]), "linear", k=2, n_seeds=1)
    for f in res.folds:
        assert len(f.val_ids) == 2
        assert sorted(x in "ab" for x in f.val_ids) == [False, True]


def test_cv_too_few_samples():
    X, y = separable_set(10, 3, seed=0)
    with pytest.raises(TooFewSamples):
        cross_validate(CVData([str(i) for i in range(10)], X, y), "linear", k=10)


def test_group_folds_keep_recordings_together():
    groups = [f"r{i // 3}" for i in range(60)]
    labels = [1 if (i // 3) % 2 else 0 for i in range(60)]
    assign = stratified_group_folds(groups, labels, 5, make_rng(0))
    assert set(assign) == set(groups)
    per_fold = np.bincount([assign[g] for g in groups], minlength=5)
    assert per_fold.max() - per_fold.min() <= 3


def test_cv_augmented_rows_never_leak():
    X, y = separable_set(40, 4, seed=5)
    order = np.argsort(y, kind="stable")
    X, y = X[order], y[order]
    ids = [f"s{i}" for i in range(40)]
    # two chunks per recording, recordings label-pure
    data = CVData(ids, X, y, groups=[f"rec{i // 2}" for i in range(40)])
    aug = CVData([f"{s}.aug" for s in ids], X + 0.01, y, roots=ids)
    res = cross_validate(data, "linear", k=4, n_seeds=2, augmented=aug)
    group_of = dict(zip(ids, data.groups))
    for f in res.folds:
        val_groups = {group_of[v] for v in f.val_ids}
        for t in f.train_ids:
            assert group_of[t.removesuffix(".aug")] not in val_groups


def test_leakage_check_detects_adversarial_fixture():
    with pytest.raises(LeakageDetected):
        check_leakage(["a", "b", "c"], ["c", "d"])
    with pytest.raises(LeakageDetected):
        check_leakage(["a"], ["b"], ["rec1"], ["rec1"])
    check_leakage(["a"], ["b"], ["r1"], ["r2"])


def test_cv_text_documents():
    docs = [("cookie jar boy falls stool" if i % 2 else "mother dishes water sink") + f" w{i}" for i in range(40)]
    res = cross_validate(CVData([f"d{i}" for i in range(40)], docs, [i % 2 for i in range(40)]), "linear",
                         k=5, n_seeds=1)
    assert res.mean_acc == 1.0


# ---- fusion -----------------------------------------------------------------------------

def test_majority_truth_table():
    for votes in product(["AD", "HC"], repeat=3):
        sets = [{"x": (v, 0.5)} for v in votes]
        modal = "AD" if votes.count("AD") >= 2 else "HC"
        assert majority_vote(sets)["x"] == modal


def test_majority_tie_rules():
    assert majority_vote([{"x": ("AD", 0.9)}, {"x": ("HC", 0.6)}])["x"] == "AD"
    assert majority_vote([{"x": ("AD", 0.6)}, {"x": ("HC", 0.9)}])["x"] == "HC"
    assert majority_vote([{"x": ("AD", 0.7)}, {"x": ("HC", 0.7)}])["x"] == "AD"
    with pytest.raises(IdMismatch):
        majority_vote([{"x": ("AD", 1)}, {"y": ("AD", 1)}])


def test_predictions_roundtrip(tmp_path):
    preds = {"b": ("HC", 0.25), "a": ("AD", 0.9)}
    write_predictions(preds, tmp_path / "p.jsonl")
    assert (tmp_path / "p.jsonl").read_text().splitlines()[0] == '{"confidence": 0.9, "id": "a", "label": "AD"}'
    assert read_predictions(tmp_path / "p.jsonl") == preds
    (tmp_path / "bad.jsonl").write_text('{"id": "a"}\n')
    with pytest.raises(SchemaError):
        read_predictions(tmp_path / "bad.jsonl")
