"""Estimator facade: sklearn parameter protocol, fit/predict/score."""

import os

import numpy as np
import pytest

from gnnlab import GraphNodeClassifier, load_dataset

HERE = os.path.dirname(__file__)
TOY3 = os.path.join(HERE, "..", "data", "toy3")


@pytest.fixture(scope="module")
def toy():
    return load_dataset(TOY3)


def fast_clf(**kw):
    params = dict(variant="GCN", depth=1, hidden=8, dropout=0.0,
                  max_epochs=30, patience=30, seed=0)
    params.update(kw)
    return GraphNodeClassifier(**params)


def test_get_params_round_trip():
    clf = fast_clf()
    params = clf.get_params()
    assert params["variant"] == "GCN"
    assert params["depth"] == 1
    clone = GraphNodeClassifier(**params)
    assert clone.get_params() == params


def test_set_params_returns_self_and_validates():
    clf = fast_clf()
    assert clf.set_params(depth=3) is clf
    assert clf.depth == 3
    with pytest.raises(ValueError):
        clf.set_params(nonsense=1)


def test_sklearn_clone_compatible():
    sklearn = pytest.importorskip("sklearn")
    from sklearn.base import clone
    clf = fast_clf(depth=2)
    cloned = clone(clf)
    assert cloned.get_params() == clf.get_params()


def test_unfitted_errors(toy):
    clf = fast_clf()
    with pytest.raises(RuntimeError):
        clf.predict()
    with pytest.raises(RuntimeError):
        clf.score(toy)


def test_fit_predict_score(toy):
    clf = fast_clf().fit(toy)
    assert hasattr(clf, "model_") and hasattr(clf, "metrics_")
    assert np.array_equal(clf.classes_, np.arange(toy.c))

    logits = clf.decision_function()
    assert logits.shape == (toy.n, toy.c)
    proba = clf.predict_proba()
    assert np.abs(proba.sum(axis=1) - 1.0).max() < 1e-12
    preds = clf.predict()
    assert preds.shape == (toy.n,)
    assert np.array_equal(preds, np.argmax(logits, axis=1))

    s = clf.score(mask="test")
    assert s == float(np.mean(preds[toy.test_mask] == toy.labels[toy.test_mask]))
    mask = np.ones(toy.n, bool)
    assert clf.score(mask=mask) == float(np.mean(preds == toy.labels))


def test_fit_deterministic(toy):
    a = fast_clf().fit(toy).decision_function()
    b = fast_clf().fit(toy).decision_function()
    assert np.array_equal(a, b)


def test_preset_fallback_for_unset_params(toy):
    # unset hyperparameters fall back to the per-variant preset
    clf = GraphNodeClassifier(variant="GCN", depth=1, max_epochs=5, seed=0)
    model_cfg, train_cfg = clf._configs()
    assert model_cfg.hidden == 64          # preset value
    assert train_cfg.lr == 0.01            # preset value
    assert train_cfg.max_epochs == 5       # explicit override
