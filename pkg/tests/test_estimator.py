import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mhs.catalog import load_builtin_catalog
from mhs.corpus import generate_synthetic
from mhs.estimator import MhsClassifier


@pytest.fixture(scope="module")
def text_data():
    catalog = load_builtin_catalog("mdd")
    corpus = generate_synthetic(catalog, 120, 120, 0.7, seed=31)
    X = [p.text() for p in corpus.posts]
    y = corpus.labels()
    return X, y


def test_get_set_params_round_trip():
    clf = MhsClassifier(dim=32, c1=8, c2=8, epochs=2)
    params = clf.get_params()
    assert params["dim"] == 32
    clone(clf)  # sklearn clone relies on get_params/init symmetry


def test_fit_predict_shapes(text_data):
    X, y = text_data
    clf = MhsClassifier(dim=16, c1=4, c2=4, epochs=2, learning_rate=1e-3, seed=0)
    clf.fit(X, y)
    preds = clf.predict(X)
    assert preds.shape == (len(X),)
    assert set(np.unique(preds)) <= {0, 1}
    proba = clf.predict_proba(X)
    assert proba.shape == (len(X), 2)
    assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-6)
    assert np.array_equal(clf.classes_, np.array([0, 1]))


def test_fit_learns_something(text_data):
    X, y = text_data
    clf = MhsClassifier(dim=32, c1=8, c2=8, epochs=10, learning_rate=1e-3, seed=1)
    clf.fit(X, y)
    assert clf.score(X, y) > 0.8  # train accuracy on an easy balanced task


def test_head_distances_surface(text_data):
    X, y = text_data
    clf = MhsClassifier(dim=16, c1=4, c2=4, epochs=1, seed=0)
    clf.fit(X, y)
    distances = clf.head_distances(X[:5])
    assert distances.shape == (5, 9)
    assert np.all(distances >= -1) and np.all(distances <= 1)


def test_predict_before_fit_raises():
    with pytest.raises(NotFittedError):
        MhsClassifier().predict(["some text"])


def test_fit_rejects_single_class(text_data):
    X, _ = text_data
    with pytest.raises(ValueError):
        MhsClassifier(epochs=1).fit(X[:10], np.zeros(10))


def test_fit_rejects_bad_labels(text_data):
    X, _ = text_data
    with pytest.raises(ValueError):
        MhsClassifier(epochs=1).fit(X[:4], np.array([0, 1, 2, 1]))


def test_fit_rejects_single_string():
    with pytest.raises(ValueError):
        MhsClassifier(epochs=1).fit("just one string", np.array([1]))


def test_deterministic_refit(text_data):
    X, y = text_data
    a = MhsClassifier(dim=16, c1=4, c2=4, epochs=2, seed=3).fit(X, y)
    b = MhsClassifier(dim=16, c1=4, c2=4, epochs=2, seed=3).fit(X, y)
    assert np.array_equal(a.predict_proba(X), b.predict_proba(X))


def test_catalog_by_value(text_data):
    X, y = text_data
    catalog = load_builtin_catalog("gad")
    clf = MhsClassifier(catalog=catalog, dim=16, c1=4, c2=4, epochs=1, seed=0)
    clf.fit(X, y)
    assert clf.head_distances(X[:2]).shape == (2, 7)


def test_variant_parameter(text_data):
    X, y = text_data
    clf = MhsClassifier(variant="cnn_only", dim=16, c1=4, c2=4, epochs=1, seed=0)
    clf.fit(X, y)
    assert clf.predict(X[:3]).shape == (3,)
