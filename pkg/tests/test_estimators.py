import numpy as np
import pytest
from sklearn.base import clone

from agconv.estimators import AGConvClassifier, AGConvSegmenter, check_clouds
from agconv.exceptions import InputError
from agconv.pointcloud import gen_synthetic

SMALL = dict(k=6, hidden=6, widths=(6, 6, 8, 8), emb=16, head=(8,), epochs=2, batch_size=4)


@pytest.fixture(scope="module")
def data():
    shapes = ["sphere", "cube", "torus"] * 3
    clouds = [gen_synthetic(s, 32, i) for i, s in enumerate(shapes)]
    return [c.coords for c in clouds], np.array(shapes)


def test_get_params_and_clone():
    est = AGConvClassifier(**SMALL)
    params = est.get_params()
    assert params["hidden"] == 6 and params["lr_max"] == 0.1
    assert clone(est).get_params() == params
    assert est.set_params(epochs=5).epochs == 5


def test_classifier_fit_predict(data):
    X, y = data
    est = AGConvClassifier(**SMALL).fit(X, y)
    assert list(est.classes_) == ["cube", "sphere", "torus"]
    pred = est.predict(X)
    assert pred.shape == (9,) and set(pred) <= set(est.classes_)
    proba = est.predict_proba(X)
    np.testing.assert_allclose(proba.sum(axis=1), 1, atol=1e-12)
    assert 0 <= est.score(X, y) <= 1


def test_classifier_deterministic(data):
    X, y = data
    a = AGConvClassifier(**SMALL).fit(X, y).decision_function(X)
    b = AGConvClassifier(**SMALL, threads=2).fit(X, y).decision_function(X)
    assert np.array_equal(a, b)


def test_unfitted():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        AGConvClassifier().predict([np.zeros((30, 3))])


def test_validation():
    with pytest.raises(InputError):
        check_clouds([np.zeros((10, 2))])
    with pytest.raises(InputError):
        check_clouds([np.full((10, 3), np.nan)])
    with pytest.raises(InputError):
        check_clouds([])
    with pytest.raises(InputError):
        AGConvClassifier(**SMALL).fit([np.zeros((10, 3))], [0, 1])


def test_segmenter():
    clouds = [gen_synthetic("cube", 64, i) for i in range(4)]
    est = AGConvSegmenter(k=4, hidden=4, widths=(4, 4, 6, 6, 8), head=(8,), epochs=1, batch_size=2)
    est.fit(clouds, [c.point_labels for c in clouds])
    preds = est.predict(clouds)
    assert [p.shape for p in preds] == [(64,)] * 4
    assert 0 <= est.score(clouds, [c.point_labels for c in clouds]) <= 1
    with pytest.raises(InputError):
        est.fit(clouds, [c.point_labels[:10] for c in clouds])
    with pytest.raises(InputError):
        est.predict(clouds, categories=[5, 0, 0, 0])
