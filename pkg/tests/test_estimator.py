from dataclasses import replace

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import tiny_dataset
from gazebed import CrossmodalEmotionClassifier
from gazebed.estimator import check_utterances


def _clf(**kw):
    base = dict(embedding_dim=4, classifier_hidden=4, batch_size=8, epochs=2, lr=1e-2, random_state=3)
    base.update(kw)
    return CrossmodalEmotionClassifier(**base)


def test_params_and_clone():
    clf = _clf(gaze_mode="windowed", fusion_mode="early")
    params = clf.get_params()
    assert params["gaze_mode"] == "windowed" and params["embedding_dim"] == 4
    twin = clone(clf)
    assert twin.get_params() == params and twin is not clf
    twin.set_params(lr=0.5)
    assert twin.lr == 0.5 and clf.lr == 1e-2


def test_not_fitted():
    with pytest.raises(NotFittedError):
        _clf().predict([])
    with pytest.raises(NotFittedError):
        _clf().config


def test_fit_predict_score():
    ds = tiny_dataset(6)
    clf = _clf().fit(ds.train, X_val=ds.validation)
    for m in ("audio", "video"):
        proba = clf.predict_proba(ds.validation, modality=m)
        assert proba.shape == (len(ds.validation), 7)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
        preds = clf.predict(ds.validation, modality=m)
        y = np.array([u.label for u in ds.validation])
        assert clf.score(ds.validation, modality=m) == np.mean(preds == y)
    assert list(clf.classes_) == list(range(7))
    assert clf.result_.best_epoch in (1, 2)
    again = clone(clf).fit(ds.train, X_val=ds.validation)
    np.testing.assert_array_equal(again.predict_proba(ds.validation), clf.predict_proba(ds.validation))


def test_explicit_labels_override():
    ds = tiny_dataset(7)
    y = np.zeros(len(ds.train), dtype=int)
    y[::2] = 1
    with_y = _clf(mode="monomodal_audio", test_modality="audio").fit(ds.train, y)
    without = _clf(mode="monomodal_audio", test_modality="audio").fit(ds.train)
    assert with_y.result_.log[0]["ce_audio"] != without.result_.log[0]["ce_audio"]
    relabelled = [replace(u, label=int(label)) for u, label in zip(ds.train, y)]
    assert _clf(mode="monomodal_audio").fit(relabelled).result_.log == with_y.result_.log
    with pytest.raises(ValueError):
        _clf().fit(ds.train, y[:-1])


def test_input_validation():
    ds = tiny_dataset(8)
    with pytest.raises(TypeError):
        check_utterances(ds.train[0])
    with pytest.raises(TypeError):
        check_utterances([1, 2])
    with pytest.raises(ValueError):
        check_utterances([])
    clf = _clf().fit(ds.train)
    with pytest.raises(ValueError):
        clf.predict(ds.validation, modality="text")
