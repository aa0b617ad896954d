"""scikit-learn style wrapper around feature preparation and training."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .evaluation import micro_f1
from .gaze_features import N_FEATURES, GazeConfig
from .ingest import Utterance
from .model import ModelConfig
from .trainer import FeatureSet, FittedModel, TrainConfig, TrainResult, prepare_features, train


def check_utterances(X, allow_empty: bool = False) -> list[Utterance]:
    """Validate that ``X`` is a sequence of :class:`Utterance` with consistent dims."""
    if isinstance(X, Utterance):
        raise TypeError("expected a sequence of Utterance objects, got a single Utterance")
    try:
        utts = list(X)
    except TypeError as exc:
        raise TypeError(f"expected a sequence of Utterance objects, got {type(X).__name__}") from exc
    if not utts and not allow_empty:
        raise ValueError("no utterances given")
    bad = [type(u).__name__ for u in utts if not isinstance(u, Utterance)]
    if bad:
        raise TypeError(f"expected Utterance objects, got {bad[0]}")
    if utts:
        v = {u.visual_features.shape[1] for u in utts}
        a = {u.audio_features.shape[0] for u in utts}
        if len(v) > 1 or len(a) > 1:
            raise ValueError(f"inconsistent feature dims: visual {sorted(v)}, audio {sorted(a)}")
    return utts


def check_is_fitted(estimator) -> None:
    if getattr(estimator, "model_", None) is None:
        raise NotFittedError(f"{type(estimator).__name__} is not fitted yet; call fit first")


class CrossmodalEmotionClassifier(ClassifierMixin, BaseEstimator):
    """Trains audio and (gaze-enhanced) visual encoders with a shared classifier.

    ``fit`` takes a list of :class:`~gazebed.ingest.Utterance`; labels are
    read from the utterances unless ``y`` is given.  Prediction uses a single
    modality, chosen by ``test_modality`` or the ``modality`` argument.
    """

    def __init__(
        self,
        embedding_dim: int = 120,
        classifier_hidden: int = 120,
        fusion_mode: str = "model_level",
        gaze_mode: str = "averaged",
        mode: str = "crossmodal",
        batch_size: int = 64,
        lr: float = 1e-4,
        weight_decay: float = 1e-4,
        epochs: int = 50,
        triplet_weight: float = 1.0,
        margin: float = 1.0,
        hinge: bool = True,
        symmetrize_inter: bool = False,
        select_on: str = "mean",
        max_seq_len: int | None = None,
        test_modality: str = "video",
        gaze_config: GazeConfig | None = None,
        random_state: int = 0,
    ):
        self.embedding_dim = embedding_dim
        self.classifier_hidden = classifier_hidden
        self.fusion_mode = fusion_mode
        self.gaze_mode = gaze_mode
        self.mode = mode
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.triplet_weight = triplet_weight
        self.margin = margin
        self.hinge = hinge
        self.symmetrize_inter = symmetrize_inter
        self.select_on = select_on
        self.max_seq_len = max_seq_len
        self.test_modality = test_modality
        self.gaze_config = gaze_config
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, lr=self.lr, weight_decay=self.weight_decay, epochs=self.epochs,
            seed=self.random_state, triplet_weight=self.triplet_weight, margin=self.margin, hinge=self.hinge,
            symmetrize_inter=self.symmetrize_inter, mode=self.mode, select_on=self.select_on,
        )

    def _features(self, X) -> FeatureSet:
        if isinstance(X, FeatureSet):
            return X
        return prepare_features(check_utterances(X), self.gaze_mode, self.gaze_config, self.max_seq_len)

    def fit(self, X, y=None, X_val=None):
        fs = self._features(X)
        if y is not None:
            y = np.asarray(y, dtype=np.intp)
            if y.shape != (len(fs),):
                raise ValueError(f"y has shape {y.shape}, expected ({len(fs)},)")
            fs = replace(fs, labels=y)
        val = self._features(X_val) if X_val is not None else None
        model_config = ModelConfig(
            visual_dim=fs.visual[0].shape[1], audio_dim=fs.audio.shape[1], gaze_dim=N_FEATURES,
            embedding_dim=self.embedding_dim, classifier_hidden=self.classifier_hidden,
            fusion_mode=self.fusion_mode, gaze_mode=self.gaze_mode, max_seq_len=self.max_seq_len,
        )
        self.result_: TrainResult = train(fs, val, model_config, self._train_config(), self.gaze_config)
        self.model_: FittedModel = self.result_.model
        self.classes_ = np.arange(model_config.num_classes)
        return self

    def _modality(self, modality):
        m = modality or self.test_modality
        if m not in ("audio", "video"):
            raise ValueError(f"modality must be 'audio' or 'video', got {m!r}")
        return m

    def predict_proba(self, X, modality: str | None = None) -> np.ndarray:
        check_is_fitted(self)
        fs = X if isinstance(X, FeatureSet) else self.model_.features(check_utterances(X))
        return self.model_.predict_proba_features(fs, self._modality(modality))

    def predict(self, X, modality: str | None = None) -> np.ndarray:
        return np.argmax(self.predict_proba(X, modality), axis=1)

    def predict_features(self, fs: FeatureSet, modality: str) -> np.ndarray:
        check_is_fitted(self)
        return self.model_.predict_features(fs, modality)

    def score(self, X, y=None, modality: str | None = None) -> float:
        """Micro F1 (equal to accuracy) for one test modality."""
        preds = self.predict(X, modality)
        if y is None:
            y = X.labels if isinstance(X, FeatureSet) else [u.label for u in X]
        return micro_f1(preds, np.asarray(y, dtype=np.intp))

    @property
    def config(self) -> ModelConfig:
        check_is_fitted(self)
        return self.model_.config


__all__ = ["CrossmodalEmotionClassifier", "check_utterances", "check_is_fitted"]
