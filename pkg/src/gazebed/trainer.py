"""Training loop for the crossmodal model.

The objective per batch is

    CE(audio) + CE(visual) + triplet_weight * (intra(A) + intra(V) + inter(A, V))

with ``reduction="mean"`` dividing every term by the batch size (the
triplet sums run over anchors) and ``"sum"`` leaving them summed.  Monomodal modes drop the
absent stream and the triplet term, and never hand the absent stream's
parameters to the optimizer.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np
from sklearn.preprocessing import StandardScaler

from . import autodiff as ad
from .evaluation import micro_f1
from .gaze_features import GazeConfig, N_FEATURES, extract_windowed
from .ingest import Utterance
from .model import CrossmodalNet, ModelConfig
from .optim import Adam
from .triplet import EmbeddingBatch, TripletOptions, full_triplet_loss

logger = logging.getLogger(__name__)

TRAIN_MODES = ("crossmodal", "monomodal_audio", "monomodal_visual")


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 1e-4
    epochs: int = 50
    seed: int = 0
    triplet_weight: float = 1.0
    margin: float = 1.0
    hinge: bool = True
    symmetrize_inter: bool = False
    mode: str = "crossmodal"
    alternate: bool = False
    select_on: str = "mean"
    reduction: str = "mean"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 for triplet mining")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if self.reduction not in ("mean", "sum"):
            raise ValueError("reduction must be 'mean' or 'sum'")
        if self.select_on not in ("mean", "audio", "video"):
            raise ValueError("select_on must be 'mean', 'audio' or 'video'")

    @property
    def triplet_options(self) -> TripletOptions:
        return TripletOptions(self.margin, self.hinge, self.symmetrize_inter)

    @property
    def test_modalities(self) -> tuple[str, ...]:
        return {"crossmodal": ("audio", "video"), "monomodal_audio": ("audio",), "monomodal_visual": ("video",)}[self.mode]

    def to_dict(self) -> dict:
        return asdict(self)


# -- features -----------------------------------------------------------------

@dataclass
class FeatureSet:
    """Per-utterance model inputs in array form.

    ``gaze`` is a list of ``(k_i, 103)`` arrays for windowed gaze, an
    ``(n, 103)`` array for averaged gaze, or ``None``.
    """

    ids: list[str]
    labels: np.ndarray
    audio: np.ndarray
    visual: list[np.ndarray]
    gaze: list[np.ndarray] | np.ndarray | None = None
    gaze_mode: str = "none"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.intp)
        self.audio = np.atleast_2d(np.asarray(self.audio, dtype=np.float64))
        n = len(self.ids)
        if not (len(self.labels) == len(self.visual) == self.audio.shape[0] == n):
            raise ValueError("feature set parts differ in length")
        if self.gaze_mode == "windowed":
            if any(g.shape[0] != v.shape[0] for g, v in zip(self.gaze, self.visual)):
                raise ValueError("windowed gaze rows must align with visual rows")
        elif self.gaze_mode == "averaged":
            self.gaze = np.atleast_2d(np.asarray(self.gaze, dtype=np.float64))

    def __len__(self):
        return len(self.ids)

    def subset(self, index) -> "FeatureSet":
        index = np.asarray(index, dtype=np.intp)
        gaze = self.gaze
        if self.gaze_mode == "windowed":
            gaze = [self.gaze[i] for i in index]
        elif self.gaze_mode == "averaged":
            gaze = self.gaze[index]
        return FeatureSet(
            [self.ids[i] for i in index], self.labels[index], self.audio[index],
            [self.visual[i] for i in index], gaze, self.gaze_mode,
        )

    def with_gaze_mode(self, gaze_mode: str) -> "FeatureSet":
        """Re-view windowed gaze as averaged or drop it, without re-extracting."""
        if gaze_mode == self.gaze_mode:
            return self
        if gaze_mode == "none":
            return replace(self, gaze=None, gaze_mode="none")
        if self.gaze_mode == "windowed" and gaze_mode == "averaged":
            return replace(self, gaze=np.vstack([g.mean(axis=0) for g in self.gaze]), gaze_mode="averaged")
        raise ValueError(f"cannot derive {gaze_mode!r} gaze from {self.gaze_mode!r}")


def subsample_frames(k: int, max_len: int | None) -> np.ndarray:
    if max_len is None or k <= max_len:
        return np.arange(k)
    return np.unique(np.round(np.linspace(0, k - 1, max_len)).astype(np.intp))


def prepare_features(
    utterances: Sequence[Utterance],
    gaze_mode: str = "none",
    gaze_config: GazeConfig | None = None,
    max_seq_len: int | None = None,
) -> FeatureSet:
    if gaze_mode not in ("none", "windowed", "averaged"):
        raise ValueError(f"unknown gaze_mode {gaze_mode!r}")
    visual, gaze = [], []
    for u in utterances:
        keep = subsample_frames(u.n_frames, max_seq_len)
        visual.append(u.visual_features[keep])
        if gaze_mode != "none":
            rows = extract_windowed(u, gaze_config)
            # averaged gaze is the mean over all frame windows, before subsampling
            gaze.append(rows[keep] if gaze_mode == "windowed" else rows.mean(axis=0))
    if gaze_mode == "averaged":
        gaze = np.vstack(gaze) if gaze else np.empty((0, N_FEATURES))
    return FeatureSet(
        ids=[u.id for u in utterances],
        labels=np.array([u.label for u in utterances], dtype=np.intp),
        audio=np.vstack([u.audio_features for u in utterances]),
        visual=visual,
        gaze=gaze if gaze_mode != "none" else None,
        gaze_mode=gaze_mode,
    )


class Standardizer:
    """Per-stream z-scoring with statistics from the training split only.

    Visual and windowed-gaze statistics pool all frames; audio and averaged
    gaze pool utterances.  Zero-variance dimensions keep a scale of 1.
    """

    def __init__(self):
        self.mean_: dict[str, np.ndarray] = {}
        self.scale_: dict[str, np.ndarray] = {}

    @staticmethod
    def _streams(fs: FeatureSet) -> dict[str, np.ndarray]:
        streams = {"audio": fs.audio, "visual": np.vstack(fs.visual)}
        if fs.gaze_mode == "windowed":
            streams["gaze"] = np.vstack(fs.gaze)
        elif fs.gaze_mode == "averaged":
            streams["gaze"] = fs.gaze
        return streams

    def fit(self, fs: FeatureSet) -> "Standardizer":
        if len(fs) == 0:
            raise ValueError("cannot fit a standardizer on an empty split")
        for name, X in self._streams(fs).items():
            scaler = StandardScaler().fit(X)
            self.mean_[name] = scaler.mean_
            self.scale_[name] = scaler.scale_
        self.gaze_mode_ = fs.gaze_mode
        return self

    def _apply(self, name, X):
        return (X - self.mean_[name]) / self.scale_[name]

    def transform(self, fs: FeatureSet) -> FeatureSet:
        if not self.mean_:
            raise RuntimeError("Standardizer is not fitted")
        gaze = fs.gaze
        if fs.gaze_mode != "none":
            if "gaze" not in self.mean_:
                raise ValueError("standardizer was fitted without gaze features")
            gaze = [self._apply("gaze", g) for g in fs.gaze] if fs.gaze_mode == "windowed" else self._apply("gaze", fs.gaze)
        return FeatureSet(
            fs.ids, fs.labels, self._apply("audio", fs.audio),
            [self._apply("visual", v) for v in fs.visual], gaze, fs.gaze_mode,
        )

    def transform_visual(self, fs: FeatureSet) -> FeatureSet:
        """Standardize visual and gaze streams, leaving audio as given."""
        out = self.transform(replace(fs, audio=np.broadcast_to(self.mean_["audio"], fs.audio.shape)))
        return replace(out, audio=fs.audio)

    def fit_transform(self, fs: FeatureSet) -> FeatureSet:
        return self.fit(fs).transform(fs)

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.mean_:
            out[f"{name}/mean"] = self.mean_[name]
            out[f"{name}/scale"] = self.scale_[name]
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "Standardizer":
        obj = cls()
        for key, value in arrays.items():
            name, kind = key.split("/")
            getattr(obj, f"{kind}_")[name] = np.asarray(value, dtype=np.float64)
        return obj


def fit_standardizer(train: FeatureSet) -> Standardizer:
    return Standardizer().fit(train)


# -- batching and losses --------------------------------------------------------

@dataclass
class Batch:
    labels: np.ndarray
    audio: np.ndarray
    visual: np.ndarray
    mask: np.ndarray
    gaze: np.ndarray | None


def make_batch(fs: FeatureSet) -> Batch:
    n = len(fs)
    lengths = np.array([v.shape[0] for v in fs.visual])
    T = int(lengths.max())
    V = fs.visual[0].shape[1]
    visual = np.zeros((n, T, V))
    mask = np.zeros((n, T))
    gaze = None
    if fs.gaze_mode == "windowed":
        gaze = np.zeros((n, T, fs.gaze[0].shape[1]))
    for i, v in enumerate(fs.visual):
        visual[i, : len(v)] = v
        mask[i, : len(v)] = 1.0
        if gaze is not None:
            gaze[i, : len(v)] = fs.gaze[i]
    if fs.gaze_mode == "averaged":
        gaze = fs.gaze
    return Batch(fs.labels, fs.audio, visual, mask, gaze)


def compute_losses(net: CrossmodalNet, batch: Batch, config: TrainConfig, parts: Sequence[str] | None = None):
    """Return ``(total, components)`` where ``total`` is a scalar Tensor.

    ``parts`` restricts the objective to a subset of
    ``("ce_audio", "ce_visual", "triplet")``; by default it follows the
    training mode.
    """
    if parts is None:
        parts = {
            "crossmodal": ("ce_audio", "ce_visual", "triplet"),
            "monomodal_audio": ("ce_audio",),
            "monomodal_visual": ("ce_visual",),
        }[config.mode]
    need_audio = "ce_audio" in parts or "triplet" in parts
    need_visual = "ce_visual" in parts or "triplet" in parts
    e_a = net.embed_audio(batch.audio) if need_audio else None
    e_v = net.embed_visual(batch.visual, batch.mask, batch.gaze) if need_visual else None
    terms = {}
    if "ce_audio" in parts:
        terms["ce_audio"] = ad.softmax_cross_entropy(net.logits(e_a), batch.labels, config.reduction)
    if "ce_visual" in parts:
        terms["ce_visual"] = ad.softmax_cross_entropy(net.logits(e_v), batch.labels, config.reduction)
    if "triplet" in parts and config.triplet_weight:
        trip = full_triplet_loss(
            EmbeddingBatch(e_a, batch.labels, "audio"),
            EmbeddingBatch(e_v, batch.labels, "visual"),
            config.triplet_options,
        )
        per_anchor = 1.0 / len(batch.labels) if config.reduction == "mean" else 1.0
        terms["triplet"] = ad.scale(trip, config.triplet_weight * per_anchor)
    total = None
    for t in terms.values():
        total = t if total is None else ad.add(total, t)
    components = {k: v.item() for k, v in terms.items()}
    if "triplet" in terms:
        components["triplet"] = trip.item()
    components["total"] = total.item()
    if not all(math.isfinite(v) for v in components.values()):
        raise NonFiniteLossError(f"non-finite loss components: {components}")
    return total, components


def _optimise(net, optimizer, batch, config, parts=None):
    optimizer.zero_grad()
    net.zero_grad()
    total, components = compute_losses(net, batch, config, parts)
    ad.backward(total)
    optimizer.step()
    return components


def train_step(batch: FeatureSet | Batch, net: CrossmodalNet, optimizer: Adam, config: TrainConfig) -> dict[str, float]:
    """One optimizer update on an already standardized batch."""
    if isinstance(batch, FeatureSet):
        if len(batch) < 2:
            raise ValueError("a training batch needs at least two utterances")
        batch = make_batch(batch)
    if config.alternate and config.mode == "crossmodal":
        first = _optimise(net, optimizer, batch, config, ("ce_audio", "triplet"))
        second = _optimise(net, optimizer, batch, config, ("ce_visual",))
        merged = {**first, **second}
        merged["total"] = first["total"] + second["total"]
        return merged
    return _optimise(net, optimizer, batch, config)


# -- fitted model, checkpoints ---------------------------------------------------

class FittedModel:
    """A trained network together with the preprocessing it was trained with."""

    def __init__(self, net: CrossmodalNet, standardizer: Standardizer, gaze_config: GazeConfig | None = None,
                 train_config: TrainConfig | None = None):
        self.net = net
        self.standardizer = standardizer
        self.gaze_config = gaze_config or GazeConfig()
        self.train_config = train_config or TrainConfig()

    @property
    def config(self) -> ModelConfig:
        return self.net.config

    def features(self, utterances: Sequence[Utterance]) -> FeatureSet:
        c = self.config
        return prepare_features(utterances, c.gaze_mode, self.gaze_config, c.max_seq_len)

    def predict_proba_features(self, fs: FeatureSet, modality: str, standardized: bool = False,
                               chunk: int = 256) -> np.ndarray:
        """Class probabilities computed from one modality's features only."""
        if modality not in ("audio", "video"):
            raise ValueError(f"modality must be 'audio' or 'video', got {modality!r}")
        out = []
        for start in range(0, len(fs), chunk):
            idx = np.arange(start, min(start + chunk, len(fs)))
            if modality == "audio":
                xa = fs.audio[idx]
                if not standardized:
                    xa = self.standardizer._apply("audio", xa)
                e = self.net.embed_audio(xa)
            else:
                part = _visual_only(fs, idx)
                if not standardized:
                    part = self.standardizer.transform_visual(part)
                b = make_batch(part)
                e = self.net.embed_visual(b.visual, b.mask, b.gaze)
            out.append(self.net.classify(e))
        return np.vstack(out) if out else np.empty((0, self.config.num_classes))

    def predict_features(self, fs: FeatureSet, modality: str, standardized: bool = False) -> np.ndarray:
        # argmax keeps the lowest class id on ties
        return np.argmax(self.predict_proba_features(fs, modality, standardized), axis=1)

    def save(self, path, header: dict | None = None) -> None:
        save_checkpoint(path, self, header)

    @classmethod
    def load(cls, path) -> "FittedModel":
        return load_checkpoint(path)


def _visual_only(fs: FeatureSet, idx) -> FeatureSet:
    # audio is blanked so nothing downstream can read it
    sub = fs.subset(idx)
    return replace(sub, audio=np.zeros_like(sub.audio))


def _write_npy(zf: zipfile.ZipFile, name: str, array: np.ndarray) -> None:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.asarray(array, order="C"), allow_pickle=False)
    info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, buf.getvalue())


def save_checkpoint(path, model: FittedModel, header: dict | None = None) -> None:
    """Write an ``.npz`` archive with fixed timestamps (byte-reproducible).

    Entries: ``param/<name>`` per parameter, ``standardizer/<stream>/<mean|scale>``
    and a JSON ``meta`` string with the model, gaze and training configs.
    """
    meta = {
        "format": "gazebed-checkpoint-1",
        "header": header or {},
        "model_config": model.config.to_dict(),
        "gaze_config": asdict(model.gaze_config),
        "train_config": model.train_config.to_dict(),
        "param_names": list(model.net.params),
    }
    with zipfile.ZipFile(path, "w") as zf:
        _write_npy(zf, "meta", np.array(json.dumps(meta, sort_keys=True)))
        for name, p in model.net.params.items():
            _write_npy(zf, f"param/{name}", p.data)
        for key, value in model.standardizer.to_arrays().items():
            _write_npy(zf, f"standardizer/{key}", value)


def load_checkpoint(path) -> FittedModel:
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["meta"]))
        if meta.get("format") != "gazebed-checkpoint-1":
            raise ValueError(f"{path}: not a gazebed checkpoint")
        params = {k[len("param/"):]: archive[k] for k in archive.files if k.startswith("param/")}
        std = {k[len("standardizer/"):]: archive[k] for k in archive.files if k.startswith("standardizer/")}
    mc = meta["model_config"]
    net = CrossmodalNet(ModelConfig(**mc))
    net.load_state_dict(params)
    gc = meta["gaze_config"]
    gc["pupil_landmarks"] = tuple(gc["pupil_landmarks"])
    tc = {f.name: meta["train_config"][f.name] for f in fields(TrainConfig) if f.name in meta["train_config"]}
    model = FittedModel(net, Standardizer.from_arrays(std), GazeConfig(**gc), TrainConfig(**tc))
    model.header = meta.get("header", {})
    return model


# -- training -------------------------------------------------------------------

LOG_FIELDS = ("epoch", "split", "modality", "ce_audio", "ce_visual", "triplet", "total", "micro_f1")


@dataclass
class TrainResult:
    model: FittedModel
    log: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_score: float | None = None

    def best_val_f1(self, modality: str) -> float:
        """Highest validation micro F1 for ``modality`` over all epochs."""
        scores = [r["micro_f1"] for r in self.log if r["split"] == "validation" and r["modality"] == modality]
        return max(scores) if scores else float("nan")


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    out = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) < 2:
        out[-2] = np.concatenate([out[-2], out.pop()])
    return [b for b in out if len(b) >= 2]


def train(
    train_set: FeatureSet,
    val_set: FeatureSet | None,
    model_config: ModelConfig,
    config: TrainConfig,
    gaze_config: GazeConfig | None = None,
) -> TrainResult:
    """Train from raw (unstandardized) features.

    The standardizer is fitted on ``train_set`` alone.  After every epoch
    the validation split is scored per test modality and the parameters of
    the best epoch (by ``config.select_on``) are restored at the end.
    """
    if len(train_set) < 2:
        raise ValueError("need at least two training utterances")
    if train_set.gaze_mode != model_config.gaze_mode:
        train_set = train_set.with_gaze_mode(model_config.gaze_mode)
    if val_set is not None and val_set.gaze_mode != model_config.gaze_mode:
        val_set = val_set.with_gaze_mode(model_config.gaze_mode)

    standardizer = fit_standardizer(train_set)
    train_std = standardizer.transform(train_set)
    val_std = standardizer.transform(val_set) if val_set is not None and len(val_set) else None

    net = CrossmodalNet(model_config, seed=config.seed)
    model = FittedModel(net, standardizer, gaze_config, config)
    result = TrainResult(model)
    if config.epochs == 0:
        return result

    optimizer = Adam(net.parameters_for(config.mode), lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng([config.seed, 0x5EED])
    modalities = config.test_modalities
    select = config.select_on if config.mode == "crossmodal" else modalities[0]
    best_state = None

    for epoch in range(1, config.epochs + 1):
        sums: dict[str, float] = {}
        batches = _batches(len(train_std), config.batch_size, rng)
        for idx in batches:
            comp = train_step(train_std.subset(idx), net, optimizer, config)
            for k, v in comp.items():
                sums[k] = sums.get(k, 0.0) + v
        row = {"epoch": epoch, "split": "train", "modality": "all", "micro_f1": ""}
        for k in ("ce_audio", "ce_visual", "triplet", "total"):
            row[k] = sums[k] / len(batches) if k in sums else ""
        result.log.append(row)

        if val_std is None:
            continue
        scores = {}
        for modality in modalities:
            preds = model.predict_features(val_std, modality, standardized=True)
            scores[modality] = micro_f1(preds, val_std.labels)
            result.log.append({"epoch": epoch, "split": "validation", "modality": modality,
                               "ce_audio": "", "ce_visual": "", "triplet": "", "total": "",
                               "micro_f1": scores[modality]})
        score = float(np.mean(list(scores.values()))) if select == "mean" else scores[select]
        if result.best_score is None or score > result.best_score:
            result.best_score, result.best_epoch = score, epoch
            best_state = net.state_dict()
        logger.debug("epoch %d: %s", epoch, scores)

    if best_state is not None:
        net.load_state_dict(best_state)
    return result


def write_metrics_log(path, log: Sequence[dict], header_lines: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for row in log:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


# -- multi-seed harness -----------------------------------------------------------

@dataclass
class SeedSummary:
    seeds: list[int]
    scores: dict[str, np.ndarray]

    def mean(self, modality: str) -> float:
        return float(np.mean(self.scores[modality]))

    def standard_error(self, modality: str) -> float:
        s = self.scores[modality]
        return float(np.std(s, ddof=1) / np.sqrt(len(s))) if len(s) > 1 else 0.0


def _one_seed(train_set, val_set, model_config, config, gaze_config, seed):
    res = train(train_set, val_set, model_config, replace(config, seed=seed), gaze_config)
    return {m: res.best_val_f1(m) for m in replace(config, seed=seed).test_modalities}


def repeat_training(
    train_set: FeatureSet,
    val_set: FeatureSet,
    model_config: ModelConfig,
    config: TrainConfig,
    seeds: Sequence[int] = tuple(range(20)),
    gaze_config: GazeConfig | None = None,
    n_jobs: int = 1,
) -> SeedSummary:
    """Train once per seed and collect best validation micro F1 per test modality."""
    if n_jobs == 1:
        rows = [_one_seed(train_set, val_set, model_config, config, gaze_config, s) for s in seeds]
    else:
        from joblib import Parallel, delayed

        rows = Parallel(n_jobs=n_jobs)(
            delayed(_one_seed)(train_set, val_set, model_config, config, gaze_config, s) for s in seeds
        )
    scores = {m: np.array([r[m] for r in rows]) for m in config.test_modalities}
    return SeedSummary(list(seeds), scores)
