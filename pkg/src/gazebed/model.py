"""Audio, visual and gaze encoders, gaze fusion, and the shared classifier.

Every encoder is a single-layer GRU whose last valid hidden state is the
embedding.  Audio (one vector per utterance) and averaged gaze are fed as
length-1 sequences.  The classifier is a GRU step on the embedding followed
by a dense softmax head, applied identically to audio and visual embeddings.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

FUSION_MODES = ("early", "model_level")
GAZE_MODES = ("none", "windowed", "averaged")


@dataclass
class ModelConfig:
    visual_dim: int
    audio_dim: int = 88
    gaze_dim: int = 103
    embedding_dim: int = 120
    classifier_hidden: int = 120
    num_classes: int = 7
    fusion_mode: str = "model_level"
    gaze_mode: str = "averaged"
    max_seq_len: int | None = None

    def __post_init__(self):
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}")
        if self.gaze_mode not in GAZE_MODES:
            raise ValueError(f"gaze_mode must be one of {GAZE_MODES}, got {self.gaze_mode!r}")
        if self.gaze_mode == "averaged" and self.fusion_mode != "model_level":
            raise ValueError("averaged gaze features are only defined for model-level fusion")
        if self.embedding_dim < 1 or self.classifier_hidden < 1:
            raise ValueError("embedding_dim and classifier_hidden must be positive")
        if min(self.visual_dim, self.audio_dim) < 1 or self.gaze_dim < 0 or self.num_classes < 2:
            raise ValueError("invalid input dimensions")
        if self.max_seq_len is not None and self.max_seq_len < 1:
            raise ValueError("max_seq_len must be positive")

    @property
    def uses_gaze(self) -> bool:
        return self.gaze_mode != "none"

    def to_dict(self) -> dict:
        return asdict(self)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class CrossmodalNet:
    """Parameters plus forward passes; no training state.

    ``params`` is an ordered mapping ``name -> Parameter``; names are
    prefixed by the sub-network they belong to (``audio``, ``visual``,
    ``gaze``, ``proj``, ``classifier``, ``head``).
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.params: OrderedDict[str, Parameter] = OrderedDict()
        c = config
        E = c.embedding_dim
        self._add_gru(rng, "audio", c.audio_dim, E)
        if c.uses_gaze and c.fusion_mode == "early":
            self._add_gru(rng, "visual", c.visual_dim + c.gaze_dim, E)
        else:
            self._add_gru(rng, "visual", c.visual_dim, E)
        if c.uses_gaze and c.fusion_mode == "model_level":
            self._add_gru(rng, "gaze", c.gaze_dim, E)
            self._add_dense(rng, "proj", 2 * E, E)
        self._add_gru(rng, "classifier", E, c.classifier_hidden)
        self._add_dense(rng, "head", c.classifier_hidden, c.num_classes)

    def _add_gru(self, rng, prefix, d_in, hidden):
        self.params[f"{prefix}.W"] = Parameter(_uniform(rng, (d_in, 3 * hidden), max(d_in, 1)), f"{prefix}.W")
        self.params[f"{prefix}.U"] = Parameter(_uniform(rng, (hidden, 3 * hidden), hidden), f"{prefix}.U")
        self.params[f"{prefix}.b"] = Parameter(_uniform(rng, (3 * hidden,), hidden), f"{prefix}.b")

    def _add_dense(self, rng, prefix, d_in, d_out):
        self.params[f"{prefix}.W"] = Parameter(_uniform(rng, (d_in, d_out), d_in), f"{prefix}.W")
        self.params[f"{prefix}.b"] = Parameter(_uniform(rng, (d_out,), d_in), f"{prefix}.b")

    def _gru(self, prefix, x, mask=None) -> Tensor:
        p = self.params
        return ad.gru(x, mask, p[f"{prefix}.W"], p[f"{prefix}.U"], p[f"{prefix}.b"])

    # -- parameter bookkeeping ------------------------------------------------

    def module_names(self) -> list[str]:
        return list(OrderedDict.fromkeys(name.split(".")[0] for name in self.params))

    def parameter_counts(self) -> dict[str, int]:
        counts: dict[str, int] = OrderedDict()
        for name, p in self.params.items():
            mod = name.split(".")[0]
            counts[mod] = counts.get(mod, 0) + p.data.size
        return counts

    def parameters_for(self, mode: str = "crossmodal") -> list[Parameter]:
        """Parameters touched by a training mode; the absent stream is left out."""
        audio = {"audio"}
        visual = {"visual", "gaze", "proj"}
        shared = {"classifier", "head"}
        if mode == "crossmodal":
            keep = audio | visual | shared
        elif mode == "monomodal_audio":
            keep = audio | shared
        elif mode == "monomodal_visual":
            keep = visual | shared
        else:
            raise ValueError(f"unknown training mode {mode!r}")
        return [p for name, p in self.params.items() if name.split(".")[0] in keep]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in self.params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {value.shape} vs {p.data.shape}")
            p.data = value.copy()

    def zero_grad(self) -> None:
        ad.zero_grad(self.params.values())

    # -- forward --------------------------------------------------------------

    def embed_audio(self, x_audio) -> Tensor:
        x = np.asarray(x_audio, dtype=np.float64) if not isinstance(x_audio, Tensor) else x_audio.data
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.config.audio_dim:
            raise ValueError(f"audio dim {x.shape[1]} != {self.config.audio_dim}")
        return self._gru("audio", x[:, None, :])

    def embed_visual(self, x_visual: np.ndarray, mask: np.ndarray | None = None, x_gaze: np.ndarray | None = None) -> Tensor:
        """Visual (optionally gaze-enhanced) embeddings for a padded batch.

        ``x_visual`` is (n, T, V).  ``x_gaze`` is (n, T, G) for windowed
        gaze and (n, G) for averaged gaze.
        """
        c = self.config
        xv = np.asarray(x_visual, dtype=np.float64)
        if xv.ndim == 2:
            xv = xv[None]
        if xv.shape[2] != c.visual_dim:
            raise ValueError(f"visual dim {xv.shape[2]} != {c.visual_dim}")
        if not c.uses_gaze:
            return self._gru("visual", xv, mask)
        if x_gaze is None:
            raise ValueError(f"gaze_mode={c.gaze_mode!r} needs gaze input")
        xg = np.asarray(x_gaze, dtype=np.float64)
        if c.gaze_mode == "windowed":
            if xg.ndim == 2:
                xg = xg[None]
            if xg.shape[:2] != xv.shape[:2]:
                raise ValueError(f"gaze frames {xg.shape[:2]} do not align with visual frames {xv.shape[:2]}")
        else:
            if xg.ndim == 1:
                xg = xg[None]
            if xg.shape[0] != xv.shape[0]:
                raise ValueError("one averaged gaze vector per utterance expected")
            xg = xg[:, None, :]
        if xg.shape[2] != c.gaze_dim:
            raise ValueError(f"gaze dim {xg.shape[2]} != {c.gaze_dim}")
        if c.fusion_mode == "early":
            return self._gru("visual", np.concatenate([xv, xg], axis=2), mask)
        e_v = self._gru("visual", xv, mask)
        e_g = self._gru("gaze", xg, mask if c.gaze_mode == "windowed" else None)
        p = self.params
        return ad.linear(ad.concat([e_v, e_g], axis=1), p["proj.W"], p["proj.b"])

    def logits(self, embeddings) -> Tensor:
        e = ad.as_tensor(embeddings)
        if e.data.ndim == 1:
            e = ad.reshape(e, (1, -1))
        if e.shape[1] != self.config.embedding_dim:
            raise ValueError(f"embedding dim {e.shape[1]} != {self.config.embedding_dim}")
        n = e.shape[0]
        seq = ad.reshape(e, (n, 1, e.shape[1]))
        hidden = self._gru("classifier", seq)
        p = self.params
        return ad.linear(hidden, p["head.W"], p["head.b"])

    def classify(self, embeddings) -> np.ndarray:
        """Class probabilities, one row per embedding."""
        return ad.softmax(self.logits(embeddings).data)

    def describe(self) -> str:
        c = self.config
        lines = [
            f"fusion_mode={c.fusion_mode} gaze_mode={c.gaze_mode} E={c.embedding_dim} "
            f"V={c.visual_dim} G={c.gaze_dim} M={c.audio_dim} classes={c.num_classes}"
        ]
        total = 0
        for mod, count in self.parameter_counts().items():
            lines.append(f"  {mod:<12s}{count:>10d}")
            total += count
        lines.append(f"  {'total':<12s}{total:>10d}")
        return "\n".join(lines)
