"""Statistical gaze features computed from face-tracker frames.

Nine per-frame base channels (four numeric, five binary) are summarised by
window-level functionals into a 103-dimensional vector.  The ordering is
fixed and exported as :data:`FEATURE_NAMES`; ``docs/feature_order.md`` lists
it in full.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .ingest import FrameRecord, Utterance

NUMERIC_FUNCTIONALS = (
    "min", "max", "mean", "median", "q1", "q3", "std",
    "iqr12", "iqr23", "iqr13", "lr_intercept", "lr_slope",
)

# (channel, functionals) in output order
NUMERIC_BLOCKS = (
    ("gaze_angle_x", NUMERIC_FUNCTIONALS),
    ("gaze_angle_y", NUMERIC_FUNCTIONALS),
    ("d_gaze_angle_x", NUMERIC_FUNCTIONALS),
    ("d_gaze_angle_y", NUMERIC_FUNCTIONALS),
    ("pupil_diameter", NUMERIC_FUNCTIONALS),
    ("d_pupil_diameter", tuple(f for f in NUMERIC_FUNCTIONALS if f != "median")),
    ("blink_intensity", ("max", "mean", "median", "q3", "std", "iqr12", "iqr23", "iqr13", "lr_intercept", "lr_slope")),
)
EPISODE_BLOCKS = (
    ("dilation", ("time_ratio", "mean_time", "max_time", "total_time")),
    ("constriction", ("time_ratio", "mean_time", "max_time", "total_time")),
    ("approach", ("time_ratio", "mean_time", "max_time", "median_time")),
    ("eyes_closed", ("time_ratio", "min_time", "max_time", "mean_time", "median_time")),
    ("fixation", ("time_ratio", "min_time", "max_time", "mean_time", "median_time")),
)

FEATURE_NAMES = tuple(
    f"{channel}_{func}" for channel, funcs in NUMERIC_BLOCKS + EPISODE_BLOCKS for func in funcs
)
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 103

NUMERIC_CHANNELS = tuple(c for c, _ in NUMERIC_BLOCKS)
BINARY_CHANNELS = tuple(c for c, _ in EPISODE_BLOCKS)

# OpenFace 56-point eye layout: the first eye's pupil ring
DEFAULT_PUPIL_LANDMARKS = tuple(range(20, 28))


class NoValidFramesError(ValueError):
    pass


@dataclass(frozen=True)
class GazeConfig:
    blink_threshold: float = 1.0
    fixation_threshold: float = 0.01
    min_confidence: float = 0.0
    pupil_landmarks: tuple[int, ...] = DEFAULT_PUPIL_LANDMARKS

    def __post_init__(self):
        object.__setattr__(self, "pupil_landmarks", tuple(int(i) for i in self.pupil_landmarks))
        if len(self.pupil_landmarks) < 2:
            raise ValueError("need at least two pupil landmarks")


@dataclass
class BaseGazeSeries:
    gaze_angle_x: np.ndarray
    gaze_angle_y: np.ndarray
    d_gaze_angle_x: np.ndarray
    d_gaze_angle_y: np.ndarray
    pupil_diameter: np.ndarray
    d_pupil_diameter: np.ndarray
    blink_intensity: np.ndarray
    dilation: np.ndarray
    constriction: np.ndarray
    eyes_closed: np.ndarray
    approach: np.ndarray
    fixation: np.ndarray
    validity: np.ndarray
    _numeric: np.ndarray = field(init=False, repr=False)
    _binary: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._numeric = np.vstack([getattr(self, c) for c in NUMERIC_CHANNELS]).astype(np.float64)
        self._binary = np.vstack([getattr(self, c) for c in BINARY_CHANNELS]).astype(bool)
        lengths = {len(self.validity), self._numeric.shape[1], self._binary.shape[1]}
        if len(lengths) != 1:
            raise ValueError("base channels differ in length")

    def __len__(self):
        return len(self.validity)


def _delta_from_previous_valid(x: np.ndarray, valid: np.ndarray) -> np.ndarray:
    d = np.zeros_like(x)
    idx = np.flatnonzero(valid)
    d[idx[1:]] = np.diff(x[idx])
    return d


def compute_base_series(frames: Sequence[FrameRecord], fps: float, config: GazeConfig | None = None) -> BaseGazeSeries:
    """Derive the per-frame base channels.

    Deltas are taken against the previous *valid* frame and are zero at the
    first valid frame; invalid frames get zero deltas and false masks.
    """
    cfg = config or GazeConfig()
    if len(frames) == 0:
        raise ValueError("empty frame sequence")
    valid = np.array([bool(fr.success) and fr.confidence >= cfg.min_confidence for fr in frames])
    if not valid.any():
        raise NoValidFramesError("no valid frames")

    gx = np.array([fr.gaze_angle_x for fr in frames], dtype=np.float64)
    gy = np.array([fr.gaze_angle_y for fr in frames], dtype=np.float64)
    blink = np.array([fr.au45_intensity for fr in frames], dtype=np.float64)
    lmk = np.stack([np.asarray(fr.eye_landmarks_3d, dtype=np.float64) for fr in frames])
    if max(cfg.pupil_landmarks) >= lmk.shape[1]:
        raise ValueError(
            f"pupil landmark index {max(cfg.pupil_landmarks)} out of range for {lmk.shape[1]} eye landmarks"
        )
    pupil = lmk[:, list(cfg.pupil_landmarks), :]
    centroid = pupil.mean(axis=1, keepdims=True)
    diameter = 2.0 * np.linalg.norm(pupil - centroid, axis=2).mean(axis=1)
    depth = lmk[:, :, 2].mean(axis=1)

    dgx = _delta_from_previous_valid(gx, valid)
    dgy = _delta_from_previous_valid(gy, valid)
    ddiam = _delta_from_previous_valid(diameter, valid)
    ddepth = _delta_from_previous_valid(depth, valid)

    return BaseGazeSeries(
        gaze_angle_x=gx,
        gaze_angle_y=gy,
        d_gaze_angle_x=dgx,
        d_gaze_angle_y=dgy,
        pupil_diameter=diameter,
        d_pupil_diameter=ddiam,
        blink_intensity=blink,
        dilation=(ddiam > 0) & valid,
        constriction=(ddiam < 0) & valid,
        eyes_closed=(blink >= cfg.blink_threshold) & valid,
        approach=(ddepth > 0) & valid,
        fixation=(np.hypot(dgx, dgy) <= cfg.fixation_threshold) & valid,
        validity=valid,
    )


def _run_lengths(mask: np.ndarray) -> np.ndarray:
    padded = np.concatenate(([0], mask.astype(np.int8), [0]))
    edges = np.diff(padded)
    return np.flatnonzero(edges == -1) - np.flatnonzero(edges == 1)


def _numeric_stats(values: np.ndarray, positions: np.ndarray) -> dict[str, np.ndarray]:
    # values: (channels, n); positions: (n,) frame offsets within the window
    q1, med, q3 = np.quantile(values, [0.25, 0.5, 0.75], axis=1)
    mean = values.mean(axis=1)
    if values.shape[1] > 1:
        pc = positions - positions.mean()
        slope = (values - mean[:, None]) @ pc / (pc @ pc)
    else:
        slope = np.zeros(values.shape[0])
    return {
        "min": values.min(axis=1),
        "max": values.max(axis=1),
        "mean": mean,
        "median": med,
        "q1": q1,
        "q3": q3,
        "std": values.std(axis=1),
        "iqr12": med - q1,
        "iqr23": q3 - med,
        "iqr13": q3 - q1,
        "lr_intercept": mean - slope * positions.mean(),
        "lr_slope": slope,
    }


def _episode_stats(mask: np.ndarray, n_valid: int, fps: float) -> dict[str, float]:
    runs = _run_lengths(mask) / fps
    if runs.size == 0:
        return dict.fromkeys(("time_ratio", "min_time", "max_time", "mean_time", "median_time", "total_time"), 0.0)
    return {
        "time_ratio": mask.sum() / n_valid,
        "min_time": runs.min(),
        "max_time": runs.max(),
        "mean_time": runs.mean(),
        "median_time": float(np.median(runs)),
        "total_time": runs.sum(),
    }


def apply_functionals(series: BaseGazeSeries, window: tuple[int, int] | slice, fps: float) -> np.ndarray:
    """Summarise frames ``window = (start, stop)`` (half-open) into 103 features.

    Numeric functionals use valid frames only, with linear-interpolation
    quantiles, population std, and an OLS line fitted against the frame
    offset within the window.  Episodes are maximal runs of true frames;
    invalid frames break runs and are left out of the time-ratio denominator.
    """
    if isinstance(window, slice):
        start, stop, _ = window.indices(len(series))
    else:
        start, stop = window
    if not 0 <= start < stop <= len(series):
        raise ValueError(f"window [{start}, {stop}) outside series of length {len(series)}")
    valid = series.validity[start:stop]
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise NoValidFramesError(f"no valid frames in window [{start}, {stop})")

    positions = np.flatnonzero(valid).astype(np.float64)
    numeric = series._numeric[:, start:stop][:, valid]
    stats = _numeric_stats(numeric, positions)
    out = []
    for ci, (_, funcs) in enumerate(NUMERIC_BLOCKS):
        out.extend(stats[f][ci] for f in funcs)
    binary = series._binary[:, start:stop]
    for ci, (_, funcs) in enumerate(EPISODE_BLOCKS):
        ep = _episode_stats(binary[ci], n_valid, fps)
        out.extend(ep[f] for f in funcs)
    return np.asarray(out, dtype=np.float64)


def window_bounds(index: int, length: int, n_frames: int) -> tuple[int, int]:
    """Centered window of ``length`` frames around ``index``.

    Near the edges the window is shifted to stay inside the sequence, so it
    keeps its full length whenever ``n_frames >= length``.
    """
    start = min(max(0, index - length // 2), max(0, n_frames - length))
    return start, min(n_frames, start + length)


def windowed_features(series: BaseGazeSeries, fps: float) -> np.ndarray:
    k = len(series)
    length = max(1, int(round(fps)))
    rows = np.empty((k, N_FEATURES))
    has_valid = np.zeros(k, dtype=bool)
    cum = np.concatenate(([0], np.cumsum(series.validity)))
    for i in range(k):
        start, stop = window_bounds(i, length, k)
        if cum[stop] > cum[start]:
            rows[i] = apply_functionals(series, (start, stop), fps)
            has_valid[i] = True
    if not has_valid.all():
        donors = np.flatnonzero(has_valid)
        for i in np.flatnonzero(~has_valid):
            # nearest window with a valid frame, earlier one on ties
            rows[i] = rows[donors[np.argmin(np.abs(donors - i))]]
    return rows


def extract_windowed(utterance: Utterance, config: GazeConfig | None = None) -> np.ndarray:
    """One 103-dim row per frame, aligned with the visual feature rows."""
    series = compute_base_series(utterance.frames, utterance.fps, config)
    return windowed_features(series, utterance.fps)


def extract_averaged(utterance: Utterance, config: GazeConfig | None = None) -> np.ndarray:
    return extract_windowed(utterance, config).mean(axis=0)


class GazeFeatureExtractor(BaseEstimator, TransformerMixin):
    """Stateless transformer from utterances to gaze feature arrays.

    ``transform`` returns a list of ``(k_i, 103)`` arrays in ``windowed`` mode
    and an ``(n, 103)`` array in ``averaged`` mode.
    """

    def __init__(
        self,
        mode: str = "windowed",
        blink_threshold: float = 1.0,
        fixation_threshold: float = 0.01,
        min_confidence: float = 0.0,
        pupil_landmarks: tuple[int, ...] = DEFAULT_PUPIL_LANDMARKS,
    ):
        self.mode = mode
        self.blink_threshold = blink_threshold
        self.fixation_threshold = fixation_threshold
        self.min_confidence = min_confidence
        self.pupil_landmarks = pupil_landmarks

    def _config(self) -> GazeConfig:
        return GazeConfig(self.blink_threshold, self.fixation_threshold, self.min_confidence, self.pupil_landmarks)

    def fit(self, X, y=None):
        if self.mode not in ("windowed", "averaged"):
            raise ValueError(f"mode must be 'windowed' or 'averaged', got {self.mode!r}")
        self.n_features_out_ = N_FEATURES
        return self

    def transform(self, X):
        cfg = self._config()
        rows = [extract_windowed(u, cfg) for u in X]
        if self.mode == "averaged":
            return np.vstack([r.mean(axis=0) for r in rows]) if rows else np.empty((0, N_FEATURES))
        return rows

    def get_feature_names_out(self, input_features=None):
        return np.asarray(FEATURE_NAMES, dtype=object)
