"""Readers for face-tracker CSVs, precomputed feature matrices and label manifests.

The tracker format follows OpenFace's ``FeatureExtraction`` output: a header
row followed by one row per video frame.  Column names are stripped of
surrounding whitespace, and lines beginning with ``#`` are treated as
comments so files carrying a reproducibility header can be read back.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

EMOTIONS = ("neutral", "happy", "sad", "anger", "disgust", "fear", "surprise")

REQUIRED_COLUMNS = (
    "frame",
    "timestamp",
    "confidence",
    "success",
    "gaze_angle_x",
    "gaze_angle_y",
    "AU45_r",
)

_LANDMARK_RE = re.compile(r"^eye_lmk_([XYZ])_(\d+)$")


class IngestError(ValueError):
    """Base class for input problems."""


class SchemaError(IngestError):
    def __init__(self, column: str, path: str | os.PathLike = ""):
        self.column = column
        super().__init__(f"{path}: missing required column {column!r}")


class ParseError(IngestError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(message)


class ValidationError(IngestError):
    pass


@dataclass(frozen=True, eq=False)
class FrameRecord:
    frame_index: int
    timestamp: float
    confidence: float
    success: bool
    gaze_angle_x: float
    gaze_angle_y: float
    eye_landmarks_3d: np.ndarray  # (n_landmarks, 3), millimetres
    au45_intensity: float

    def __eq__(self, other):
        if not isinstance(other, FrameRecord):
            return NotImplemented
        return (
            self.frame_index == other.frame_index
            and self.timestamp == other.timestamp
            and self.confidence == other.confidence
            and self.success == other.success
            and self.gaze_angle_x == other.gaze_angle_x
            and self.gaze_angle_y == other.gaze_angle_y
            and self.au45_intensity == other.au45_intensity
            and np.array_equal(self.eye_landmarks_3d, other.eye_landmarks_3d)
        )

    __hash__ = None


@dataclass(eq=False)
class Utterance:
    id: str
    frames: list[FrameRecord]
    fps: float
    visual_features: np.ndarray
    audio_features: np.ndarray
    label: int

    def __post_init__(self):
        self.visual_features = np.atleast_2d(np.asarray(self.visual_features, dtype=np.float64))
        self.audio_features = np.asarray(self.audio_features, dtype=np.float64).ravel()
        validate_utterance(self)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def label_name(self) -> str:
        return EMOTIONS[self.label]


class UtteranceList(list):
    """A list of utterances that remembers which manifest rows were dropped."""

    def __init__(self, items: Iterable[Utterance] = (), dropped: Sequence[tuple[str, str]] = ()):
        super().__init__(items)
        self.dropped = list(dropped)


def label_to_id(label: str | int) -> int:
    if isinstance(label, (int, np.integer)):
        if 0 <= int(label) < len(EMOTIONS):
            return int(label)
        raise ValidationError(f"label id {label} outside 0..{len(EMOTIONS) - 1}")
    key = str(label).strip().lower()
    if key.isdigit() and int(key) < len(EMOTIONS):
        return int(key)
    aliases = {"surprised": "surprise", "angry": "anger", "sadness": "sad", "happiness": "happy"}
    key = aliases.get(key, key)
    if key not in EMOTIONS:
        raise ValidationError(f"unknown label {label!r}; expected one of {', '.join(EMOTIONS)}")
    return EMOTIONS.index(key)


def validate_frames(frames: Sequence[FrameRecord], source: str = "") -> None:
    prev = -math.inf
    for i, fr in enumerate(frames):
        if not fr.timestamp > prev:
            raise ValidationError(f"{source}: timestamp not strictly increasing at row {i}")
        prev = fr.timestamp
        if not 0.0 <= fr.confidence <= 1.0:
            raise ValidationError(f"{source}: confidence {fr.confidence} outside [0, 1] at row {i}")
        if not (math.isfinite(fr.gaze_angle_x) and math.isfinite(fr.gaze_angle_y)):
            raise ValidationError(f"{source}: non-finite gaze angle at row {i}")


def validate_utterance(utt: Utterance) -> None:
    if utt.visual_features.shape[0] != len(utt.frames):
        raise ValidationError(
            f"utterance {utt.id}: {len(utt.frames)} tracker frames but "
            f"{utt.visual_features.shape[0]} visual feature rows"
        )
    if not 0 <= utt.label < len(EMOTIONS):
        raise ValidationError(f"utterance {utt.id}: label {utt.label} outside 0..6")
    if not utt.fps > 0:
        raise ValidationError(f"utterance {utt.id}: fps must be positive")
    if not (np.all(np.isfinite(utt.visual_features)) and np.all(np.isfinite(utt.audio_features))):
        raise ValidationError(f"utterance {utt.id}: non-finite feature values")
    validate_frames(utt.frames, utt.id)


def _comment_free(lines):
    for line in lines:
        if not line.lstrip().startswith("#") and line.strip():
            yield line


def _landmark_columns(header: list[str]) -> list[tuple[int, int, int]]:
    found: dict[int, dict[str, int]] = {}
    for col, name in enumerate(header):
        m = _LANDMARK_RE.match(name)
        if m:
            found.setdefault(int(m.group(2)), {})[m.group(1)] = col
    if not found:
        raise SchemaError("eye_lmk_X_0")
    triples = []
    for idx in range(max(found) + 1):
        axes = found.get(idx, {})
        for axis in "XYZ":
            if axis not in axes:
                raise SchemaError(f"eye_lmk_{axis}_{idx}")
        triples.append((axes["X"], axes["Y"], axes["Z"]))
    return triples


def parse_tracker_csv(path: str | os.PathLike, fps: float | None = None) -> list[FrameRecord]:
    """Parse one tracker CSV into frame records, in file order.

    Rows with ``success == 0`` are kept; downstream feature code masks them.
    ``fps`` is only used to fill timestamps when the file has none, which
    never happens for OpenFace output but keeps hand-written fixtures short.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(_comment_free(fh))
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        index = {name: i for i, name in enumerate(header)}
        for col in REQUIRED_COLUMNS:
            if col not in index:
                if col == "timestamp" and fps:
                    continue
                raise SchemaError(col, path)
        try:
            lmk_cols = _landmark_columns(header)
        except SchemaError as exc:
            raise SchemaError(exc.column, path) from None

        frames = []
        for row_no, row in enumerate(reader):
            if len(row) != len(header):
                raise ParseError(f"{path}: row {row_no} has {len(row)} cells, expected {len(header)}", row_no)

            def num(name, _row=row, _row_no=row_no):
                cell = _row[index[name]].strip()
                try:
                    return float(cell)
                except ValueError:
                    raise ParseError(f"{path}: non-numeric {name}={cell!r} in row {_row_no}", _row_no) from None

            try:
                lmk = np.array([[float(row[c]) for c in triple] for triple in lmk_cols])
            except ValueError:
                raise ParseError(f"{path}: non-numeric eye landmark in row {row_no}", row_no) from None
            frame_idx = int(num("frame"))
            ts = num("timestamp") if "timestamp" in index else frame_idx / fps
            frames.append(
                FrameRecord(
                    frame_index=frame_idx,
                    timestamp=ts,
                    confidence=num("confidence"),
                    success=bool(num("success")),
                    gaze_angle_x=num("gaze_angle_x"),
                    gaze_angle_y=num("gaze_angle_y"),
                    eye_landmarks_3d=lmk,
                    au45_intensity=num("AU45_r"),
                )
            )
    validate_frames(frames, str(path))
    return frames


def write_tracker_csv(path: str | os.PathLike, frames: Sequence[FrameRecord], header_lines: Sequence[str] = ()) -> None:
    """Write frames in the tracker layout read by :func:`parse_tracker_csv`.

    Floats are written with ``repr`` so a write/parse round trip is exact.
    """
    n_lmk = frames[0].eye_landmarks_3d.shape[0] if frames else 0
    cols = list(REQUIRED_COLUMNS)
    for axis in "XYZ":
        cols += [f"eye_lmk_{axis}_{i}" for i in range(n_lmk)]
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(cols)
        for fr in frames:
            lmk = np.asarray(fr.eye_landmarks_3d, dtype=np.float64)
            writer.writerow(
                [
                    fr.frame_index,
                    repr(float(fr.timestamp)),
                    repr(float(fr.confidence)),
                    int(fr.success),
                    repr(float(fr.gaze_angle_x)),
                    repr(float(fr.gaze_angle_y)),
                    repr(float(fr.au45_intensity)),
                ]
                + [repr(float(v)) for v in lmk[:, 0]]
                + [repr(float(v)) for v in lmk[:, 1]]
                + [repr(float(v)) for v in lmk[:, 2]]
            )


def read_matrix(path: str | os.PathLike) -> np.ndarray:
    """Read a headerless numeric CSV matrix (``#`` comments allowed)."""
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def write_matrix(path: str | os.PathLike, matrix: np.ndarray, header_lines: Sequence[str] = ()) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    header = "\n".join(header_lines)
    np.savetxt(path, matrix, delimiter=",", fmt="%.17g", header=header, comments="# ")


MANIFEST_COLUMNS = ("id", "csv_path", "visual_path", "audio_path", "label")


@dataclass
class ManifestRow:
    id: str
    csv_path: str
    visual_path: str
    audio_path: str
    label: str
    fps: float | None = None
    extra: dict = field(default_factory=dict)


def read_manifest(path: str | os.PathLike) -> list[ManifestRow]:
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        p = p.strip()
        if not p:
            return ""
        return p if os.path.isabs(p) else os.path.join(base, p)

    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(_comment_free(fh))
        if reader.fieldnames is None:
            raise ParseError(f"{path}: empty manifest")
        reader.fieldnames = [f.strip() for f in reader.fieldnames]
        fields = set(reader.fieldnames)
        for col in MANIFEST_COLUMNS:
            if col not in fields and not (col == "label" and "label_string" in fields):
                raise SchemaError(col, path)
        for rec in reader:
            fps = rec.get("fps")
            rows.append(
                ManifestRow(
                    id=rec["id"].strip(),
                    csv_path=resolve(rec["csv_path"]),
                    visual_path=resolve(rec["visual_path"]),
                    audio_path=resolve(rec.get("audio_path") or ""),
                    label=(rec.get("label") or rec.get("label_string") or "").strip(),
                    fps=float(fps) if fps not in (None, "") else None,
                )
            )
    return rows


def load_dataset(manifest: str | os.PathLike, fps: float = 30.0) -> UtteranceList:
    """Load every utterance listed in ``manifest``.

    Utterances whose tracker never detected a face, or whose audio vector is
    missing, are dropped and listed in ``result.dropped`` as ``(id, reason)``.
    """
    kept, dropped = [], []
    for row in read_manifest(manifest):
        row_fps = row.fps or fps
        label = label_to_id(row.label)
        frames = parse_tracker_csv(row.csv_path, row_fps)
        if not any(fr.success for fr in frames):
            dropped.append((row.id, "no face detected in any frame"))
            continue
        if not row.audio_path or not os.path.exists(row.audio_path):
            dropped.append((row.id, "audio features missing"))
            continue
        audio = read_matrix(row.audio_path).ravel()
        if audio.size == 0:
            dropped.append((row.id, "audio features missing"))
            continue
        visual = read_matrix(row.visual_path)
        kept.append(Utterance(row.id, frames, row_fps, visual, audio, label))
    if kept:
        dims = {u.audio_features.size for u in kept}
        if len(dims) > 1:
            raise ValidationError(f"{manifest}: inconsistent audio dimensions {sorted(dims)}")
        vdims = {u.visual_features.shape[1] for u in kept}
        if len(vdims) > 1:
            raise ValidationError(f"{manifest}: inconsistent visual dimensions {sorted(vdims)}")
    if dropped:
        logger.warning("dropped %d of %d utterances from %s", len(dropped), len(dropped) + len(kept), manifest)
    return UtteranceList(kept, dropped)
