"""Seeded synthetic multimodal emotion data.

Each class owns a shared latent vector and one private latent per modality.
A modality's class latent is ``rho * shared + (1 - rho) * private``, so
``rho`` dials how much class structure audio and video have in common.
Audio and visual features are affine maps of the class latent plus
per-utterance (and, for video, per-frame) Gaussian noise.  Gaze is emitted
as raw tracker frames whose gaze direction, pupil size and blink behaviour
depend on the class, so gaze features go through the real extraction path.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .ingest import EMOTIONS, FrameRecord, Utterance, write_matrix, write_tracker_csv

N_EYE_LANDMARKS = 56
PUPIL_RING = np.arange(20, 28)


@dataclass
class SynthConfig:
    num_classes: int = 7
    utterances_per_class: int | tuple[int, ...] = 100
    k_range: tuple[int, int] = (10, 30)
    fps: float = 10.0
    visual_dim: int = 16
    audio_dim: int = 88
    latent_dim: int = 8
    rho: float = 0.8
    noise: float = 0.6
    audio_signal: float = 1.0
    visual_signal: float = 1.0
    gaze_signal: float = 1.0
    failure_rate: float = 0.025
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if min(self.visual_dim, self.audio_dim, self.latent_dim, self.num_classes) < 1:
            raise ValueError("dimensions must be at least 1")
        if self.num_classes > len(EMOTIONS):
            raise ValueError(f"at most {len(EMOTIONS)} classes")
        lo, hi = self.k_range
        if not 1 <= lo <= hi:
            raise ValueError("k_range must satisfy 1 <= lo <= hi")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        self.k_range = (int(lo), int(hi))
        if isinstance(self.utterances_per_class, list):
            self.utterances_per_class = tuple(self.utterances_per_class)

    @property
    def class_counts(self) -> tuple[int, ...]:
        n = self.utterances_per_class
        counts = (n,) * self.num_classes if isinstance(n, int) else tuple(n)
        if len(counts) != self.num_classes:
            raise ValueError("utterances_per_class needs one count per class")
        return counts

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticDataset:
    train: list[Utterance]
    validation: list[Utterance]
    config: SynthConfig
    latents: dict[str, np.ndarray] = field(default_factory=dict, repr=False)


def _eye_template(rng) -> np.ndarray:
    lmk = np.zeros((N_EYE_LANDMARKS, 3))
    # first eye around x=-30 mm, second around x=+30 mm, eyelid/iris points on ellipses
    for eye, cx in ((0, -30.0), (1, 30.0)):
        base = eye * 28
        ang = np.linspace(0, 2 * np.pi, 20, endpoint=False)
        lmk[base : base + 20, 0] = cx + 12.0 * np.cos(ang)
        lmk[base : base + 20, 1] = 5.0 * np.sin(ang)
        ring = np.linspace(0, 2 * np.pi, 8, endpoint=False)
        lmk[base + 20 : base + 28, 0] = cx + 1.5 * np.cos(ring)
        lmk[base + 20 : base + 28, 1] = 1.5 * np.sin(ring)
    lmk[:, :2] += rng.normal(0.0, 0.05, size=(N_EYE_LANDMARKS, 2))
    return lmk


def _gaze_frames(rng, k, fps, gaze_params, template, noise, failure_rate):
    mu_x, mu_y, radius, blink_rate, depth_rate = gaze_params
    jitter = max(noise, 1e-3)
    gx = mu_x + np.cumsum(rng.normal(0.0, 0.02 * jitter, k)) * 0.5 + rng.normal(0.0, 0.03 * jitter, k)
    gy = mu_y + np.cumsum(rng.normal(0.0, 0.02 * jitter, k)) * 0.5 + rng.normal(0.0, 0.03 * jitter, k)
    r = np.clip(radius + np.cumsum(rng.normal(0.0, 0.02 * jitter, k)), 0.5, 4.0)
    depth = 500.0 + np.cumsum(depth_rate + rng.normal(0.0, 0.5 * jitter, k))
    blink = np.clip(rng.normal(0.2, 0.1 * jitter, k), 0.0, 5.0)
    closed = rng.random(k) < blink_rate
    blink[closed] = np.clip(rng.normal(2.5, 0.5, closed.sum()), 0.0, 5.0)
    failed = rng.random(k) < failure_rate
    if failed.all():
        failed[rng.integers(k)] = False

    ring = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    frames = []
    for t in range(k):
        if failed[t]:
            frames.append(FrameRecord(t + 1, t / fps, 0.0, False, 0.0, 0.0, np.zeros((N_EYE_LANDMARKS, 3)), 0.0))
            continue
        lmk = template.copy()
        lmk[PUPIL_RING, 0] = -30.0 + r[t] * np.cos(ring)
        lmk[PUPIL_RING, 1] = r[t] * np.sin(ring)
        lmk[:, 2] = depth[t]
        frames.append(
            FrameRecord(
                frame_index=t + 1,
                timestamp=t / fps,
                confidence=float(np.clip(rng.normal(0.95, 0.03), 0.0, 1.0)),
                success=True,
                gaze_angle_x=float(gx[t]),
                gaze_angle_y=float(gy[t]),
                eye_landmarks_3d=lmk,
                au45_intensity=float(blink[t]),
            )
        )
    return frames


def generate(config: SynthConfig | None = None) -> SyntheticDataset:
    """Draw a train/validation split; the same config always yields the same data."""
    cfg = config or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    C, L = cfg.num_classes, cfg.latent_dim
    shared = rng.normal(size=(C, L))
    private_a = rng.normal(size=(C, L))
    private_v = rng.normal(size=(C, L))
    z_audio = cfg.rho * shared + (1.0 - cfg.rho) * private_a
    z_visual = cfg.rho * shared + (1.0 - cfg.rho) * private_v
    W_a = rng.normal(size=(L, cfg.audio_dim)) / np.sqrt(L)
    b_a = rng.normal(size=cfg.audio_dim)
    W_v = rng.normal(size=(L, cfg.visual_dim)) / np.sqrt(L)
    b_v = rng.normal(size=cfg.visual_dim)

    # per-class gaze behaviour: mean direction, pupil radius, blink rate, depth drift
    g = cfg.gaze_signal
    gaze_params = np.column_stack(
        [
            g * rng.normal(0.0, 0.15, C),
            g * rng.normal(0.0, 0.10, C),
            1.5 + g * rng.normal(0.0, 0.25, C),
            np.clip(0.05 + g * rng.normal(0.0, 0.04, C), 0.0, 0.5),
            g * rng.normal(0.0, 0.5, C),
        ]
    )
    template = _eye_template(rng)

    utterances = []
    for c, count in enumerate(cfg.class_counts):
        for j in range(count):
            k = int(rng.integers(cfg.k_range[0], cfg.k_range[1] + 1))
            za = cfg.audio_signal * z_audio[c] + cfg.noise * rng.normal(size=L)
            audio = za @ W_a + b_a + cfg.noise * rng.normal(size=cfg.audio_dim)
            zv = cfg.visual_signal * z_visual[c] + cfg.noise * rng.normal(size=L)
            visual = zv @ W_v + b_v + cfg.noise * rng.normal(size=(k, cfg.visual_dim))
            frames = _gaze_frames(rng, k, cfg.fps, gaze_params[c], template, cfg.noise, cfg.failure_rate)
            utterances.append(Utterance(f"syn{c}_{j:04d}", frames, cfg.fps, visual, audio, c))

    order = rng.permutation(len(utterances))
    n_val = int(round(cfg.val_fraction * len(utterances)))
    val_idx = np.sort(order[:n_val])
    train_idx = np.sort(order[n_val:])
    latents = {"shared": shared, "audio": z_audio, "visual": z_visual, "gaze": gaze_params}
    return SyntheticDataset(
        [utterances[i] for i in train_idx], [utterances[i] for i in val_idx], cfg, latents
    )


def write_dataset(dataset: SyntheticDataset, out_dir: str | os.PathLike, header_lines=()) -> dict[str, str]:
    """Write tracker CSVs, feature matrices and one manifest per split.

    Returns the manifest paths keyed by split name.
    """
    out_dir = os.fspath(out_dir)
    data_dir = os.path.join(out_dir, "utterances")
    os.makedirs(data_dir, exist_ok=True)
    manifests = {}
    for split, utts in (("train", dataset.train), ("validation", dataset.validation)):
        path = os.path.join(out_dir, f"{split}_manifest.csv")
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write("id,csv_path,visual_path,audio_path,label,fps\n")
            for u in utts:
                rel = {kind: os.path.join("utterances", f"{u.id}_{kind}.csv") for kind in ("tracker", "visual", "audio")}
                write_tracker_csv(os.path.join(out_dir, rel["tracker"]), u.frames, header_lines)
                write_matrix(os.path.join(out_dir, rel["visual"]), u.visual_features, header_lines)
                write_matrix(os.path.join(out_dir, rel["audio"]), u.audio_features[None, :], header_lines)
                fh.write(f"{u.id},{rel['tracker']},{rel['visual']},{rel['audio']},{u.label_name},{u.fps!r}\n")
        manifests[split] = path
    return manifests
