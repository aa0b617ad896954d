"""Batch-hard triplet losses within and across modalities.

For each anchor the hardest positive is the farthest same-label column and
the hardest negative the nearest different-label column.  Ties go to the
lowest column index.  Anchors without a positive or a negative contribute
nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class EmbeddingBatch:
    embeddings: Tensor | np.ndarray
    labels: np.ndarray
    modality: str = "audio"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.intp)
        data = self.embeddings.data if isinstance(self.embeddings, Tensor) else np.asarray(self.embeddings)
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError("embeddings must be an (n, E) matrix with n >= 1")
        if data.shape[0] != self.labels.shape[0]:
            raise ValueError(f"{data.shape[0]} embeddings but {self.labels.shape[0]} labels")
        if self.modality not in ("audio", "visual"):
            raise ValueError(f"modality must be 'audio' or 'visual', got {self.modality!r}")

    def __len__(self):
        return self.labels.shape[0]


@dataclass
class DistanceMatrix:
    values: np.ndarray
    row_labels: np.ndarray
    col_labels: np.ndarray
    exclude_self: bool = False


@dataclass(frozen=True)
class TripletOptions:
    margin: float = 1.0
    hinge: bool = True
    symmetrize_inter: bool = False

    @classmethod
    def literal(cls) -> "TripletOptions":
        """Unhinged, zero-margin form: sum of d(a, p) - d(a, n)."""
        return cls(margin=0.0, hinge=False)


def pairwise_distances(A: np.ndarray, B: np.ndarray, row_labels=None, col_labels=None) -> DistanceMatrix:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"embedding dims differ: {A.shape[1]} vs {B.shape[1]}")
    values = ad.pairwise_distances(A, B).data
    rl = np.zeros(len(A), dtype=np.intp) if row_labels is None else np.asarray(row_labels)
    cl = np.zeros(len(B), dtype=np.intp) if col_labels is None else np.asarray(col_labels)
    return DistanceMatrix(values, rl, cl)


def mine_hardest(dist: DistanceMatrix, anchor_row: int) -> tuple[int | None, int | None]:
    d = dist.values[anchor_row]
    same = dist.col_labels == dist.row_labels[anchor_row]
    pos_ok = same.copy()
    if dist.exclude_self:
        pos_ok[anchor_row] = False
    pos = neg = None
    if pos_ok.any():
        pos = int(np.argmax(np.where(pos_ok, d, -np.inf)))
    if (~same).any():
        neg = int(np.argmin(np.where(~same, d, np.inf)))
    return pos, neg


def mine_all(dist: DistanceMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`mine_hardest` over every row; ``-1`` marks absence."""
    d = dist.values
    same = dist.row_labels[:, None] == dist.col_labels[None, :]
    pos_ok = same.copy()
    if dist.exclude_self:
        np.fill_diagonal(pos_ok, False)
    neg_ok = ~same
    pos = np.argmax(np.where(pos_ok, d, -np.inf), axis=1)
    neg = np.argmin(np.where(neg_ok, d, np.inf), axis=1)
    pos[~pos_ok.any(axis=1)] = -1
    neg[~neg_ok.any(axis=1)] = -1
    return pos, neg


def _triplet_term(D: Tensor, dist: DistanceMatrix, options: TripletOptions) -> Tensor:
    pos, neg = mine_all(dist)
    rows = np.flatnonzero((pos >= 0) & (neg >= 0))
    if rows.size == 0:
        return ad.scale(ad.total(ad.take2d(D, [0], [0])), 0.0)
    gap = ad.sub(ad.take2d(D, rows, pos[rows]), ad.take2d(D, rows, neg[rows]))
    if options.margin:
        gap = ad.add(gap, options.margin)
    if options.hinge:
        gap = ad.relu(gap)
    return ad.total(gap)


def _as_tensor(batch: EmbeddingBatch) -> Tensor:
    return ad.as_tensor(batch.embeddings)


def intra_loss(batch: EmbeddingBatch, options: TripletOptions = TripletOptions()) -> Tensor:
    if len(batch) < 2:
        raise ValueError("intra-modal mining needs at least two embeddings")
    E = _as_tensor(batch)
    D = ad.pairwise_distances(E, E)
    dist = DistanceMatrix(D.data, batch.labels, batch.labels, exclude_self=True)
    return _triplet_term(D, dist, options)


def inter_loss(A: EmbeddingBatch, B: EmbeddingBatch, options: TripletOptions = TripletOptions()) -> Tensor:
    """Anchors from ``A``, candidates from ``B``; row i of both is one instance.

    Diagonal pairs are eligible positives.  With ``symmetrize_inter`` the
    mirrored term with anchors from ``B`` is added.
    """
    if len(A) != len(B):
        raise ValueError(f"inter-modal batches differ in size: {len(A)} vs {len(B)}")
    EA, EB = _as_tensor(A), _as_tensor(B)
    D = ad.pairwise_distances(EA, EB)
    loss = _triplet_term(D, DistanceMatrix(D.data, A.labels, B.labels), options)
    if options.symmetrize_inter:
        DT = ad.pairwise_distances(EB, EA)
        loss = ad.add(loss, _triplet_term(DT, DistanceMatrix(DT.data, B.labels, A.labels), options))
    return loss


def full_triplet_loss(A: EmbeddingBatch, B: EmbeddingBatch, options: TripletOptions = TripletOptions()) -> Tensor:
    return ad.add(ad.add(intra_loss(A, options), intra_loss(B, options)), inter_loss(A, B, options))
