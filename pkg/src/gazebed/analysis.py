"""Post-hoc gaze analyses: one-vs-rest mRMR feature ranking and gaze-direction KDE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.metrics import mutual_info_score


def discretize_equal_frequency(x: np.ndarray, n_bins: int = 3) -> np.ndarray:
    """Bin ids from empirical quantile edges; constant columns land in one bin."""
    x = np.asarray(x, dtype=np.float64)
    edges = np.quantile(x, np.arange(1, n_bins) / n_bins)
    return np.searchsorted(edges, x, side="right")


@dataclass
class MrmrResult:
    indices: list[int]
    scores: list[float]
    relevance: np.ndarray


def mrmr_rank(features, labels, target_class: int, top_k: int = 5, n_bins: int = 3) -> MrmrResult:
    """Greedy mRMR (difference form) for ``target_class`` versus the rest.

    Each step picks the feature maximising ``I(f; y) - mean_s I(f; s)`` over
    already selected features ``s``; the first pick is pure relevance.  Ties
    go to the lowest feature index.  Mutual information is in nats on
    equal-frequency discretised features.
    """
    X = np.asarray(features, dtype=np.float64)
    y = (np.asarray(labels) == target_class).astype(np.intp)
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least two samples")
    if y.min() == y.max():
        raise ValueError(f"class {target_class} versus rest is single-class; cannot rank")
    if not 1 <= top_k <= d:
        raise ValueError(f"top_k must lie in 1..{d}")

    bins = np.column_stack([discretize_equal_frequency(X[:, j], n_bins) for j in range(d)])
    relevance = np.array([mutual_info_score(y, bins[:, j]) for j in range(d)])
    redundancy_sum = np.zeros(d)
    selected: list[int] = []
    scores: list[float] = []
    remaining = np.ones(d, dtype=bool)
    for step in range(top_k):
        score = relevance - (redundancy_sum / step if step else 0.0)
        score = np.where(remaining, score, -np.inf)
        j = int(np.argmax(score))
        selected.append(j)
        scores.append(float(score[j]))
        remaining[j] = False
        for i in np.flatnonzero(remaining):
            redundancy_sum[i] += mutual_info_score(bins[:, j], bins[:, i])
    return MrmrResult(selected, scores, relevance)


@dataclass
class DensityGrid:
    x: np.ndarray  # cell centres along gaze_angle_x
    y: np.ndarray  # cell centres along gaze_angle_y
    density: np.ndarray  # (len(y), len(x))
    bandwidth: tuple[float, float]

    @property
    def cell_area(self) -> float:
        return float((self.x[1] - self.x[0]) * (self.y[1] - self.y[0])) if len(self.x) > 1 and len(self.y) > 1 else 0.0

    def integral(self) -> float:
        return float(self.density.sum() * self.cell_area)


def scott_bandwidth(points: np.ndarray, min_bandwidth: float = 1e-3) -> np.ndarray:
    n, d = points.shape
    sigma = points.std(axis=0, ddof=1)
    bw = sigma * n ** (-1.0 / (d + 4))
    return np.where(sigma > 0, bw, min_bandwidth)


def kde_density(gaze_points, grid=100, pad_fraction: float = 0.1, min_bandwidth: float = 1e-3) -> DensityGrid:
    """Product-Gaussian KDE of (gaze_angle_x, gaze_angle_y) on a regular grid.

    Bandwidth follows Scott's rule per axis.  The grid spans the bounding box
    padded by ``pad_fraction`` of its extent, and by at least three
    bandwidths so the kernels' mass stays on the grid.
    """
    pts = np.asarray(gaze_points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("gaze_points must have shape (n, 2)")
    if pts.shape[0] < 2:
        raise ValueError("need at least two points")
    nx, ny = (grid, grid) if np.isscalar(grid) else grid
    bw = scott_bandwidth(pts, min_bandwidth)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = np.maximum(pad_fraction * (hi - lo), 3.0 * bw)
    lo, hi = lo - pad, hi + pad
    axes = []
    for a, n_cells in enumerate((nx, ny)):
        step = (hi[a] - lo[a]) / n_cells
        axes.append(lo[a] + step * (np.arange(n_cells) + 0.5))
    kx = np.exp(-0.5 * ((axes[0][:, None] - pts[None, :, 0]) / bw[0]) ** 2) / (np.sqrt(2 * np.pi) * bw[0])
    ky = np.exp(-0.5 * ((axes[1][:, None] - pts[None, :, 1]) / bw[1]) ** 2) / (np.sqrt(2 * np.pi) * bw[1])
    density = ky @ kx.T / pts.shape[0]
    return DensityGrid(axes[0], axes[1], density, (float(bw[0]), float(bw[1])))
