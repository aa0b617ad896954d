"""Slow, literal reference implementations used as test oracles.

Written with plain Python loops and the ``statistics`` module so they share
no code path with the package.
"""

from __future__ import annotations

import math
import statistics

NUMERIC = [
    ("gaze_angle_x", ["min", "max", "mean", "median", "q1", "q3", "std", "iqr12", "iqr23", "iqr13", "lr_intercept", "lr_slope"]),
    ("gaze_angle_y", ["min", "max", "mean", "median", "q1", "q3", "std", "iqr12", "iqr23", "iqr13", "lr_intercept", "lr_slope"]),
    ("d_gaze_angle_x", ["min", "max", "mean", "median", "q1", "q3", "std", "iqr12", "iqr23", "iqr13", "lr_intercept", "lr_slope"]),
    ("d_gaze_angle_y", ["min", "max", "mean", "median", "q1", "q3", "std", "iqr12", "iqr23", "iqr13", "lr_intercept", "lr_slope"]),
    ("pupil_diameter", ["min", "max", "mean", "median", "q1", "q3", "std", "iqr12", "iqr23", "iqr13", "lr_intercept", "lr_slope"]),
    ("d_pupil_diameter", ["min", "max", "mean", "q1", "q3", "std", "iqr12", "iqr23", "iqr13", "lr_intercept", "lr_slope"]),
    ("blink_intensity", ["max", "mean", "median", "q3", "std", "iqr12", "iqr23", "iqr13", "lr_intercept", "lr_slope"]),
]
EPISODES = [
    ("dilation", ["time_ratio", "mean_time", "max_time", "total_time"]),
    ("constriction", ["time_ratio", "mean_time", "max_time", "total_time"]),
    ("approach", ["time_ratio", "mean_time", "max_time", "median_time"]),
    ("eyes_closed", ["time_ratio", "min_time", "max_time", "mean_time", "median_time"]),
    ("fixation", ["time_ratio", "min_time", "max_time", "mean_time", "median_time"]),
]


def base_channels(frames, blink_threshold=1.0, fixation_threshold=0.01, pupil=range(20, 28)):
    valid = [bool(f.success) for f in frames]
    gx = [f.gaze_angle_x for f in frames]
    gy = [f.gaze_angle_y for f in frames]
    blink = [f.au45_intensity for f in frames]
    diam, depth = [], []
    for f in frames:
        pts = [tuple(f.eye_landmarks_3d[i]) for i in pupil]
        c = [sum(p[a] for p in pts) / len(pts) for a in range(3)]
        diam.append(2.0 * sum(math.dist(p, c) for p in pts) / len(pts))
        depth.append(sum(row[2] for row in f.eye_landmarks_3d) / len(f.eye_landmarks_3d))

    def delta(x):
        out, prev = [], None
        for i, v in enumerate(x):
            if not valid[i]:
                out.append(0.0)
                continue
            out.append(0.0 if prev is None else v - prev)
            prev = v
        return out

    dgx, dgy, dd, ddepth = delta(gx), delta(gy), delta(diam), delta(depth)
    ch = {
        "gaze_angle_x": gx, "gaze_angle_y": gy, "d_gaze_angle_x": dgx, "d_gaze_angle_y": dgy,
        "pupil_diameter": diam, "d_pupil_diameter": dd, "blink_intensity": blink,
        "dilation": [v and d > 0 for v, d in zip(valid, dd)],
        "constriction": [v and d < 0 for v, d in zip(valid, dd)],
        "approach": [v and d > 0 for v, d in zip(valid, ddepth)],
        "eyes_closed": [v and b >= blink_threshold for v, b in zip(valid, blink)],
        "fixation": [v and math.hypot(a, b) <= fixation_threshold for v, a, b in zip(valid, dgx, dgy)],
    }
    return ch, valid


def _numeric(values, positions):
    n = len(values)
    if n == 1:
        q1 = med = q3 = values[0]
    else:
        q1, med, q3 = statistics.quantiles(values, n=4, method="inclusive")
    mean = sum(values) / n
    if n > 1:
        mx = sum(positions) / n
        sxx = sum((p - mx) ** 2 for p in positions)
        slope = sum((p - mx) * (v - mean) for p, v in zip(positions, values)) / sxx
    else:
        mx, slope = positions[0], 0.0
    return {
        "min": min(values), "max": max(values), "mean": mean, "median": med, "q1": q1, "q3": q3,
        "std": statistics.pstdev(values), "iqr12": med - q1, "iqr23": q3 - med, "iqr13": q3 - q1,
        "lr_intercept": mean - slope * mx, "lr_slope": slope,
    }


def _episodes(mask, valid, fps):
    runs, cur = [], 0
    for m in mask:
        if m:
            cur += 1
        elif cur:
            runs.append(cur)
            cur = 0
    if cur:
        runs.append(cur)
    if not runs:
        return dict.fromkeys(["time_ratio", "min_time", "max_time", "mean_time", "median_time", "total_time"], 0.0)
    secs = [r / fps for r in runs]
    return {
        "time_ratio": sum(mask) / sum(valid), "min_time": min(secs), "max_time": max(secs),
        "mean_time": sum(secs) / len(secs), "median_time": statistics.median(secs), "total_time": sum(secs),
    }


def window_features(ch, valid, start, stop, fps):
    """103 features over frames ``start..stop-1``."""
    idx = [i for i in range(start, stop) if valid[i]]
    pos = [float(i - start) for i in idx]
    out = []
    for name, funcs in NUMERIC:
        stats = _numeric([ch[name][i] for i in idx], pos)
        out.extend(stats[f] for f in funcs)
    for name, funcs in EPISODES:
        ep = _episodes(ch[name][start:stop], valid[start:stop], fps)
        out.extend(ep[f] for f in funcs)
    return out


def windowed(frames, fps, **kw):
    ch, valid = base_channels(frames, **kw)
    k = len(frames)
    L = max(1, round(fps))
    rows = [None] * k
    for i in range(k):
        s = i - L // 2
        if s + L > k:
            s = k - L
        if s < 0:
            s = 0
        e = min(k, s + L)
        if any(valid[s:e]):
            rows[i] = window_features(ch, valid, s, e, fps)
    good = [i for i in range(k) if rows[i] is not None]
    for i in range(k):
        if rows[i] is None:
            j = min(good, key=lambda g: (abs(g - i), g))
            rows[i] = rows[j]
    return rows


# -- triplet -----------------------------------------------------------------------

def dist(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def mine(A, B, la, lb, i, exclude_self):
    """Exhaustive batch-hard mining for anchor row i; lowest index wins ties."""
    pos = neg = None
    best_p, best_n = -math.inf, math.inf
    for j in range(len(B)):
        d = dist(A[i], B[j])
        if la[i] == lb[j]:
            if exclude_self and j == i:
                continue
            if d > best_p:
                best_p, pos = d, j
        elif d < best_n:
            best_n, neg = d, j
    return pos, neg


def triplet_sum(A, B, la, lb, exclude_self, margin=1.0, hinge=True):
    total = 0.0
    for i in range(len(A)):
        p, n = mine(A, B, la, lb, i, exclude_self)
        if p is None or n is None:
            continue
        g = dist(A[i], B[p]) - dist(A[i], B[n]) + margin
        total += max(g, 0.0) if hinge else g
    return total


# -- mRMR ------------------------------------------------------------------------------

def mutual_information(x, y):
    n = len(x)
    joint, px, py = {}, {}, {}
    for a, b in zip(x, y):
        joint[(a, b)] = joint.get((a, b), 0) + 1
        px[a] = px.get(a, 0) + 1
        py[b] = py.get(b, 0) + 1
    return sum(c / n * math.log(c * n / (px[a] * py[b])) for (a, b), c in joint.items())


def equal_frequency_bins(col, n_bins=3):
    edges = statistics.quantiles(col, n=n_bins, method="inclusive") if len(set(col)) > 1 else [col[0]] * (n_bins - 1)
    return [sum(v >= e for e in edges) for v in col]


def mrmr_exhaustive(X, y, target, top_k, n_bins=3):
    """Greedy mRMR where every step scores every remaining feature from scratch."""
    d = len(X[0])
    cols = [equal_frequency_bins([row[j] for row in X], n_bins) for j in range(d)]
    yb = [int(v == target) for v in y]
    rel = [mutual_information(yb, c) for c in cols]
    chosen = []
    for _ in range(top_k):
        best, best_j = -math.inf, None
        for j in range(d):
            if j in chosen:
                continue
            red = sum(mutual_information(cols[j], cols[s]) for s in chosen) / len(chosen) if chosen else 0.0
            score = rel[j] - red
            if score > best + 1e-12:
                best, best_j = score, j
        chosen.append(best_j)
    return chosen


def kde_cell(points, x, y, hx, hy):
    s = 0.0
    for px, py in points:
        s += math.exp(-0.5 * ((x - px) / hx) ** 2 - 0.5 * ((y - py) / hy) ** 2)
    return s / (len(points) * 2.0 * math.pi * hx * hy)
