"""Classical outlier detectors over per-subtask mean latents.

LOF and KNN assume i.i.d. fixed-size points, so variable-length subtask
segments are first reduced to their mean latent vector. Scores feed the same
mask construction as the Mahalanobis route, which isolates the detector
comparison from representation differences.
"""

from __future__ import annotations

import numpy as np
import scipy.spatial

from .dataset import SubtaskSegmentation
from .encoder import LatentTrajectory
from .errors import ValidationError
from .scoring import ScoreEntry, ScoreTable, _as_latent_map

DEFAULT_K_NEIGHBORS = 5
_JITTER_SCALE = 1e-12


def segment_features(
    latents, segs: dict[str, SubtaskSegmentation]
) -> tuple[list[tuple[str, int]], np.ndarray]:
    """Mean latent vector per present (trajectory, subtask).

    Returns the (trajectory_id, subtask_index) keys in sorted order and the
    matching feature matrix.
    """
    latents = _as_latent_map(latents)
    keys = []
    rows = []
    for tid in sorted(latents):
        seg = segs.get(tid)
        if seg is None:
            raise ValidationError(f"no segmentation for trajectory {tid!r}")
        for j, (a, b) in enumerate(seg.segment_ranges()):
            if b <= a:
                raise ValidationError(f"empty segment {j} in trajectory {tid!r}")
            keys.append((tid, j))
            rows.append(latents[tid].z[a:b].mean(axis=0))
    return keys, np.array(rows)


def _deduplicate(points: np.ndarray, seed: int) -> np.ndarray:
    """Perturb repeated rows with tiny seeded jitter so all points are distinct."""
    rng = np.random.default_rng(seed)
    out = points.astype(np.float64, copy=True)
    seen: dict[bytes, int] = {}
    for i in range(len(out)):
        key = out[i].tobytes()
        while key in seen:
            out[i] = out[i] + rng.normal(scale=_JITTER_SCALE, size=out.shape[1])
            key = out[i].tobytes()
        seen[key] = i
    return out


def lof_scores(points: np.ndarray, k_neighbors: int, jitter_seed: int = 0) -> np.ndarray:
    """Local outlier factor of every point (about 1 for inliers, larger for
    outliers), with ties in the k-distance neighborhood handled as in the
    original formulation."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = len(points)
    if k_neighbors < 1 or k_neighbors >= n:
        raise ValidationError(f"k_neighbors={k_neighbors} needs 1 <= k < {n} points")
    points = _deduplicate(points, jitter_seed)
    dist = scipy.spatial.distance.cdist(points, points)
    np.fill_diagonal(dist, np.inf)
    sorted_dist = np.sort(dist, axis=1)
    k_distance = sorted_dist[:, k_neighbors - 1]
    # neighborhoods include every point within the k-distance (ties included)
    neighborhoods = [np.nonzero(dist[i] <= k_distance[i])[0] for i in range(n)]
    lrd = np.empty(n)
    for i, nbrs in enumerate(neighborhoods):
        reach = np.maximum(k_distance[nbrs], dist[i, nbrs])
        lrd[i] = len(nbrs) / reach.sum()
    lof = np.empty(n)
    for i, nbrs in enumerate(neighborhoods):
        lof[i] = lrd[nbrs].mean() / lrd[i]
    return lof


def knn_outlier_scores(points: np.ndarray, k_neighbors: int) -> np.ndarray:
    """Distance of every point to its k-th nearest neighbor (self excluded)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = len(points)
    if k_neighbors < 1 or k_neighbors >= n:
        raise ValidationError(f"k_neighbors={k_neighbors} needs 1 <= k < {n} points")
    dist = scipy.spatial.distance.cdist(points, points)
    np.fill_diagonal(dist, np.inf)
    return np.sort(dist, axis=1)[:, k_neighbors - 1]


def baseline_score_table(
    latents,
    segs: dict[str, SubtaskSegmentation],
    method: str,
    k_neighbors: int = DEFAULT_K_NEIGHBORS,
) -> ScoreTable:
    """Score present subtasks with a baseline detector, in the same table
    format the Mahalanobis route produces (so build_mask applies unchanged)."""
    latents = _as_latent_map(latents)
    keys, features = segment_features(latents, segs)
    if method == "lof":
        scores = lof_scores(features, k_neighbors)
    elif method == "knn":
        scores = knn_outlier_scores(features, k_neighbors)
    else:
        raise ValidationError(f"unknown baseline method {method!r}")
    entries = tuple(
        ScoreEntry(tid, j, float(s)) for (tid, j), s in zip(keys, scores)
    )
    k_expected = max(seg.k_expected for seg in segs.values())
    return ScoreTable(
        entries=entries,
        trajectory_ids=tuple(sorted(latents)),
        k_expected=k_expected,
    )


def save_features(keys, features: np.ndarray, path) -> None:
    """Feature table CSV for the mask command's baseline routes."""
    from .dataset import fmt_real

    d = features.shape[1]
    header = ["trajectory_id", "subtask_index"] + [f"f{i}" for i in range(d)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for (tid, j), row in zip(keys, features):
            fh.write(",".join([tid, str(j)] + [fmt_real(v) for v in row]) + "\n")


def load_features(path) -> tuple[list[tuple[str, int]], np.ndarray]:
    import csv

    from .errors import ParseError

    keys = []
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["trajectory_id", "subtask_index"]:
            raise ParseError(f"unexpected features header: {header}")
        for row in reader:
            if not row:
                continue
            keys.append((row[0], int(row[1])))
            rows.append([float(v) for v in row[2:]])
    if not keys:
        raise ParseError("empty features file")
    return keys, np.array(rows)
