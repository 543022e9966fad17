"""Stage 2: per-subtask latent Gaussians, Mahalanobis scoring, and masking.

For each subtask index, latent vectors from trajectories judged good in
stage 1 are pooled and a Gaussian is fitted (shrinkage-regularized
covariance). Every subtask of every trajectory is then scored by its mean
per-timestep Mahalanobis distance to that distribution; the highest-scoring
rho subtasks are masked out.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .bed import TrajectoryWeights
from .dataset import MaskEntry, SubtaskMask, SubtaskSegmentation, fmt_real
from .encoder import LatentTrajectory
from .errors import FitError, NumericError, ParseError, ValidationError

DEFAULT_SHRINKAGE = 0.05
DEFAULT_FLOOR = 1e-9


@dataclass(frozen=True, eq=False)
class SubtaskGaussian:
    subtask_index: int
    mu: np.ndarray
    sigma: np.ndarray
    n_samples: int

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        d = len(mu)
        if sigma.shape != (d, d):
            raise ValidationError("sigma must be square and match mu")
        if np.abs(sigma - sigma.T).max() > 1e-12:
            raise ValidationError("sigma must be symmetric within 1e-12")
        try:
            chol = scipy.linalg.cholesky(sigma, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise ValidationError(f"sigma is not positive definite: {exc}") from exc
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return len(self.mu)

    def distances(self, z: np.ndarray) -> np.ndarray:
        """Mahalanobis distances of one or more latent vectors, via the
        cached Cholesky factor (no explicit inverse)."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if not np.isfinite(z).all():
            raise NumericError("non-finite latent passed to Mahalanobis distance")
        diff = z - self.mu
        y = scipy.linalg.solve_triangular(self._chol, diff.T, lower=True)
        return np.sqrt((y * y).sum(axis=0))


def mahalanobis(z: np.ndarray, g: SubtaskGaussian) -> float:
    """Distance of a single latent vector from a fitted subtask Gaussian."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (g.dim,):
        raise ValidationError(f"latent dim {z.shape} != gaussian dim {g.dim}")
    return float(g.distances(z[None, :])[0])


def _pool_subtask(
    latents: dict[str, LatentTrajectory],
    segs: dict[str, SubtaskSegmentation],
    good_ids: set[str],
    j: int,
) -> np.ndarray:
    chunks = []
    for tid in good_ids:
        seg = segs.get(tid)
        lat = latents.get(tid)
        if seg is None or lat is None:
            continue
        ranges = seg.segment_ranges()
        if j < len(ranges):
            a, b = ranges[j]
            chunks.append(lat.z[a:b])
    if not chunks:
        return np.zeros((0, 0))
    return np.concatenate(chunks)


def fit_subtask_gaussian(
    latents,
    segs: dict[str, SubtaskSegmentation],
    weights: TrajectoryWeights,
    j: int,
    epsilon: float = DEFAULT_SHRINKAGE,
    floor: float = DEFAULT_FLOOR,
) -> SubtaskGaussian:
    """Fit the latent Gaussian of subtask ``j`` from binary-weight-1
    trajectories only.

    Sample covariance uses the (n - 1) divisor, then is shrunk toward the
    scaled identity: (1 - epsilon) * sigma + epsilon * (trace / d) * I, plus
    an absolute floor * I so the result is never singular.
    """
    latents = _as_latent_map(latents)
    good_ids = {tid for tid, b in weights.binary_lookup().items() if b == 1}
    pooled = _pool_subtask(latents, segs, good_ids, j)
    d = pooled.shape[1] if pooled.size else 0
    if len(pooled) < d + 1 or d == 0:
        raise FitError(
            f"subtask {j}: {len(pooled)} pooled samples are too few to fit a Gaussian"
        )
    # canonical sort fixes the summation order, so the fit is independent of
    # pooled sample order bit for bit
    order = np.lexsort(pooled.T[::-1])
    pooled = pooled[order]
    mu = pooled.mean(axis=0)
    centered = pooled - mu
    sigma = centered.T @ centered / (len(pooled) - 1)
    sigma = (sigma + sigma.T) / 2.0
    trace_scale = float(np.trace(sigma)) / d
    sigma = (1.0 - epsilon) * sigma + epsilon * trace_scale * np.eye(d)
    if floor > 0.0:
        sigma = sigma + floor * np.eye(d)
    return SubtaskGaussian(subtask_index=j, mu=mu, sigma=sigma, n_samples=len(pooled))


def fit_all_gaussians(
    latents,
    segs: dict[str, SubtaskSegmentation],
    weights: TrajectoryWeights,
    k_expected: int,
    epsilon: float = DEFAULT_SHRINKAGE,
    floor: float = DEFAULT_FLOOR,
) -> dict[int, SubtaskGaussian]:
    return {
        j: fit_subtask_gaussian(latents, segs, weights, j, epsilon, floor)
        for j in range(k_expected)
    }


@dataclass(frozen=True)
class DeviationTrace:
    """Per-timestep Mahalanobis distance against the active subtask."""

    trajectory_id: str
    t: np.ndarray
    subtask_index: np.ndarray
    distance: np.ndarray

    def __post_init__(self):
        if not (len(self.t) == len(self.subtask_index) == len(self.distance)):
            raise ValidationError("trace columns must have equal length")
        if not np.isfinite(self.distance).all() or (np.asarray(self.distance) < 0).any():
            raise ValidationError("trace distances must be finite and nonnegative")


@dataclass(frozen=True)
class ScoreEntry:
    trajectory_id: str
    subtask_index: int
    mean_score: float


@dataclass(frozen=True)
class ScoreTable:
    """Mean deviation per present (trajectory, subtask), plus enough context
    to reconstruct which subtasks are absent."""

    entries: tuple[ScoreEntry, ...]
    trajectory_ids: tuple[str, ...]
    k_expected: int


def _as_latent_map(latents) -> dict[str, LatentTrajectory]:
    if isinstance(latents, dict):
        return latents
    return {lt.trajectory_id: lt for lt in latents}


def score_subtasks(
    latents,
    segs: dict[str, SubtaskSegmentation],
    gaussians: dict[int, SubtaskGaussian],
) -> tuple[ScoreTable, dict[str, DeviationTrace]]:
    """Score every present subtask of every trajectory and emit full traces."""
    latents = _as_latent_map(latents)
    entries = []
    traces = {}
    k_expected = 0
    for tid in sorted(latents):
        lat = latents[tid]
        seg = segs.get(tid)
        if seg is None:
            raise ValidationError(f"no segmentation for trajectory {tid!r}")
        if seg.length != len(lat):
            raise ValidationError(f"segmentation/latent length mismatch for {tid!r}")
        k_expected = max(k_expected, seg.k_expected)
        distances = np.zeros(len(lat))
        subtask_of = seg.subtask_of()
        for j, (a, b) in enumerate(seg.segment_ranges()):
            g = gaussians.get(j)
            if g is None:
                raise ValidationError(f"no Gaussian fitted for present subtask {j}")
            seg_dist = g.distances(lat.z[a:b])
            distances[a:b] = seg_dist
            entries.append(ScoreEntry(tid, j, float(seg_dist.mean())))
        traces[tid] = DeviationTrace(
            trajectory_id=tid,
            t=np.arange(len(lat)),
            subtask_index=subtask_of,
            distance=distances,
        )
    table = ScoreTable(
        entries=tuple(entries),
        trajectory_ids=tuple(sorted(latents)),
        k_expected=k_expected,
    )
    return table, traces


def build_mask(table: ScoreTable, rho: int) -> SubtaskMask:
    """Mask the rho highest-scoring present subtasks (beta = 0), rest beta = 1.

    Ranking is (mean_score descending, trajectory_id ascending, subtask_index
    ascending), so ties at the cut prune the lower trajectory_id first. Absent
    subtasks get beta = 0 without consuming the rho budget.
    """
    if rho < 0:
        raise ValidationError("rho must be nonnegative")
    if rho > len(table.entries):
        raise ValidationError(
            f"rho={rho} exceeds the {len(table.entries)} present subtasks"
        )
    ranked = sorted(
        table.entries, key=lambda e: (-e.mean_score, e.trajectory_id, e.subtask_index)
    )
    pruned = {(e.trajectory_id, e.subtask_index) for e in ranked[:rho]}
    present = {(e.trajectory_id, e.subtask_index): e for e in table.entries}
    mask_entries = []
    for tid in table.trajectory_ids:
        for j in range(table.k_expected):
            entry = present.get((tid, j))
            if entry is None:
                mask_entries.append(MaskEntry(tid, j, present=False, mean_score=None, beta=0))
            else:
                beta = 0 if (tid, j) in pruned else 1
                mask_entries.append(
                    MaskEntry(tid, j, present=True, mean_score=entry.mean_score, beta=beta)
                )
    return SubtaskMask(entries=tuple(mask_entries), rho=rho)


def save_score_table(table: ScoreTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("trajectory_id,subtask_index,mean_score\n")
        for e in sorted(table.entries, key=lambda e: (e.trajectory_id, e.subtask_index)):
            fh.write(f"{e.trajectory_id},{e.subtask_index},{fmt_real(e.mean_score)}\n")


def load_score_table(path, k_expected: int | None = None) -> ScoreTable:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["trajectory_id", "subtask_index", "mean_score"]:
            raise ParseError(f"unexpected score header: {header}")
        for row in reader:
            if not row:
                continue
            entries.append(ScoreEntry(row[0], int(row[1]), float(row[2])))
    if not entries:
        raise ParseError("empty score table")
    if k_expected is None:
        k_expected = max(e.subtask_index for e in entries) + 1
    ids = tuple(sorted({e.trajectory_id for e in entries}))
    return ScoreTable(entries=tuple(entries), trajectory_ids=ids, k_expected=k_expected)


def save_traces(traces: dict[str, DeviationTrace], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("trajectory_id,t,subtask_index,distance\n")
        for tid in sorted(traces):
            tr = traces[tid]
            for t, j, d in zip(tr.t, tr.subtask_index, tr.distance):
                fh.write(f"{tid},{t},{j},{fmt_real(d)}\n")


def load_trace(path, trajectory_id: str) -> DeviationTrace:
    ts, js, ds = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["trajectory_id", "t", "subtask_index", "distance"]:
            raise ParseError(f"unexpected trace header: {header}")
        for row in reader:
            if row and row[0] == trajectory_id:
                ts.append(int(row[1]))
                js.append(int(row[2]))
                ds.append(float(row[3]))
    if not ts:
        raise ValidationError(f"no trace rows for trajectory {trajectory_id!r}")
    return DeviationTrace(
        trajectory_id=trajectory_id,
        t=np.array(ts),
        subtask_index=np.array(js),
        distance=np.array(ds),
    )
