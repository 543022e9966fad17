"""Stage 1: joint learning of the latent encoder and per-trajectory weights.

A single scalar weight per trajectory multiplies that trajectory's action,
goal and path inconsistency costs, while a soft count constraint keeps the
weight mass near the expected fraction of good demonstrations. Minimizing
the total by gradient descent drives weights of inconsistent trajectories
toward 0 and of consistent ones toward 1.

The nominal goal and nominal path are weight-normalized means over the
current latents. They are refreshed every epoch and treated as constants
within a gradient step (no gradient flows through them).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, fmt_real
from .encoder import EncoderParams, Grads, LatentTrajectory, backward, forward
from .errors import NumericError, ParseError, ValidationError

_NORM_TINY = 1e-300  # below this, norm gradients use the zero subgradient


@dataclass(frozen=True)
class BedConfig:
    c: float = 1.0
    h_coef: float = 0.1
    q: float = 0.1
    lambda_count: float = 1.0
    m: float = 0.75
    epochs: int = 500
    step_size: float = 1e-3
    momentum: float = 0.9
    resample_len: int = 100
    seed: int = 0
    hidden: int = 32
    latent: int = 8

    def __post_init__(self):
        if not (0.0 < self.m <= 1.0):
            raise ValidationError("m must be in (0, 1]")
        for name in ("c", "h_coef", "q", "lambda_count"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")
        if self.epochs < 1 or self.step_size <= 0 or self.resample_len < 2:
            raise ValidationError("epochs, step_size, resample_len out of range")


@dataclass(frozen=True)
class TrajectoryWeights:
    ids: tuple[str, ...]
    raw: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=np.float64)
        if raw.shape != (len(self.ids),):
            raise ValidationError("one raw weight per trajectory id required")
        if raw.min(initial=0.0) < 0.0 or raw.max(initial=0.0) > 1.0:
            raise ValidationError("raw weights must lie in [0, 1]")
        raw = raw.copy()
        raw.flags.writeable = False
        object.__setattr__(self, "raw", raw)

    @property
    def binary(self) -> np.ndarray:
        """1 where raw > 0.5; exact ties resolve to 0."""
        return (self.raw > 0.5).astype(np.int64)

    def binary_lookup(self) -> dict[str, int]:
        return dict(zip(self.ids, self.binary.tolist()))


@dataclass(frozen=True)
class NominalStats:
    goal: np.ndarray  # (d,)
    path: np.ndarray  # (L, d)


@dataclass(frozen=True)
class BedLossBreakdown:
    """Weighted contributions; total == action + goal + path + count."""

    total: float
    action: float
    goal: float
    path: float
    count: float

    def finite(self) -> bool:
        return bool(np.isfinite([self.total, self.action, self.goal, self.path, self.count]).all())

    def offending_term(self) -> str:
        for name in ("action", "goal", "path", "count"):
            if not np.isfinite(getattr(self, name)):
                return name
        return "total"


def _resample_weights(length: int, resample_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Lower source index and fractional offset for each resampled row."""
    pos = np.linspace(0.0, 1.0, resample_len) * (length - 1)
    idx0 = np.minimum(pos.astype(np.int64), length - 2)
    alpha = pos - idx0
    return idx0, alpha


def resample_latent(z: LatentTrajectory | np.ndarray, resample_len: int) -> np.ndarray:
    """Linearly interpolate latents onto a uniform grid of ``resample_len``
    normalized times in [0, 1]. First and last rows are exact copies."""
    if isinstance(z, LatentTrajectory):
        z = z.z
    z = np.asarray(z, dtype=np.float64)
    if resample_len < 2:
        raise ValidationError("resample length must be >= 2")
    if z.ndim != 2 or len(z) < 2:
        raise ValidationError("latent trajectory must have at least 2 timesteps")
    idx0, alpha = _resample_weights(len(z), resample_len)
    return (1.0 - alpha)[:, None] * z[idx0] + alpha[:, None] * z[idx0 + 1]


class _Problem:
    """Concatenated views of a dataset so each epoch runs batched."""

    def __init__(self, dataset: Dataset, resample_len: int):
        self.n = len(dataset)
        self.states = np.concatenate([t.states for t in dataset])
        self.actions = np.concatenate([t.actions for t in dataset])
        self.slices = []
        self.resample = []
        start = 0
        for t in dataset:
            stop = start + len(t)
            self.slices.append((start, stop))
            self.resample.append(_resample_weights(len(t), resample_len))
            start = stop


def _evaluate(
    params: EncoderParams,
    weights: np.ndarray,
    problem: _Problem,
    cfg: BedConfig,
    nominals: NominalStats,
    with_grads: bool,
) -> tuple[BedLossBreakdown, Grads | None, np.ndarray | None]:
    n = problem.n
    L = cfg.resample_len
    cache = forward(params, problem.states)
    residual = cache.actions - problem.actions

    action_raw = 0.0
    goal_raw = 0.0
    path_raw = 0.0
    d_actions = np.zeros_like(residual) if with_grads else None
    d_latent = np.zeros_like(cache.z) if with_grads else None
    dw = np.zeros(n) if with_grads else None

    for i, (start, stop) in enumerate(problem.slices):
        w_i = weights[i]
        T_i = stop - start
        r = residual[start:stop]
        action_err = float((r * r).sum()) / T_i

        z = cache.z[start:stop]
        goal_diff = z[-1] - nominals.goal
        goal_norm = float(np.linalg.norm(goal_diff))

        idx0, alpha = problem.resample[i]
        resampled = (1.0 - alpha)[:, None] * z[idx0] + alpha[:, None] * z[idx0 + 1]
        path_diff = resampled - nominals.path
        path_norm = float(np.linalg.norm(path_diff))

        action_raw += w_i * action_err
        goal_raw += w_i * goal_norm
        path_raw += w_i * path_norm / L

        if with_grads:
            d_actions[start:stop] = (2.0 * cfg.c * w_i / (n * T_i)) * r
            if goal_norm > _NORM_TINY:
                d_latent[stop - 1] += (cfg.h_coef * w_i / goal_norm) * goal_diff
            if path_norm > _NORM_TINY:
                d_resampled = (cfg.q * w_i / (L * path_norm)) * path_diff
                np.add.at(d_latent, start + idx0, (1.0 - alpha)[:, None] * d_resampled)
                np.add.at(d_latent, start + idx0 + 1, alpha[:, None] * d_resampled)
            dw[i] = cfg.c * action_err / n + cfg.h_coef * goal_norm + cfg.q * path_norm / L

    action_raw /= n
    count_gap = cfg.m * n - float(weights.sum())
    breakdown = BedLossBreakdown(
        total=cfg.c * action_raw
        + cfg.h_coef * goal_raw
        + cfg.q * path_raw
        + cfg.lambda_count * count_gap**2,
        action=cfg.c * action_raw,
        goal=cfg.h_coef * goal_raw,
        path=cfg.q * path_raw,
        count=cfg.lambda_count * count_gap**2,
    )
    if not with_grads:
        return breakdown, None, None
    grads = backward(params, cache, d_actions, d_latent)
    dw += -2.0 * cfg.lambda_count * count_gap
    return breakdown, grads, dw


def _compute_nominals(
    params: EncoderParams, weights: np.ndarray, problem: _Problem, cfg: BedConfig
) -> NominalStats:
    total = float(weights.sum())
    if total <= 0.0:
        raise NumericError(
            "all trajectory weights are zero; re-initialize the weights (larger m or fresh seed)"
        )
    cache = forward(params, problem.states)
    goal = np.zeros(params.d_dim)
    path = np.zeros((cfg.resample_len, params.d_dim))
    for i, (start, stop) in enumerate(problem.slices):
        z = cache.z[start:stop]
        idx0, alpha = problem.resample[i]
        goal += weights[i] * z[-1]
        path += weights[i] * ((1.0 - alpha)[:, None] * z[idx0] + alpha[:, None] * z[idx0 + 1])
    return NominalStats(goal=goal / total, path=path / total)


def compute_nominals(
    params: EncoderParams, weights: np.ndarray, dataset: Dataset, cfg: BedConfig
) -> NominalStats:
    """Weight-normalized mean terminal latent and mean resampled latent path."""
    return _compute_nominals(params, np.asarray(weights, dtype=np.float64),
                             _Problem(dataset, cfg.resample_len), cfg)


def compute_bed_loss(
    params: EncoderParams,
    weights: np.ndarray,
    dataset: Dataset,
    cfg: BedConfig,
    nominals: NominalStats | None = None,
) -> BedLossBreakdown:
    """Inconsistency loss for the given weights.

    When ``nominals`` is omitted they are recomputed from the inputs; pass a
    precomputed value to evaluate the fixed-nominal objective a gradient step
    actually descends.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(dataset),):
        raise ValidationError("one weight per trajectory required")
    if weights.min() < 0.0 or weights.max() > 1.0:
        raise ValidationError("weights must lie in [0, 1]")
    problem = _Problem(dataset, cfg.resample_len)
    if nominals is None:
        nominals = _compute_nominals(params, weights, problem, cfg)
    breakdown, _, _ = _evaluate(params, weights, problem, cfg, nominals, with_grads=False)
    return breakdown


def bed_loss_and_grads(
    params: EncoderParams,
    weights: np.ndarray,
    dataset: Dataset,
    cfg: BedConfig,
    nominals: NominalStats,
) -> tuple[BedLossBreakdown, Grads, np.ndarray]:
    """Loss plus analytic gradients wrt params and weights, nominals fixed."""
    weights = np.asarray(weights, dtype=np.float64)
    problem = _Problem(dataset, cfg.resample_len)
    breakdown, grads, dw = _evaluate(params, weights, problem, cfg, nominals, with_grads=True)
    return breakdown, grads, dw


@dataclass(frozen=True)
class BedResult:
    params: EncoderParams
    weights: TrajectoryWeights
    log: tuple[BedLossBreakdown, ...] = field(repr=False)


def train_bed(dataset: Dataset, cfg: BedConfig) -> BedResult:
    """Jointly optimize encoder params and trajectory weights.

    Full-batch momentum descent; weights start at m and are projected onto
    [0, 1] after every step. Deterministic given cfg.seed.
    """
    if len(dataset) < 2:
        raise ValidationError("stage-1 training needs at least 2 trajectories")
    dataset = dataset.without_truth()
    problem = _Problem(dataset, cfg.resample_len)
    params = EncoderParams.init(
        dataset.s_dim, dataset.a_dim, h_dim=cfg.hidden, d_dim=cfg.latent, seed=cfg.seed
    )
    theta = params.to_vector()
    w = np.full(len(dataset), float(cfg.m))
    np.clip(w, 0.0, 1.0, out=w)
    v_theta = np.zeros_like(theta)
    v_w = np.zeros_like(w)
    log = []
    for _ in range(cfg.epochs):
        params = EncoderParams.from_vector(params.dims, theta)
        nominals = _compute_nominals(params, w, problem, cfg)
        breakdown, grads, dw = _evaluate(params, w, problem, cfg, nominals, with_grads=True)
        if not breakdown.finite():
            raise NumericError(
                f"non-finite loss during training (offending term: {breakdown.offending_term()})"
            )
        log.append(breakdown)
        v_theta = cfg.momentum * v_theta + grads.to_vector()
        v_w = cfg.momentum * v_w + dw
        theta = theta - cfg.step_size * v_theta
        w = np.clip(w - cfg.step_size * v_w, 0.0, 1.0)
    params = EncoderParams.from_vector(params.dims, theta)
    weights = TrajectoryWeights(ids=dataset.ids(), raw=w)
    return BedResult(params=params, weights=weights, log=tuple(log))


def save_weights(tw: TrajectoryWeights, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("trajectory_id,raw_weight,binary\n")
        for tid, raw, b in zip(tw.ids, tw.raw, tw.binary):
            fh.write(f"{tid},{fmt_real(raw)},{b}\n")


def load_weights(path) -> TrajectoryWeights:
    ids = []
    raw = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["trajectory_id", "raw_weight", "binary"]:
            raise ParseError(f"unexpected weights header: {header}")
        for row in reader:
            if not row:
                continue
            ids.append(row[0])
            raw.append(float(row[1]))
    return TrajectoryWeights(ids=tuple(ids), raw=np.array(raw))


def save_loss_log(log, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,total,action,goal,path,count\n")
        for epoch, b in enumerate(log):
            cells = [str(epoch)] + [fmt_real(v) for v in (b.total, b.action, b.goal, b.path, b.count)]
            fh.write(",".join(cells) + "\n")
