"""Downstream behavior cloning with trajectory or subtask weights.

The log-likelihood of a unit-variance Gaussian policy head reduces to half
the squared action error, so the weighted BC losses here are quadratic.
Training accumulates gradients trajectory by trajectory in dataset order;
together with exact-zero contributions from zero-weight data this makes
masking a trajectory bitwise identical to physically removing it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, SubtaskMask, SubtaskSegmentation, fmt_real
from .encoder import EncoderParams, Grads, backward, forward, predict_action
from .errors import NumericError, ValidationError


@dataclass(frozen=True)
class PolicyConfig:
    epochs: int = 1500
    step_size: float = 0.02
    momentum: float = 0.9
    hidden: int = 32
    latent: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.step_size <= 0:
            raise ValidationError("epochs and step_size must be positive")


def timestep_weights(
    dataset: Dataset,
    weights: np.ndarray | SubtaskMask | None,
    segs: dict[str, SubtaskSegmentation] | None = None,
) -> list[np.ndarray]:
    """Per-timestep weight arrays, one per trajectory.

    ``weights`` may be a per-trajectory vector, a subtask mask (requires
    segmentations), or None for uniform weighting.
    """
    if weights is None:
        return [np.ones(len(t)) for t in dataset]
    if isinstance(weights, SubtaskMask):
        if segs is None:
            raise ValidationError("a subtask mask needs segmentations to apply")
        lookup = weights.beta_lookup()
        out = []
        for t in dataset:
            seg = segs.get(t.id)
            if seg is None:
                raise ValidationError(f"no segmentation for trajectory {t.id!r}")
            w = np.zeros(len(t))
            for j, (a, b) in enumerate(seg.segment_ranges()):
                beta = lookup.get((t.id, j))
                if beta is None:
                    raise ValidationError(
                        f"mask has no entry for trajectory {t.id!r} subtask {j}"
                    )
                w[a:b] = beta
            out.append(w)
        return out
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(dataset),):
        raise ValidationError("one weight per trajectory required")
    return [np.full(len(t), w) for t, w in zip(dataset, weights)]


def bc_loss_weighted(
    params: EncoderParams,
    dataset: Dataset,
    weights: np.ndarray | SubtaskMask,
    segs: dict[str, SubtaskSegmentation] | None = None,
) -> float:
    """Weighted BC loss: (1/N) * sum_i sum_t weight(i, t) * 0.5 * ||pi(s) - a||^2.

    With a per-trajectory weight vector every timestep of trajectory i gets
    w_i; with a subtask mask the timestep weight is the beta of its segment,
    which reduces to the trajectory form when all betas of a trajectory are
    equal.
    """
    per_step = timestep_weights(dataset, weights, segs)
    total = 0.0
    for t, w in zip(dataset, per_step):
        residual = forward(params, t.states).actions - t.actions
        total += float(w @ (0.5 * (residual * residual).sum(axis=1)))
    return total / len(dataset)


@dataclass(frozen=True)
class PolicyResult:
    params: EncoderParams
    log: tuple[float, ...]


def train_policy(
    dataset: Dataset,
    mask: SubtaskMask | None,
    cfg: PolicyConfig,
    segs: dict[str, SubtaskSegmentation] | None = None,
) -> PolicyResult:
    """Train a fresh encoder+head by full-batch momentum descent on the
    masked loss. ``mask=None`` trains on everything uniformly.

    The training objective normalizes by the number of actively weighted
    timesteps (not by N), so its scale does not depend on how much data the
    mask removes; minimizers match the documented (1/N) loss.
    """
    dataset = dataset.without_truth()
    per_step = timestep_weights(dataset, mask, segs)
    n_active = sum(int((w > 0).sum()) for w in per_step)
    if n_active == 0:
        raise ValidationError("all weights are zero; nothing to train on")
    active = [(t, w) for t, w in zip(dataset, per_step) if (w > 0).any()]

    params = EncoderParams.init(
        dataset.s_dim, dataset.a_dim, h_dim=cfg.hidden, d_dim=cfg.latent, seed=cfg.seed
    )
    theta = params.to_vector()
    velocity = np.zeros_like(theta)
    log = []
    for _ in range(cfg.epochs):
        params = EncoderParams.from_vector(params.dims, theta)
        loss = 0.0
        grads = Grads.zeros_like(params)
        for t, w in active:
            cache = forward(params, t.states)
            residual = cache.actions - t.actions
            loss += float(w @ (0.5 * (residual * residual).sum(axis=1)))
            d_actions = (w[:, None] / n_active) * residual
            grads.add_(backward(params, cache, d_actions))
        loss /= n_active
        if not np.isfinite(loss):
            raise NumericError("non-finite loss during policy training")
        log.append(loss)
        velocity = cfg.momentum * velocity + grads.to_vector()
        theta = theta - cfg.step_size * velocity
    params = EncoderParams.from_vector(params.dims, theta)
    return PolicyResult(params=params, log=tuple(log))


def policy_fn(params: EncoderParams):
    """Wrap trained params as the state -> action callable rollouts expect."""

    def policy(state: np.ndarray) -> np.ndarray:
        return predict_action(params, np.asarray(state, dtype=np.float64))

    return policy


def save_policy_log(log, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,loss\n")
        for epoch, value in enumerate(log):
            fh.write(f"{epoch},{fmt_real(value)}\n")


def save_eval_report(rows, path) -> None:
    """Evaluation report CSV: method,sub1,sub2,sub3,full,seed.

    ``rows`` holds (method, EvalResult, seed); two-subtask scenarios leave
    sub3 blank.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("method,sub1,sub2,sub3,full,seed\n")
        for method, result, seed in rows:
            subs = list(result.subtask_rates) + [None] * (3 - len(result.subtask_rates))
            cells = [method]
            cells += ["" if s is None else fmt_real(s) for s in subs]
            cells += [fmt_real(result.full_rate), str(seed)]
            fh.write(",".join(cells) + "\n")
