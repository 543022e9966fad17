"""Feedforward latent encoder and action head with hand-written gradients.

The full net is state -> tanh(h) -> tanh(d) -> tanh(h) -> action. The
tanh-activated d-dimensional layer is the latent representation, so latents
are bounded in (-1, 1), which keeps downstream Gaussian fitting stable.
Reverse-mode gradients are implemented here directly; the package has no
external differentiation dependency.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericError, ValidationError

MAGIC = b"GIBENC1"

# (weight shape, bias length) builders per layer, given the four dims.
_LAYERS = (
    lambda s, h, d, a: (h, s),
    lambda s, h, d, a: (d, h),
    lambda s, h, d, a: (h, d),
    lambda s, h, d, a: (a, h),
)


@dataclass(eq=False)
class EncoderParams:
    s_dim: int
    h_dim: int
    d_dim: int
    a_dim: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    w4: np.ndarray
    b4: np.ndarray

    def __post_init__(self):
        for name, arr in self._pairs():
            arr = np.asarray(arr, dtype=np.float64)
            if not np.isfinite(arr).all():
                raise ValidationError(f"parameter {name} contains non-finite values")
            setattr(self, name, arr)
        expected = [fn(self.s_dim, self.h_dim, self.d_dim, self.a_dim) for fn in _LAYERS]
        got = [self.w1.shape, self.w2.shape, self.w3.shape, self.w4.shape]
        if got != expected:
            raise ValidationError(f"weight shapes {got} do not match dims {expected}")
        biases = [self.b1.shape, self.b2.shape, self.b3.shape, self.b4.shape]
        if biases != [(h,) for h, _ in expected]:
            raise ValidationError(f"bias shapes {biases} do not match dims")

    def _pairs(self):
        return [(n, getattr(self, n)) for n in ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4")]

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.s_dim, self.h_dim, self.d_dim, self.a_dim)

    @property
    def n_params(self) -> int:
        return sum(arr.size for _, arr in self._pairs())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for _, arr in self._pairs()])

    @classmethod
    def from_vector(cls, dims: tuple[int, int, int, int], vec: np.ndarray) -> EncoderParams:
        s, h, d, a = dims
        shapes = []
        for fn in _LAYERS:
            w_shape = fn(s, h, d, a)
            shapes.append(w_shape)
            shapes.append((w_shape[0],))
        arrays = []
        pos = 0
        for shape in shapes:
            size = int(np.prod(shape))
            arrays.append(np.asarray(vec[pos : pos + size], dtype=np.float64).reshape(shape))
            pos += size
        if pos != len(vec):
            raise ValidationError(f"parameter vector length {len(vec)} != {pos}")
        return cls(s, h, d, a, *arrays)

    def copy(self) -> EncoderParams:
        return EncoderParams.from_vector(self.dims, self.to_vector().copy())

    @classmethod
    def init(cls, s_dim: int, a_dim: int, h_dim: int = 32, d_dim: int = 8, seed: int = 0) -> EncoderParams:
        """Seeded Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        arrays = []
        for fn in _LAYERS:
            fan_out, fan_in = fn(s_dim, h_dim, d_dim, a_dim)
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            arrays.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            arrays.append(np.zeros(fan_out))
        return cls(s_dim, h_dim, d_dim, a_dim, *arrays)

    @classmethod
    def zeros(cls, s_dim: int, a_dim: int, h_dim: int = 32, d_dim: int = 8) -> EncoderParams:
        arrays = []
        for fn in _LAYERS:
            shape = fn(s_dim, h_dim, d_dim, a_dim)
            arrays.append(np.zeros(shape))
            arrays.append(np.zeros(shape[0]))
        return cls(s_dim, h_dim, d_dim, a_dim, *arrays)


@dataclass
class ForwardCache:
    """Activations kept from a forward pass for the backward pass."""

    states: np.ndarray
    h1: np.ndarray
    z: np.ndarray
    h3: np.ndarray
    actions: np.ndarray


def forward(p: EncoderParams, states: np.ndarray) -> ForwardCache:
    """Run the full net on a (T, s_dim) batch of states."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if states.shape[1] != p.s_dim:
        raise ValidationError(f"state dim {states.shape[1]} != encoder s_dim {p.s_dim}")
    h1 = np.tanh(states @ p.w1.T + p.b1)
    z = np.tanh(h1 @ p.w2.T + p.b2)
    h3 = np.tanh(z @ p.w3.T + p.b3)
    actions = h3 @ p.w4.T + p.b4
    return ForwardCache(states, h1, z, h3, actions)


def encode_states(p: EncoderParams, states: np.ndarray) -> np.ndarray:
    """Latent embeddings for a (T, s_dim) batch, shape (T, d_dim)."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if states.shape[1] != p.s_dim:
        raise ValidationError(f"state dim {states.shape[1]} != encoder s_dim {p.s_dim}")
    h1 = np.tanh(states @ p.w1.T + p.b1)
    return np.tanh(h1 @ p.w2.T + p.b2)


def encode(p: EncoderParams, state: np.ndarray) -> np.ndarray:
    """Latent embedding of a single state, shape (d_dim,)."""
    state = np.asarray(state, dtype=np.float64)
    if state.ndim != 1:
        raise ValidationError("encode expects a single state vector")
    return encode_states(p, state[None, :])[0]


def predict_actions(p: EncoderParams, states: np.ndarray) -> np.ndarray:
    return forward(p, np.atleast_2d(states)).actions


def predict_action(p: EncoderParams, state: np.ndarray) -> np.ndarray:
    state = np.asarray(state, dtype=np.float64)
    if state.ndim != 1:
        raise ValidationError("predict_action expects a single state vector")
    return forward(p, state[None, :]).actions[0]


@dataclass(eq=False)
class Grads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    w4: np.ndarray
    b4: np.ndarray

    @classmethod
    def zeros_like(cls, p: EncoderParams) -> Grads:
        return cls(*(np.zeros_like(arr) for _, arr in p._pairs()))

    def add_(self, other: Grads) -> None:
        for name in ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4"):
            getattr(self, name).__iadd__(getattr(other, name))

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [getattr(self, n).ravel() for n in ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4")]
        )


def backward(
    p: EncoderParams,
    cache: ForwardCache,
    d_actions: np.ndarray | None = None,
    d_latent: np.ndarray | None = None,
) -> Grads:
    """Accumulate parameter gradients for cotangents on the action output
    and/or on the latent layer."""
    T = cache.states.shape[0]
    if d_actions is None:
        d_actions = np.zeros((T, p.a_dim))
    if d_latent is None:
        d_latent = np.zeros((T, p.d_dim))
    g = Grads.zeros_like(p)
    g.w4 = d_actions.T @ cache.h3
    g.b4 = d_actions.sum(axis=0)
    d_h3 = d_actions @ p.w4
    d_pre3 = d_h3 * (1.0 - cache.h3 ** 2)
    g.w3 = d_pre3.T @ cache.z
    g.b3 = d_pre3.sum(axis=0)
    d_z = d_pre3 @ p.w3 + d_latent
    d_pre2 = d_z * (1.0 - cache.z ** 2)
    g.w2 = d_pre2.T @ cache.h1
    g.b2 = d_pre2.sum(axis=0)
    d_h1 = d_pre2 @ p.w2
    d_pre1 = d_h1 * (1.0 - cache.h1 ** 2)
    g.w1 = d_pre1.T @ cache.states
    g.b1 = d_pre1.sum(axis=0)
    return g


@dataclass(frozen=True, eq=False)
class LatentTrajectory:
    """Per-timestep latent embeddings of one trajectory."""

    trajectory_id: str
    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim != 2 or len(z) < 1:
            raise ValidationError(f"latents for {self.trajectory_id!r} must be (T, d)")
        if not np.isfinite(z).all():
            raise ValidationError(f"latents for {self.trajectory_id!r} are non-finite")
        z.flags.writeable = False
        object.__setattr__(self, "z", z)

    def __len__(self) -> int:
        return len(self.z)


def encode_dataset(p: EncoderParams, dataset) -> tuple[LatentTrajectory, ...]:
    """Encode every trajectory of a dataset."""
    return tuple(
        LatentTrajectory(t.id, encode_states(p, t.states)) for t in dataset.trajectories
    )


LossFn = Callable[[EncoderParams], tuple[float, np.ndarray]]


def grad_check(p: EncoderParams, loss: LossFn, seed: int, step: float = 1e-5, n_sample: int = 50) -> float:
    """Max relative error between the analytic gradient of ``loss`` and central
    finite differences over a random sample of parameters.

    ``loss`` maps params to (value, flat analytic gradient). Samples
    min(n_params, n_sample) coordinates.
    """
    value, grad = loss(p)
    if not np.isfinite(value):
        raise NumericError("loss is non-finite at the evaluation point")
    grad = np.asarray(grad, dtype=np.float64)
    vec = p.to_vector()
    if grad.shape != vec.shape:
        raise ValidationError("analytic gradient has wrong length")
    rng = np.random.default_rng(seed)
    n = len(vec)
    idx = rng.permutation(n)[: min(n, n_sample)]
    worst = 0.0
    for i in idx:
        bumped = vec.copy()
        bumped[i] = vec[i] + step
        f_plus, _ = loss(EncoderParams.from_vector(p.dims, bumped))
        bumped[i] = vec[i] - step
        f_minus, _ = loss(EncoderParams.from_vector(p.dims, bumped))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError("loss is non-finite at a perturbed point")
        numeric = (f_plus - f_minus) / (2.0 * step)
        rel = abs(grad[i] - numeric) / max(1e-8, abs(numeric))
        worst = max(worst, rel)
    return worst


def save_params(p: EncoderParams, path) -> None:
    """Flat binary format: magic, four int32 LE dims, then all arrays row-major
    as float64 LE in layer order (w1, b1, ..., w4, b4)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4i", p.s_dim, p.h_dim, p.d_dim, p.a_dim))
        fh.write(p.to_vector().astype("<f8").tobytes())


def load_params(path) -> EncoderParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValidationError(f"{path}: bad magic bytes, not an encoder file")
    dims = struct.unpack_from("<4i", blob, len(MAGIC))
    vec = np.frombuffer(blob, dtype="<f8", offset=len(MAGIC) + 16).astype(np.float64)
    return EncoderParams.from_vector(dims, vec)
