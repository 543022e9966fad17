"""Trajectory data model and bit-exact file formats.

Datasets are JSON Lines (one trajectory per line); subtask masks are CSV.
All real values are serialized with 17 significant digits so that
load(save(x)) reproduces x exactly, bit for bit.

State vectors reserve their last two entries: gripper openness in [0, 1]
and end-effector height in task units. Everything before those is opaque
to this package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParseError, ValidationError

GRIPPER_CHANNEL = -2
HEIGHT_CHANNEL = -1


def fmt_real(x: float) -> str:
    """Format a float with 17 significant digits (exact float64 round-trip)."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class TrajectoryTruth:
    """Ground-truth quality labels. Evaluation only; curation never reads them."""

    good: bool
    bad_subtasks: tuple[int, ...] = ()


@dataclass(frozen=True, eq=False)
class Trajectory:
    id: str
    states: np.ndarray
    actions: np.ndarray
    truth: TrajectoryTruth | None = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.float64)
        actions = np.asarray(self.actions, dtype=np.float64)
        if states.ndim != 2 or actions.ndim != 2:
            raise ValidationError(f"trajectory {self.id!r}: states/actions must be 2-d")
        if len(states) != len(actions):
            raise ValidationError(
                f"trajectory {self.id!r}: {len(states)} states vs {len(actions)} actions"
            )
        if len(states) < 2:
            raise ValidationError(f"trajectory {self.id!r}: needs at least 2 timesteps")
        if not (np.isfinite(states).all() and np.isfinite(actions).all()):
            raise ValidationError(f"trajectory {self.id!r}: non-finite values")
        states.flags.writeable = False
        actions.flags.writeable = False
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def gripper(self) -> np.ndarray:
        return self.states[:, GRIPPER_CHANNEL]

    @property
    def height(self) -> np.ndarray:
        return self.states[:, HEIGHT_CHANNEL]


@dataclass(frozen=True, eq=False)
class Dataset:
    trajectories: tuple[Trajectory, ...]
    s_dim: int = field(init=False)
    a_dim: int = field(init=False)

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise ValidationError("dataset must contain at least one trajectory")
        s_dim = trajs[0].states.shape[1]
        a_dim = trajs[0].actions.shape[1]
        seen = set()
        for t in trajs:
            if t.id in seen:
                raise ValidationError(f"duplicate trajectory id {t.id!r}")
            seen.add(t.id)
            if t.states.shape[1] != s_dim:
                raise ValidationError(
                    f"trajectory {t.id!r}: state dim {t.states.shape[1]} != {s_dim}"
                )
            if t.actions.shape[1] != a_dim:
                raise ValidationError(
                    f"trajectory {t.id!r}: action dim {t.actions.shape[1]} != {a_dim}"
                )
        object.__setattr__(self, "trajectories", trajs)
        object.__setattr__(self, "s_dim", s_dim)
        object.__setattr__(self, "a_dim", a_dim)

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def ids(self) -> tuple[str, ...]:
        return tuple(t.id for t in self.trajectories)

    def without_truth(self) -> Dataset:
        """Copy with all truth labels stripped. Curation entry points call this
        so that ground-truth labels cannot leak into the algorithms."""
        return Dataset(tuple(replace(t, truth=None) for t in self.trajectories))


@dataclass(frozen=True)
class SubtaskSegmentation:
    """Interior boundary indices splitting [0, T) into consecutive segments."""

    trajectory_id: str
    boundaries: tuple[int, ...]
    k_expected: int
    length: int

    def __post_init__(self):
        if self.k_expected < 1:
            raise ValidationError("k_expected must be >= 1")
        b = tuple(int(x) for x in self.boundaries)
        if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise ValidationError(
                f"trajectory {self.trajectory_id!r}: boundaries not strictly increasing"
            )
        if b and (b[0] <= 0 or b[-1] >= self.length):
            raise ValidationError(
                f"trajectory {self.trajectory_id!r}: boundaries must be interior to (0, {self.length})"
            )
        if len(b) + 1 > self.k_expected:
            raise ValidationError(
                f"trajectory {self.trajectory_id!r}: {len(b) + 1} segments exceed k_expected={self.k_expected}"
            )
        object.__setattr__(self, "boundaries", b)

    @property
    def n_segments(self) -> int:
        return len(self.boundaries) + 1

    def segment_ranges(self) -> list[tuple[int, int]]:
        """Half-open (start, stop) index ranges, one per segment, tiling [0, T)."""
        edges = (0,) + self.boundaries + (self.length,)
        return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]

    def subtask_of(self) -> np.ndarray:
        """Per-timestep subtask index, shape (T,)."""
        out = np.zeros(self.length, dtype=np.int64)
        for j, (a, b) in enumerate(self.segment_ranges()):
            out[a:b] = j
        return out


@dataclass(frozen=True)
class MaskEntry:
    trajectory_id: str
    subtask_index: int
    present: bool
    mean_score: float | None
    beta: int


@dataclass(frozen=True)
class SubtaskMask:
    entries: tuple[MaskEntry, ...]
    rho: int

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.rho < 0:
            raise ValidationError("rho must be nonnegative")
        present = [e for e in self.entries if e.present]
        for e in self.entries:
            if e.beta not in (0, 1):
                raise ValidationError("beta must be 0 or 1")
            if e.present:
                if e.mean_score is None or e.mean_score < 0:
                    raise ValidationError(
                        f"present entry ({e.trajectory_id!r}, {e.subtask_index}) needs a nonnegative score"
                    )
            else:
                if e.beta != 0 or e.mean_score is not None:
                    raise ValidationError("absent subtasks carry beta=0 and no score")
        if self.rho > len(present):
            raise ValidationError(
                f"rho={self.rho} exceeds present subtask count {len(present)}"
            )
        total = sum(e.beta for e in present)
        if total != len(present) - self.rho:
            raise ValidationError(
                f"sum of beta over present entries is {total}, expected {len(present) - self.rho}"
            )

    def beta_lookup(self) -> dict[tuple[str, int], int]:
        return {(e.trajectory_id, e.subtask_index): e.beta for e in self.entries}


def _parse_trajectory(obj: dict, line_no: int) -> Trajectory:
    if not isinstance(obj, dict):
        raise ParseError(f"line {line_no}: expected a JSON object")
    for key in ("id", "states", "actions"):
        if key not in obj:
            raise ParseError(f"line {line_no}: missing key {key!r}")
    truth = None
    if obj.get("truth") is not None:
        raw = obj["truth"]
        try:
            truth = TrajectoryTruth(
                good=bool(raw["good"]),
                bad_subtasks=tuple(int(j) for j in raw.get("bad_subtasks", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"line {line_no}: malformed truth record: {exc}") from exc
    try:
        return Trajectory(
            id=str(obj["id"]),
            states=np.asarray(obj["states"], dtype=np.float64),
            actions=np.asarray(obj["actions"], dtype=np.float64),
            truth=truth,
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(f"line {line_no}: malformed arrays: {exc}") from exc


def load_dataset(path) -> Dataset:
    """Load a JSON Lines dataset, validating all invariants."""
    trajectories = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {line_no}: invalid JSON: {exc.msg}") from exc
            trajectories.append(_parse_trajectory(obj, line_no))
    return Dataset(tuple(trajectories))


def _matrix_json(m: np.ndarray) -> str:
    rows = ("[" + ", ".join(fmt_real(v) for v in row) + "]" for row in m)
    return "[" + ", ".join(rows) + "]"


def _trajectory_json(t: Trajectory) -> str:
    parts = [
        f'"id": {json.dumps(t.id)}',
        f'"states": {_matrix_json(t.states)}',
        f'"actions": {_matrix_json(t.actions)}',
    ]
    if t.truth is not None:
        bad = "[" + ", ".join(str(j) for j in t.truth.bad_subtasks) + "]"
        parts.append(
            f'"truth": {{"good": {json.dumps(t.truth.good)}, "bad_subtasks": {bad}}}'
        )
    return "{" + ", ".join(parts) + "}"


def save_dataset(d: Dataset, path) -> None:
    """Write a dataset as JSON Lines. load_dataset inverts this exactly."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in d.trajectories:
            fh.write(_trajectory_json(t))
            fh.write("\n")


MASK_HEADER = ["trajectory_id", "subtask_index", "present", "mean_score", "beta"]


def save_mask(m: SubtaskMask, path, method: str | None = None) -> None:
    """Write a validated mask as CSV, rows sorted by (trajectory_id, subtask_index).

    When ``method`` is given an extra column tags every row with it (used for
    baseline comparator masks).
    """
    header = MASK_HEADER + (["method"] if method is not None else [])
    rows = sorted(m.entries, key=lambda e: (e.trajectory_id, e.subtask_index))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for e in rows:
            score = "" if e.mean_score is None else fmt_real(e.mean_score)
            cells = [
                e.trajectory_id,
                str(e.subtask_index),
                "true" if e.present else "false",
                score,
                str(e.beta),
            ]
            if method is not None:
                cells.append(method)
            fh.write(",".join(cells) + "\n")


def load_mask(path) -> SubtaskMask:
    """Load a mask CSV. rho is recovered from the sum-of-beta constraint."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ParseError("empty mask file")
    header = lines[0].split(",")
    if header[: len(MASK_HEADER)] != MASK_HEADER:
        raise ParseError(f"unexpected mask header: {lines[0]!r}")
    entries = []
    for line_no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) < len(MASK_HEADER):
            raise ParseError(f"line {line_no}: expected {len(MASK_HEADER)} cells")
        try:
            present = {"true": True, "false": False}[cells[2]]
            entries.append(
                MaskEntry(
                    trajectory_id=cells[0],
                    subtask_index=int(cells[1]),
                    present=present,
                    mean_score=float(cells[3]) if cells[3] else None,
                    beta=int(cells[4]),
                )
            )
        except (KeyError, ValueError) as exc:
            raise ParseError(f"line {line_no}: malformed mask row: {exc}") from exc
    present_entries = [e for e in entries if e.present]
    rho = len(present_entries) - sum(e.beta for e in present_entries)
    return SubtaskMask(entries=tuple(entries), rho=rho)
