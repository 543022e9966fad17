"""Subtask segmentation from gripper/height cues or external annotations.

A boundary is placed where the gripper openness crosses 0.5 upward (an open
event after having been at or below the threshold) or where the end-effector
height crosses the height threshold upward. Nearby events are debounced and
surplus ones are pruned by spacing, so a trajectory never yields more than
k_expected segments. Trajectories with fewer segments are kept; the missing
trailing subtasks are treated as absent downstream.
"""

from __future__ import annotations

import csv

import numpy as np

from .dataset import Dataset, SubtaskSegmentation, Trajectory
from .errors import ParseError, ValidationError

GRIPPER_OPEN_THRESHOLD = 0.5
DEBOUNCE_WINDOW = 5


def _upward_crossings(signal: np.ndarray, threshold: float) -> list[int]:
    """Indices t >= 1 where signal[t-1] <= threshold < signal[t]."""
    prev = signal[:-1]
    cur = signal[1:]
    return (np.nonzero((prev <= threshold) & (cur > threshold))[0] + 1).tolist()


def _debounce(events: list[int], window: int) -> list[int]:
    """Drop events closer than ``window`` steps to the previously kept one."""
    kept: list[int] = []
    for e in events:
        if kept and e - kept[-1] < window:
            continue
        kept.append(e)
    return kept


def _prune_by_spacing(events: list[int], keep: int, length: int) -> list[int]:
    """Keep the ``keep`` events with the largest spacing to their neighbors.

    Spacing of an event is its distance to the nearest other event or
    trajectory edge; ties keep the earlier event.
    """
    if len(events) <= keep:
        return events
    edges = [0] + events + [length]
    spacing = [
        min(edges[i + 1] - edges[i], edges[i + 2] - edges[i + 1])
        for i in range(len(events))
    ]
    order = sorted(range(len(events)), key=lambda i: (-spacing[i], events[i]))
    chosen = sorted(order[:keep])
    return [events[i] for i in chosen]


def segment_heuristic(
    t: Trajectory, k_expected: int, height_threshold: float = 0.3
) -> SubtaskSegmentation:
    """Segment one trajectory from its reserved gripper and height channels."""
    if k_expected < 1:
        raise ValidationError("k_expected must be >= 1")
    events = sorted(
        set(_upward_crossings(t.gripper, GRIPPER_OPEN_THRESHOLD))
        | set(_upward_crossings(t.height, height_threshold))
    )
    events = _debounce(events, DEBOUNCE_WINDOW)
    events = _prune_by_spacing(events, k_expected - 1, len(t))
    return SubtaskSegmentation(
        trajectory_id=t.id, boundaries=tuple(events), k_expected=k_expected, length=len(t)
    )


def segment_from_annotation(
    t: Trajectory, boundaries, k_expected: int
) -> SubtaskSegmentation:
    """Wrap externally supplied boundary indices, validating all invariants."""
    return SubtaskSegmentation(
        trajectory_id=t.id,
        boundaries=tuple(int(b) for b in boundaries),
        k_expected=k_expected,
        length=len(t),
    )


def segment_dataset(
    dataset: Dataset,
    k_expected: int,
    height_threshold: float = 0.3,
    annotations: dict[str, tuple[int, ...]] | None = None,
) -> dict[str, SubtaskSegmentation]:
    """Segment every trajectory; ids with annotations use them verbatim."""
    out = {}
    for t in dataset:
        if annotations is not None and t.id in annotations:
            out[t.id] = segment_from_annotation(t, annotations[t.id], k_expected)
        else:
            out[t.id] = segment_heuristic(t, k_expected, height_threshold)
    return out


def save_segmentations(segs: dict[str, SubtaskSegmentation], path) -> None:
    """One CSV row per boundary; boundary-free trajectories emit no rows."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("trajectory_id,boundary_index\n")
        for tid in sorted(segs):
            for b in segs[tid].boundaries:
                fh.write(f"{tid},{b}\n")


def load_segmentations(path, dataset: Dataset, k_expected: int) -> dict[str, SubtaskSegmentation]:
    """Rebuild segmentations for every dataset trajectory from a boundaries CSV."""
    boundaries: dict[str, list[int]] = {t.id: [] for t in dataset}
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["trajectory_id", "boundary_index"]:
            raise ParseError(f"unexpected segmentation header: {header}")
        for row in reader:
            if not row:
                continue
            if row[0] not in boundaries:
                raise ValidationError(f"segmentation row for unknown trajectory {row[0]!r}")
            boundaries[row[0]].append(int(row[1]))
    lengths = {t.id: len(t) for t in dataset}
    return {
        tid: SubtaskSegmentation(
            trajectory_id=tid,
            boundaries=tuple(sorted(bs)),
            k_expected=k_expected,
            length=lengths[tid],
        )
        for tid, bs in boundaries.items()
    }
