"""Deterministic kinematic manipulation benchmark with scripted demonstrators.

A point end-effector moves in the unit cube, grasps objects by closing the
gripper nearby, and interacts with a sliding drawer. Scripted waypoint
demonstrators generate good demonstrations (with seeded jitter for
diversity) and injected errors produce labeled bad ones. Everything is a
pure function of (scenario, counts, specs, seed).

Scenarios:
  drawer3     pick an object, place it into an open drawer, close the drawer
  twostep     pick an object and place it on a serving region
  multimodal2 same as twostep but the object is grasped by its left or right
              handle, alternating across demonstrations

Action layout: three end-effector deltas (clamped to 0.05 per axis), three
unused rotation channels, and one gripper command (+1 open, -1 close,
0 hold).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, Trajectory, TrajectoryTruth
from .errors import ValidationError

MAX_DELTA = 0.05
GRASP_RADIUS = 0.03
HANDLE_CONTACT = 0.05
TABLE_Z = 0.10
START_Z = 0.40
LIFT_Z = 0.36
HEIGHT_THRESHOLD = 0.3  # matches the segmentation default

DRAWER_CENTER = np.array([0.70, 0.70])
DRAWER_RADIUS = 0.10
DRAWER_PLACE_Z = 0.22
HANDLE_X = 0.70
HANDLE_Z = 0.12
HANDLE_TRAVEL = 0.15
HANDLE_Y_CLOSED = 0.55

SERVING_CENTER = np.array([0.75, 0.70])
SERVING_RADIUS = 0.06
SERVING_PLACE_Z = 0.16

ALIGN_TOL = 0.012
CLOSE_DONE = 0.02
ACTION_DIM = 7

ERROR_KINDS = ("action-noise", "wrong-goal", "wrong-path", "corrupt-subtask")
SCENARIOS = ("drawer3", "twostep", "multimodal2")

# grasp points relative to each object's center
_GRASP_OFFSETS: dict[str, tuple[tuple[float, float, float], ...]] = {
    "item": ((0.0, 0.0, 0.0),),
    "pot": ((-0.06, 0.0, 0.0), (0.06, 0.0, 0.0)),
}


def handle_position(openness: float) -> np.ndarray:
    """Drawer handle location; the drawer slides along y as it opens."""
    return np.array([HANDLE_X, HANDLE_Y_CLOSED - HANDLE_TRAVEL * openness, HANDLE_Z])


@dataclass(frozen=True, eq=False)
class WorldState:
    ee: np.ndarray
    gripper: float
    objects: dict[str, np.ndarray]
    drawer_openness: float | None
    held: str | None = None
    held_offset: np.ndarray | None = None

    def __post_init__(self):
        ee = np.asarray(self.ee, dtype=np.float64)
        if ee.shape != (3,) or (ee < 0).any() or (ee > 1).any():
            raise ValidationError("end-effector must stay inside the unit workspace")
        objects = {k: np.asarray(v, dtype=np.float64) for k, v in self.objects.items()}
        for name, pos in objects.items():
            if pos.shape != (3,) or (pos < 0).any() or (pos > 1).any():
                raise ValidationError(f"object {name!r} left the workspace")
        if not 0.0 <= self.gripper <= 1.0:
            raise ValidationError("gripper openness out of [0, 1]")
        if self.drawer_openness is not None and not 0.0 <= self.drawer_openness <= 1.0:
            raise ValidationError("drawer openness out of [0, 1]")
        object.__setattr__(self, "ee", ee)
        object.__setattr__(self, "objects", objects)


@dataclass(frozen=True)
class ErrorSpec:
    """One corruption pattern applied to a fraction of the dataset.

    For action-noise the magnitude scales per-step noise in units of the max
    delta; for the other kinds it is a workspace displacement.
    """

    kind: str
    magnitude: float = 0.3
    fraction: float = 0.25
    subtask: int | None = None

    def __post_init__(self):
        if self.kind not in ERROR_KINDS:
            raise ValidationError(f"unknown error kind {self.kind!r}")
        if self.magnitude <= 0:
            raise ValidationError("error magnitude must be positive")
        if not 0.0 < self.fraction < 0.5:
            raise ValidationError(
                "error fraction must be in (0, 0.5): good demos must outnumber bad"
            )


def step(w: WorldState, action: np.ndarray) -> WorldState:
    """Kinematic update. Grasping triggers on a close command near a grasp
    point; releasing on an open command; pushing near the handle slides the
    drawer. Invalid action values are clamped, never rejected."""
    action = np.nan_to_num(
        np.asarray(action, dtype=np.float64), nan=0.0, posinf=0.0, neginf=0.0
    )
    delta = np.clip(action[:3], -MAX_DELTA, MAX_DELTA)
    new_ee = np.clip(w.ee + delta, 0.0, 1.0)
    grip_cmd = action[6] if len(action) > 6 else 0.0

    gripper = w.gripper
    held = w.held
    held_offset = w.held_offset
    objects = dict(w.objects)

    if grip_cmd < -0.5 and gripper > 0.5:
        gripper = 0.0
        best = None
        for name in sorted(objects):
            for off in _GRASP_OFFSETS.get(name, ((0.0, 0.0, 0.0),)):
                off = np.asarray(off)
                dist = float(np.linalg.norm(new_ee - (objects[name] + off)))
                if dist <= GRASP_RADIUS and (best is None or dist < best[0]):
                    best = (dist, name, off)
        if best is not None:
            held = best[1]
            held_offset = best[2]
    elif grip_cmd > 0.5 and gripper < 0.5:
        gripper = 1.0
        held = None
        held_offset = None

    if held is not None:
        objects[held] = np.clip(new_ee - held_offset, 0.0, 1.0)

    drawer = w.drawer_openness
    if drawer is not None:
        handle = handle_position(drawer)
        if float(np.linalg.norm(w.ee - handle)) <= HANDLE_CONTACT:
            drawer = float(np.clip(drawer - (new_ee[1] - w.ee[1]) / HANDLE_TRAVEL, 0.0, 1.0))

    return WorldState(
        ee=new_ee,
        gripper=gripper,
        objects=objects,
        drawer_openness=drawer,
        held=held,
        held_offset=held_offset,
    )


def _object_name(scenario: str) -> str:
    return "pot" if scenario == "multimodal2" else "item"


def state_dim(scenario: str) -> int:
    return 16 if scenario == "drawer3" else 15


def k_subtasks(scenario: str) -> int:
    return 3 if scenario == "drawer3" else 2


def state_vector(scenario: str, w: WorldState) -> np.ndarray:
    """Observation fed to policies. The last two entries are the reserved
    gripper-openness and end-effector-height channels."""
    obj = w.objects[_object_name(scenario)]
    held = 1.0 if w.held is not None else 0.0
    if scenario == "drawer3":
        handle = handle_position(w.drawer_openness)
        core = np.concatenate(
            [w.ee, obj, w.ee - obj, w.ee - handle, [w.drawer_openness], [held]]
        )
    else:
        serving = np.array([SERVING_CENTER[0], SERVING_CENTER[1], TABLE_Z])
        core = np.concatenate([w.ee, obj, w.ee - obj, obj - serving, [held]])
    return np.concatenate([core, [w.gripper], [w.ee[2]]])


def initial_world(scenario: str, rng: np.random.Generator) -> WorldState:
    ee = np.array([0.50, 0.50, START_Z]) + rng.normal(scale=0.01, size=3) * [1.0, 1.0, 0.3]
    if scenario == "drawer3":
        obj = np.array([0.30, 0.30, TABLE_Z])
    elif scenario == "twostep":
        obj = np.array([0.30, 0.35, TABLE_Z])
    else:
        obj = np.array([0.40, 0.35, TABLE_Z])
    obj = obj + np.concatenate([rng.normal(scale=0.02, size=2), [0.0]])
    return WorldState(
        ee=np.clip(ee, 0.0, 1.0),
        gripper=1.0,
        objects={_object_name(scenario): np.clip(obj, 0.0, 1.0)},
        drawer_openness=1.0 if scenario == "drawer3" else None,
    )


def _servo(ee: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Full-speed move toward a waypoint, slowing on arrival."""
    diff = target - ee
    dist = float(np.linalg.norm(diff))
    if dist < 1e-9:
        return np.zeros(3)
    return diff * min(1.0, MAX_DELTA / dist)


def _act(move: np.ndarray, grip: float) -> np.ndarray:
    return np.concatenate([move, np.zeros(3), [grip]])


@dataclass
class _Episode:
    """Per-demonstration constants: jittered waypoints and error assignment."""

    scenario: str
    grasp_offset: np.ndarray
    approach_side: np.ndarray
    drop_xy: np.ndarray
    place_z: float
    waypoint_jitter: np.ndarray
    error_kind: str | None = None
    error_magnitude: float = 0.0
    error_subtask: int | None = None
    wander_dir: np.ndarray | None = None
    detour_point: np.ndarray | None = None
    mode: str | None = None


def _sample_episode(
    scenario: str,
    rng: np.random.Generator,
    error: ErrorSpec | None,
    mode: str | None,
    error_subtask: int | None,
) -> _Episode:
    if scenario == "multimodal2":
        mode = mode or "left"
        offs = _GRASP_OFFSETS["pot"]
        grasp_offset = np.asarray(offs[0] if mode == "left" else offs[1])
        approach_side = np.array([-0.10 if mode == "left" else 0.10, -0.08, 0.0])
    else:
        grasp_offset = np.zeros(3)
        approach_side = np.zeros(3)
    if scenario == "drawer3":
        drop_base, place_z = DRAWER_CENTER, DRAWER_PLACE_Z
    else:
        drop_base, place_z = SERVING_CENTER, SERVING_PLACE_Z
    drop_xy = drop_base + rng.normal(scale=0.008, size=2)
    ep = _Episode(
        scenario=scenario,
        grasp_offset=grasp_offset,
        approach_side=approach_side,
        drop_xy=drop_xy,
        place_z=place_z,
        waypoint_jitter=rng.normal(scale=0.01, size=2),
        mode=mode,
    )
    if error is not None:
        ep.error_kind = error.kind
        ep.error_magnitude = error.magnitude
        ep.error_subtask = error_subtask
        angle = rng.uniform(0.0, 2.0 * np.pi)
        direction = np.array([np.cos(angle), np.sin(angle)])
        if error.kind == "wrong-goal":
            ep.drop_xy = np.clip(drop_base + direction * error.magnitude, 0.08, 0.92)
        elif error.kind == "wrong-path":
            midpoint = 0.5 * (np.array([0.5, 0.5]) + drop_base)
            ep.detour_point = np.clip(midpoint + direction * error.magnitude, 0.08, 0.92)
        elif error.kind == "corrupt-subtask":
            ep.wander_dir = direction
    return ep


class _Script:
    """Stateful demonstrator: a phase machine over the world state.

    Phase transitions are recorded, so ground-truth subtask boundaries come
    from the script's own structure, independent of the signal-crossing
    heuristic used downstream. A corrupt-subtask episode detours to a
    displaced point at the start of the target subtask, jiggles there, then
    servos back and resumes the nominal script.
    """

    _SUBTASK_ENTRY = {"pick_approach": 0, "transport": 1, "close_approach": 2}

    def __init__(self, ep: _Episode, rng: np.random.Generator):
        self.ep = ep
        self.rng = rng
        self.phase = "_init"
        self.t = 0
        self.boundaries: list[int] = []
        self.deviate_window: tuple[int, int] | None = None
        self.recover_window: tuple[int, int] | None = None
        self.settle_left = 4
        self.dwell_left = 0
        self.wander_anchor: np.ndarray | None = None
        self.wander_target: np.ndarray | None = None
        self.wander_started_at = 0
        self.recover_started_at = 0
        self.resume_phase = ""
        self.detour_pending = ep.detour_point is not None
        self.done = False

    def _enter(self, phase: str, world: WorldState) -> None:
        j = self._SUBTASK_ENTRY.get(phase)
        if j is not None and j > 0 and len(self.boundaries) < j:
            self.boundaries.append(self.t)
        if (
            self.ep.error_kind == "corrupt-subtask"
            and j is not None
            and j == self.ep.error_subtask
            and self.wander_anchor is None
        ):
            self.resume_phase = phase
            self.wander_anchor = world.ee.copy()
            target_xy = np.clip(
                world.ee[:2] + self.ep.wander_dir * self.ep.error_magnitude, 0.05, 0.95
            )
            self.wander_target = np.concatenate([target_xy, [world.ee[2]]])
            self.wander_started_at = self.t
            self.dwell_left = 6
            phase = "wander_out"
        self.phase = phase

    def _phase_grip(self) -> float:
        if self.phase in ("pick_approach", "pick_descend"):
            return 1.0
        if self.phase == "grasp":
            return -1.0
        if self.phase in ("lift", "transport", "place_descend"):
            return -1.0
        if self.phase == "release":
            return 1.0
        if self.phase.startswith("wander"):
            return {"pick_approach": 1.0, "transport": -1.0, "close_approach": 0.0}[
                self.resume_phase
            ]
        return 0.0

    def _emit(self, move: np.ndarray) -> np.ndarray:
        grip = self._phase_grip()
        self.t += 1
        return _act(move, grip)

    def act(self, world: WorldState) -> np.ndarray:
        ep = self.ep
        ee = world.ee
        obj = world.objects[_object_name(ep.scenario)]
        grasp_point = obj + ep.grasp_offset

        if self.phase == "_init":
            self._enter("pick_approach", world)

        if self.phase == "wander_out":
            if float(np.linalg.norm(ee[:2] - self.wander_target[:2])) < 0.02:
                self.phase = "wander_dwell"
            else:
                return self._emit(_servo(ee, self.wander_target))
        if self.phase == "wander_dwell":
            if self.dwell_left > 0:
                self.dwell_left -= 1
                jiggle = np.concatenate([self.rng.uniform(-0.04, 0.04, size=2), [0.0]])
                return self._emit(jiggle)
            self.recover_started_at = self.t
            self.phase = "wander_back"
        if self.phase == "wander_back":
            if float(np.linalg.norm(ee - self.wander_anchor)) < 0.015:
                self.deviate_window = (self.wander_started_at, self.recover_started_at)
                self.recover_window = (self.recover_started_at, self.t)
                self.phase = self.resume_phase
            else:
                return self._emit(_servo(ee, self.wander_anchor))

        if self.phase == "pick_approach":
            dist_xy = float(np.linalg.norm(ee[:2] - grasp_point[:2]))
            if dist_xy > ALIGN_TOL:
                target_xy = grasp_point[:2]
                if dist_xy > 0.14:
                    target_xy = target_xy + ep.approach_side[:2] + ep.waypoint_jitter
                return self._emit(_servo(ee, np.concatenate([target_xy, [START_Z]])))
            self._enter("pick_descend", world)
        if self.phase == "pick_descend":
            if ee[2] > grasp_point[2] + 0.006:
                return self._emit(_servo(ee, np.concatenate([ee[:2], [grasp_point[2]]])))
            self._enter("grasp", world)
        if self.phase == "grasp":
            if world.held is None:
                return self._emit(np.zeros(3))
            self._enter("lift", world)
        if self.phase == "lift":
            if ee[2] < LIFT_Z:
                return self._emit(np.array([0.0, 0.0, MAX_DELTA]))
            self._enter("transport", world)
        if self.phase == "transport":
            if self.detour_pending:
                if float(np.linalg.norm(ee[:2] - ep.detour_point)) > 0.02:
                    return self._emit(_servo(ee, np.concatenate([ep.detour_point, [LIFT_Z]])))
                self.detour_pending = False
            if float(np.linalg.norm(ee[:2] - ep.drop_xy)) > ALIGN_TOL:
                return self._emit(_servo(ee, np.concatenate([ep.drop_xy, [LIFT_Z]])))
            self._enter("place_descend", world)
        if self.phase == "place_descend":
            if ee[2] > ep.place_z + 0.006:
                return self._emit(_servo(ee, np.concatenate([ee[:2], [ep.place_z]])))
            self._enter("release", world)
        if self.phase == "release":
            if world.held is not None:
                return self._emit(np.zeros(3))
            if ep.scenario == "drawer3":
                self._enter("close_approach", world)
            else:
                self._enter("settle", world)
        if self.phase == "close_approach":
            handle = handle_position(world.drawer_openness)
            station = handle + np.array([0.0, -0.05, 0.0])
            if float(np.linalg.norm(ee - station)) > 0.015:
                return self._emit(_servo(ee, station))
            self._enter("close_push", world)
        if self.phase == "close_push":
            if world.drawer_openness > CLOSE_DONE:
                return self._emit(np.array([0.0, 0.04, 0.0]))
            self._enter("settle", world)
        if self.settle_left > 0:
            self.settle_left -= 1
            return self._emit(np.zeros(3))
        self.done = True
        return self._emit(np.zeros(3))


@dataclass(frozen=True)
class TrajectoryInfo:
    """Generator-side ground truth for one trajectory."""

    error_kind: str | None
    boundaries: tuple[int, ...]
    mode: str | None = None
    deviate_window: tuple[int, int] | None = None
    recover_window: tuple[int, int] | None = None


@dataclass(frozen=True)
class RolloutEvents:
    grasped_at: int | None = None
    placed_at: int | None = None
    closed_at: int | None = None
    flagged: bool = False


def _track_events(
    scenario: str, prev: RolloutEvents, world: WorldState, t: int
) -> RolloutEvents:
    grasped, placed, closed = prev.grasped_at, prev.placed_at, prev.closed_at
    obj = world.objects[_object_name(scenario)]
    if grasped is None and world.held is not None:
        grasped = t
    if (
        placed is None
        and grasped is not None
        and world.held is None
        and _in_target_region(scenario, obj)
    ):
        placed = t
    if scenario == "drawer3" and closed is None and world.drawer_openness <= 0.1:
        closed = t
    return RolloutEvents(grasped, placed, closed, prev.flagged)


def _in_target_region(scenario: str, obj: np.ndarray) -> bool:
    if scenario == "drawer3":
        return float(np.linalg.norm(obj[:2] - DRAWER_CENTER)) <= DRAWER_RADIUS
    return float(np.linalg.norm(obj[:2] - SERVING_CENTER)) <= SERVING_RADIUS


def _success_flags(scenario: str, events: RolloutEvents, world: WorldState) -> list[bool]:
    k = k_subtasks(scenario)
    if events.flagged:
        return [False] * (k + 1)
    obj = world.objects[_object_name(scenario)]
    sub1 = events.grasped_at is not None
    terminal_placed = world.held is None and _in_target_region(scenario, obj)
    sub2 = events.placed_at is not None and terminal_placed
    flags = [sub1, sub2]
    ordered = sub1 and sub2 and events.grasped_at < events.placed_at
    if scenario == "drawer3":
        sub3 = events.closed_at is not None and world.drawer_openness <= 0.1
        flags.append(sub3)
        ordered = ordered and sub3 and events.placed_at < events.closed_at
    flags.append(bool(ordered))
    return flags


_EPISODE_CAP = 400


def _roll_script(
    scenario: str, ep: _Episode, rng: np.random.Generator, noise_scale: float
) -> tuple[np.ndarray, np.ndarray, _Script, WorldState, RolloutEvents]:
    world = initial_world(scenario, rng)
    script = _Script(ep, rng)
    states, actions = [], []
    events = RolloutEvents()
    smooth = np.zeros(3)
    for _ in range(_EPISODE_CAP):
        svec = state_vector(scenario, world)
        action = script.act(world)
        smooth = 0.8 * smooth + rng.normal(scale=noise_scale, size=3)
        action = action.copy()
        action[:3] += smooth
        if ep.error_kind == "action-noise":
            action[:3] += rng.normal(scale=ep.error_magnitude * MAX_DELTA, size=3)
        states.append(svec)
        actions.append(action)
        world = step(world, action)
        events = _track_events(scenario, events, world, len(actions) - 1)
        if script.done:
            break
    return np.array(states), np.array(actions), script, world, events


def generate_dataset(
    scenario: str,
    n_good: int,
    n_bad: int,
    errors: list[ErrorSpec] | None = None,
    noise_scale: float = 0.004,
    seed: int = 0,
) -> tuple[Dataset, dict[str, TrajectoryInfo]]:
    """Scripted demonstrations with labeled error injection.

    Each error spec corrupts round(fraction * (n_good + n_bad)) trajectories
    and the per-spec counts must add up to n_bad. With no specs given and
    n_bad > 0, a single wrong-goal spec is assumed. Good and bad episodes are
    deterministically shuffled; every trajectory carries truth labels, and
    the returned info maps ids to ground-truth boundaries, modes, and
    deviate/recover windows.
    """
    if scenario not in SCENARIOS:
        raise ValidationError(f"unknown scenario {scenario!r}")
    if n_good < 1:
        raise ValidationError("need at least one good demonstration")
    if n_good <= n_bad:
        raise ValidationError(
            f"good demonstrations must outnumber bad ones (got {n_good} good, {n_bad} bad)"
        )
    total = n_good + n_bad
    if not errors:
        errors = (
            [ErrorSpec("wrong-goal", magnitude=0.3, fraction=n_bad / total)]
            if n_bad
            else []
        )
    counts = [round(e.fraction * total) for e in errors]
    if sum(counts) != n_bad:
        raise ValidationError(
            f"error fractions allocate {sum(counts)} trajectories but n_bad={n_bad}"
        )
    assignments: list[ErrorSpec | None] = [None] * n_good
    for e, c in zip(errors, counts):
        assignments.extend([e] * c)
    order = np.random.default_rng([seed, 0xD5]).permutation(total)
    k = k_subtasks(scenario)

    trajectories = []
    info: dict[str, TrajectoryInfo] = {}
    n_modes_seen = 0
    n_corrupt_seen = 0
    for position, src in enumerate(order):
        spec = assignments[src]
        rng = np.random.default_rng([seed, 1 + int(src)])
        mode = None
        if scenario == "multimodal2":
            if spec is None:
                mode = "left" if n_modes_seen % 2 == 0 else "right"
                n_modes_seen += 1
            else:
                mode = "left" if rng.uniform() < 0.5 else "right"
        error_subtask = None
        if spec is not None and spec.kind == "corrupt-subtask":
            error_subtask = spec.subtask if spec.subtask is not None else n_corrupt_seen % k
            n_corrupt_seen += 1
        ep = _sample_episode(scenario, rng, spec, mode, error_subtask)
        states, actions, script, _, _ = _roll_script(scenario, ep, rng, noise_scale)

        tid = f"traj{position:03d}"
        if spec is None:
            truth = TrajectoryTruth(good=True)
        elif spec.kind == "corrupt-subtask":
            truth = TrajectoryTruth(good=False, bad_subtasks=(error_subtask,))
        elif spec.kind == "action-noise":
            truth = TrajectoryTruth(good=False, bad_subtasks=tuple(range(k)))
        else:
            # wrong-goal and wrong-path corrupt the transport/placement subtask
            truth = TrajectoryTruth(good=False, bad_subtasks=(1,))
        trajectories.append(Trajectory(id=tid, states=states, actions=actions, truth=truth))
        info[tid] = TrajectoryInfo(
            error_kind=None if spec is None else spec.kind,
            boundaries=tuple(script.boundaries),
            mode=mode,
            deviate_window=script.deviate_window,
            recover_window=script.recover_window,
        )
    return Dataset(tuple(trajectories)), info


def save_truth_sidecar(dataset: Dataset, info: dict[str, TrajectoryInfo], path) -> None:
    """CSV sidecar with labels and true boundaries; lists are ;-joined."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("trajectory_id,truth_good,boundaries,bad_subtasks\n")
        for t in dataset:
            bounds = ";".join(str(b) for b in info[t.id].boundaries)
            bad = ";".join(str(j) for j in (t.truth.bad_subtasks if t.truth else ()))
            good = "true" if (t.truth and t.truth.good) else "false"
            fh.write(f"{t.id},{good},{bounds},{bad}\n")


def load_truth_sidecar(path) -> dict[str, dict]:
    import csv

    from .errors import ParseError

    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["trajectory_id", "truth_good", "boundaries", "bad_subtasks"]:
            raise ParseError(f"unexpected truth header: {header}")
        for row in reader:
            if not row:
                continue
            out[row[0]] = {
                "good": row[1] == "true",
                "boundaries": tuple(int(x) for x in row[2].split(";") if x),
                "bad_subtasks": tuple(int(x) for x in row[3].split(";") if x),
            }
    return out


def scripted_policy(scenario: str):
    """Memoryless expert acting on the observation vector (for evaluation)."""

    def policy(svec: np.ndarray) -> np.ndarray:
        ee = svec[0:3]
        obj = svec[3:6]
        held = svec[-3] > 0.5
        if scenario == "drawer3":
            drawer_o = svec[12]
            drop_xy, place_z = DRAWER_CENTER, DRAWER_PLACE_Z
        else:
            drawer_o = None
            drop_xy, place_z = SERVING_CENTER, SERVING_PLACE_Z
        if held:
            if float(np.linalg.norm(ee[:2] - drop_xy)) > ALIGN_TOL:
                if ee[2] < LIFT_Z:
                    return _act(np.array([0.0, 0.0, MAX_DELTA]), -1.0)
                return _act(_servo(ee, np.concatenate([drop_xy, [LIFT_Z]])), -1.0)
            if ee[2] > place_z + 0.006:
                return _act(_servo(ee, np.concatenate([ee[:2], [place_z]])), -1.0)
            return _act(np.zeros(3), 1.0)
        if not _in_target_region(scenario, obj):
            gp = obj
            if scenario == "multimodal2":
                gp = obj + np.asarray(_GRASP_OFFSETS["pot"][0])
            if float(np.linalg.norm(ee[:2] - gp[:2])) > ALIGN_TOL:
                return _act(_servo(ee, np.concatenate([gp[:2], [START_Z]])), 1.0)
            if ee[2] > gp[2] + 0.006:
                return _act(_servo(ee, np.concatenate([ee[:2], [gp[2]]])), 1.0)
            return _act(np.zeros(3), -1.0)
        if scenario == "drawer3" and drawer_o > CLOSE_DONE:
            handle = handle_position(drawer_o)
            station = handle + np.array([0.0, -0.05, 0.0])
            if float(np.linalg.norm(ee - station)) > 0.015:
                return _act(_servo(ee, station), 0.0)
            return _act(np.array([0.0, 0.04, 0.0]), 0.0)
        return _act(np.zeros(3), 0.0)

    return policy


@dataclass(frozen=True)
class EvalResult:
    scenario: str
    n_rollouts: int
    subtask_rates: tuple[float, ...]
    full_rate: float
    flagged: int


def evaluate_policy(
    policy, scenario: str, n_rollouts: int, horizon: int = 140, seed: int = 0
) -> EvalResult:
    """Roll out a policy from seeded initial states and report success rates.

    A non-finite policy action fails (and flags) the whole rollout.
    """
    if scenario not in SCENARIOS:
        raise ValidationError(f"unknown scenario {scenario!r}")
    if n_rollouts < 1:
        raise ValidationError("n_rollouts must be >= 1")
    k = k_subtasks(scenario)
    sub_hits = np.zeros(k)
    full_hits = 0
    flagged = 0
    for ridx in range(n_rollouts):
        rng = np.random.default_rng([seed, 0xE7A1, ridx])
        world = initial_world(scenario, rng)
        events = RolloutEvents()
        for t in range(horizon):
            action = np.asarray(policy(state_vector(scenario, world)), dtype=np.float64)
            if not np.isfinite(action).all():
                events = RolloutEvents(
                    events.grasped_at, events.placed_at, events.closed_at, flagged=True
                )
                flagged += 1
                break
            world = step(world, action)
            events = _track_events(scenario, events, world, t)
        flags = _success_flags(scenario, events, world)
        sub_hits += np.array(flags[:k], dtype=float)
        full_hits += int(flags[-1])
    return EvalResult(
        scenario=scenario,
        n_rollouts=n_rollouts,
        subtask_rates=tuple(float(r) for r in sub_hits / n_rollouts),
        full_rate=full_hits / n_rollouts,
        flagged=flagged,
    )
