"""Two-stage pre-shape simulation on a free-point hand model.

The arm stage translates the whole hand rigidly until the hand frame reaches
its grasp point; the hand stage then moves each finger tip toward its own
point, with tips kept inside a reach sphere around the hand frame by
projected descent. Both stages are exact gradient descent on quadratic
potentials (sum of squared distances to the engaged targets), so behavior
is deterministic and closed-form checkable.

Kinematics are deliberately abstract — three points and a reach radius —
because the pipeline's contribution is *where* the effectors go, not the
joint chain that takes them there.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .grasp import EFFECTORS, HAND_FRAME, INDEX_TIP, THUMB_TIP

REACH_RADIUS = 0.12
DEFAULT_GAIN = 0.5
DEFAULT_EPSILON = 1e-3    # metres
DEFAULT_MAX_ITERATIONS = 500
_STALL = 1e-13

ARM_STAGE = "arm"
HAND_STAGE = "hand"

CONVERGED = "converged"
CONSTRAINED = "constrained"
MAX_ITERATIONS = "max-iterations"


def _vec(p, what: str) -> np.ndarray:
    v = np.asarray(p, dtype=np.float64).reshape(-1)
    if v.shape != (3,):
        raise ConfigurationError(f"{what} must be a 3-vector, got shape {v.shape}")
    if not np.isfinite(v).all():
        raise ConfigurationError(f"{what} must be finite, got {v}")
    return v


@dataclass
class KinematicState:
    """Hand frame and finger tip positions (metres, camera frame)."""

    hand: np.ndarray
    thumb: np.ndarray
    index: np.ndarray
    reach: float = REACH_RADIUS
    engaged: tuple[str, ...] = EFFECTORS

    def __post_init__(self):
        self.hand = _vec(self.hand, "hand")
        self.thumb = _vec(self.thumb, "thumb")
        self.index = _vec(self.index, "index")
        if self.reach <= 0:
            raise ConfigurationError(f"reach must be positive, got {self.reach}")
        for name, tip in ((THUMB_TIP, self.thumb), (INDEX_TIP, self.index)):
            d = float(np.linalg.norm(tip - self.hand))
            if d > self.reach + 1e-9:
                raise ConfigurationError(
                    f"{name} is {d:.4f} m from the hand frame, "
                    f"outside reach {self.reach} m")

    def position(self, effector: str) -> np.ndarray:
        try:
            return {HAND_FRAME: self.hand, THUMB_TIP: self.thumb,
                    INDEX_TIP: self.index}[effector]
        except KeyError:
            raise ConfigurationError(f"unknown effector {effector!r}")

    def copy(self) -> "KinematicState":
        return KinematicState(self.hand.copy(), self.thumb.copy(),
                              self.index.copy(), self.reach, self.engaged)


def home_state(reach: float = REACH_RADIUS) -> KinematicState:
    """A neutral starting posture in front of the camera."""
    return KinematicState(hand=(0.0, 0.0, 0.30),
                          thumb=(0.03, 0.0, 0.38),
                          index=(-0.03, 0.0, 0.38),
                          reach=reach)


@dataclass
class PotentialController:
    """Descent configuration for one stage."""

    gain: float = DEFAULT_GAIN
    epsilon: float = DEFAULT_EPSILON
    max_iterations: int = DEFAULT_MAX_ITERATIONS

    def __post_init__(self):
        if self.gain <= 0:
            raise ConfigurationError(f"gain must be positive, got {self.gain}")
        if self.epsilon <= 0:
            raise ConfigurationError(
                f"epsilon must be positive, got {self.epsilon}")
        if self.max_iterations < 1:
            raise ConfigurationError(
                f"max_iterations must be >= 1, got {self.max_iterations}")


@dataclass
class LogEntry:
    stage: str
    iteration: int
    phi: float
    hand: np.ndarray
    thumb: np.ndarray
    index: np.ndarray


@dataclass
class ControllerLog:
    """Per-iteration potential and state snapshots, one stage or combined."""

    entries: list[LogEntry] = field(default_factory=list)
    status: str = CONVERGED

    def record(self, stage: str, iteration: int, phi: float,
               state: KinematicState) -> None:
        if not np.isfinite(phi):
            raise ConfigurationError(f"non-finite potential {phi}")
        self.entries.append(LogEntry(stage, iteration, float(phi),
                                     state.hand.copy(), state.thumb.copy(),
                                     state.index.copy()))

    @property
    def phis(self) -> np.ndarray:
        return np.array([e.phi for e in self.entries])

    def stage_entries(self, stage: str) -> list[LogEntry]:
        return [e for e in self.entries if e.stage == stage]

    def save_csv(self, path) -> None:
        lines = ["stage,iteration,phi,hand_x,hand_y,hand_z,"
                 "thumb_x,thumb_y,thumb_z,index_x,index_y,index_z"]
        for e in self.entries:
            cells = [e.stage, str(e.iteration), "%.9g" % e.phi]
            for p in (e.hand, e.thumb, e.index):
                cells += ["%.9g" % v for v in p]
            lines.append(",".join(cells))
        Path(path).write_text("\n".join(lines) + "\n")


def _project_reach(tip: np.ndarray, hand: np.ndarray,
                   reach: float) -> np.ndarray:
    offset = tip - hand
    norm = float(np.linalg.norm(offset))
    if norm <= reach:
        return tip
    return hand + offset * (reach / norm)


def run_arm_controller(state: KinematicState, hand_target,
                       cfg: PotentialController | None = None
                       ) -> tuple[KinematicState, ControllerLog]:
    """Drive the hand frame to its target; the whole hand moves rigidly."""
    cfg = cfg or PotentialController()
    target = _vec(hand_target, "hand target")
    state = state.copy()
    state.engaged = (HAND_FRAME,)
    log = ControllerLog()
    phi = float(((state.hand - target) ** 2).sum())
    log.record(ARM_STAGE, 0, phi, state)
    it = 0
    while phi >= cfg.epsilon ** 2 and it < cfg.max_iterations:
        step = -2.0 * cfg.gain * (state.hand - target)
        state.hand = state.hand + step
        state.thumb = state.thumb + step
        state.index = state.index + step
        phi = float(((state.hand - target) ** 2).sum())
        it += 1
        log.record(ARM_STAGE, it, phi, state)
    log.status = CONVERGED if phi < cfg.epsilon ** 2 else MAX_ITERATIONS
    return state, log


def run_hand_controller(state: KinematicState, thumb_target, index_target,
                        cfg: PotentialController | None = None
                        ) -> tuple[KinematicState, ControllerLog]:
    """Drive both tips to their targets; the hand frame holds still.

    Each tip descends its own squared distance and is then projected back
    onto the reach sphere, so an out-of-reach target ends with the tip on
    the sphere along the target direction (status "constrained").
    """
    cfg = cfg or PotentialController()
    t_thumb = _vec(thumb_target, "thumb target")
    t_index = _vec(index_target, "index target")
    state = state.copy()
    state.engaged = (THUMB_TIP, INDEX_TIP)
    log = ControllerLog()

    def potential():
        return float(((state.thumb - t_thumb) ** 2).sum()
                     + ((state.index - t_index) ** 2).sum())

    done = 2.0 * cfg.epsilon ** 2
    phi = potential()
    log.record(HAND_STAGE, 0, phi, state)
    it = 0
    while phi >= done and it < cfg.max_iterations:
        new_thumb = _project_reach(
            state.thumb - 2.0 * cfg.gain * (state.thumb - t_thumb),
            state.hand, state.reach)
        new_index = _project_reach(
            state.index - 2.0 * cfg.gain * (state.index - t_index),
            state.hand, state.reach)
        moved = (float(np.linalg.norm(new_thumb - state.thumb))
                 + float(np.linalg.norm(new_index - state.index)))
        state.thumb, state.index = new_thumb, new_index
        phi = potential()
        it += 1
        log.record(HAND_STAGE, it, phi, state)
        if moved < _STALL:        # pinned to the sphere; no further progress
            break
    if phi < done:
        log.status = CONVERGED
    elif it < cfg.max_iterations:
        log.status = CONSTRAINED
    else:
        log.status = MAX_ITERATIONS
    return state, log


def _target_of(prediction, effector: str) -> np.ndarray:
    entry = prediction[effector]
    return _vec(getattr(entry, "position", entry), f"{effector} target")


def run_preshape(state: KinematicState, prediction,
                 cfg: PotentialController | None = None
                 ) -> tuple[KinematicState, ControllerLog]:
    """Arm stage to the hand-frame point, then hand stage to the tip points.

    `prediction` maps effector names to positions or PredictedGrasp-like
    objects. The hand stage only runs once the arm stage has converged.
    """
    missing = [e for e in EFFECTORS if e not in prediction]
    if missing:
        raise ConfigurationError(f"prediction missing effectors {missing}")
    combined = ControllerLog()
    state, arm_log = run_arm_controller(state, _target_of(prediction,
                                                          HAND_FRAME), cfg)
    combined.entries.extend(arm_log.entries)
    if arm_log.status != CONVERGED:
        combined.status = f"{ARM_STAGE}:{arm_log.status}"
        return state, combined
    state, hand_log = run_hand_controller(
        state, _target_of(prediction, THUMB_TIP),
        _target_of(prediction, INDEX_TIP), cfg)
    combined.entries.extend(hand_log.entries)
    if hand_log.status == CONVERGED:
        combined.status = CONVERGED
    else:
        combined.status = f"{HAND_STAGE}:{hand_log.status}"
    return state, combined
