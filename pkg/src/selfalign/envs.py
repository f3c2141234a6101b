"""Desk-scale analogs of the touch / grasp-lift / push tasks.

A point end effector with yaw moves over a table plane under clipped
delta-pose actions. Contact uses a linear spring on penetration of the
object's contact sphere; the grasp task attaches the object to the end
effector on first contact; the push task lets the object slide on the
table when penetration exceeds a cap. Physics is fully deterministic:
(seed, action sequence) determines the trajectory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from .rewards import extract_features

TASKS = ("touch", "grasp", "push")
ACTION_DIM = 4


@dataclass(frozen=True)
class TaskConfig:
    """Geometry and contact constants for one task. Loaded from configs/*.json."""

    task: str
    horizon: int
    home_pose: tuple[float, ...]
    spawn_lo: tuple[float, ...]
    spawn_hi: tuple[float, ...]
    action_bounds: tuple[float, ...]
    workspace_lo: tuple[float, ...]
    workspace_hi: tuple[float, ...]
    contact_radius: float
    spring_k: float
    collision_speed: float
    object_rest_height: float = 0.025
    goal_pos: tuple[float, ...] | None = None
    max_push_penetration: float = 0.005
    grip_force: float = 2.0
    push_goal_threshold: float = 0.025
    grasp_lift_height: float = 0.05

    @staticmethod
    def from_dict(data: dict) -> "TaskConfig":
        data = dict(data)
        for key in ("home_pose", "spawn_lo", "spawn_hi", "action_bounds",
                    "workspace_lo", "workspace_hi"):
            data[key] = tuple(data[key])
        if data.get("goal_pos") is not None:
            data["goal_pos"] = tuple(data["goal_pos"])
        return TaskConfig(**data)

    @staticmethod
    def from_file(path: str) -> "TaskConfig":
        with open(path) as fh:
            return TaskConfig.from_dict(json.load(fh))

    @staticmethod
    @lru_cache(maxsize=None)
    def from_name(task: str) -> "TaskConfig":
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
        text = resources.files(__package__).joinpath("configs", f"{task}.json").read_text()
        return TaskConfig.from_dict(json.loads(text))


@dataclass
class Observation:
    """One state snapshot: end-effector pose (x, y, z, yaw) plus sensors."""

    ee_pose: np.ndarray
    ee_contact_force: float
    target_object_pos: np.ndarray
    collision_flag: bool
    goal_pos: np.ndarray | None = None

    @property
    def object_height(self) -> float:
        return float(self.target_object_pos[2])

    def to_dict(self) -> dict:
        return {
            "ee_pose": [float(v) for v in self.ee_pose],
            "ee_contact_force": float(self.ee_contact_force),
            "target_object_pos": [float(v) for v in self.target_object_pos],
            "collision_flag": bool(self.collision_flag),
            "goal_pos": None if self.goal_pos is None else [float(v) for v in self.goal_pos],
        }

    @staticmethod
    def from_dict(data: dict) -> "Observation":
        return Observation(
            ee_pose=np.asarray(data["ee_pose"], dtype=float),
            ee_contact_force=float(data["ee_contact_force"]),
            target_object_pos=np.asarray(data["target_object_pos"], dtype=float),
            collision_flag=bool(data["collision_flag"]),
            goal_pos=None if data.get("goal_pos") is None else np.asarray(data["goal_pos"], dtype=float),
        )


@dataclass
class Trajectory:
    """A fixed-horizon episode: T+1 observations, T actions, T+1 feature maps."""

    observations: list[Observation]
    actions: list[np.ndarray]
    features: list[dict]
    episode_id: int | None = None

    @property
    def final_state(self) -> Observation:
        return self.observations[-1]

    @property
    def horizon(self) -> int:
        return len(self.actions)

    def return_under(self, template) -> float:
        """Sum of per-step rewards R(s_1..s_T) under the given template."""
        from .rewards import features_return

        return features_return(template, self.features[1:])

    def feature_matrix(self, feature_order) -> np.ndarray:
        """Steps 1..T as rows, columns in ``feature_order``."""
        return np.array([[row[name] for name in feature_order] for row in self.features[1:]])


class EpisodeDone(RuntimeError):
    """step() called after the horizon was reached."""


class DeskEnv:
    """Single-task environment instance. Not thread-safe; use one per worker."""

    def __init__(self, task: str, config: TaskConfig | None = None):
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
        self.task = task
        self.config = config or TaskConfig.from_name(task)
        self._ee = None
        self._obj = None
        self._grasped = False
        self._grasp_offset = None
        self._steps = 0
        self._done = True
        self._collision = False
        self._force = 0.0

    @property
    def action_bounds(self) -> np.ndarray:
        return np.asarray(self.config.action_bounds, dtype=float)

    def scale_action(self, normalized: np.ndarray) -> np.ndarray:
        """Map a [-1, 1] policy action to a delta-pose command."""
        return np.clip(np.asarray(normalized, dtype=float), -1.0, 1.0) * self.action_bounds

    def reset(self, seed: int) -> Observation:
        rng = np.random.default_rng(seed)
        cfg = self.config
        self._ee = np.asarray(cfg.home_pose, dtype=float).copy()
        self._obj = rng.uniform(np.asarray(cfg.spawn_lo), np.asarray(cfg.spawn_hi))
        self._grasped = False
        self._grasp_offset = None
        self._steps = 0
        self._done = False
        self._collision = False
        self._update_contact(closing=0.0)
        return self._observe()

    def step(self, action: np.ndarray):
        """Apply a clipped delta-pose action; returns (Observation, done)."""
        if self._done:
            raise EpisodeDone(f"episode finished after {self._steps} steps")
        cfg = self.config
        delta = np.clip(np.asarray(action, dtype=float), -self.action_bounds, self.action_bounds)

        d_before = float(np.linalg.norm(self._ee[:3] - self._obj))
        new_pos = np.clip(self._ee[:3] + delta[:3],
                          np.asarray(cfg.workspace_lo), np.asarray(cfg.workspace_hi))
        self._ee = np.concatenate([new_pos, [self._ee[3] + delta[3]]])
        d_after = float(np.linalg.norm(new_pos - self._obj))
        closing = d_before - d_after

        if self.task == "push":
            self._push_object(new_pos)
        elif self.task == "grasp":
            self._carry_object(new_pos)

        self._update_contact(closing)
        self._steps += 1
        self._done = self._steps >= cfg.horizon
        return self._observe(), self._done

    # -- contact models -----------------------------------------------------

    def _penetration(self) -> float:
        dist = float(np.linalg.norm(self._ee[:3] - self._obj))
        return max(0.0, self.config.contact_radius - dist)

    def _push_object(self, ee_pos: np.ndarray):
        """Object slides on the table once penetration exceeds the cap."""
        cfg = self.config
        pen = self._penetration()
        excess = pen - cfg.max_push_penetration
        if excess > 0.0:
            offset = self._obj - ee_pos
            norm = float(np.linalg.norm(offset))
            direction = offset / norm if norm > 1e-12 else np.array([0.0, 1.0, 0.0])
            self._obj = self._obj + excess * direction
            self._obj[2] = cfg.object_rest_height

    def _carry_object(self, ee_pos: np.ndarray):
        """Attach on first contact; afterwards the object rides the gripper."""
        cfg = self.config
        if not self._grasped and self._penetration() > 0.0:
            self._grasped = True
            self._grasp_offset = self._obj - ee_pos
        if self._grasped:
            self._obj = ee_pos + self._grasp_offset
            self._obj[2] = max(self._obj[2], cfg.object_rest_height)

    def _update_contact(self, closing: float):
        cfg = self.config
        if self._grasped:
            self._force = cfg.grip_force
            self._collision = False
            return
        pen = self._penetration()
        self._force = cfg.spring_k * pen
        self._collision = pen > 0.0 and closing > cfg.collision_speed

    def _observe(self) -> Observation:
        goal = None
        if self.config.goal_pos is not None:
            goal = np.asarray(self.config.goal_pos, dtype=float)
        return Observation(
            ee_pose=self._ee.copy(),
            ee_contact_force=self._force,
            target_object_pos=self._obj.copy(),
            collision_flag=self._collision,
            goal_pos=goal,
        )


def is_success(task: str, final: Observation) -> bool:
    """Ground-truth sparse success predicate on a (final) observation."""
    cfg = TaskConfig.from_name(task)
    if task == "touch":
        return final.ee_contact_force > 0.0
    if task == "grasp":
        return final.ee_contact_force > 0.0 and final.object_height > cfg.grasp_lift_height
    if task == "push":
        dist = float(np.linalg.norm(final.target_object_pos - final.goal_pos))
        return dist <= cfg.push_goal_threshold
    raise ValueError(f"unknown task {task!r}")


def progress_metric(task: str, final: Observation) -> float:
    """Scalar task progress at an observation; higher is better.

    touch: contact flag minus distance to the object; grasp: object height;
    push: negative object-to-goal distance.
    """
    feats = extract_features(final, task)
    if task == "touch":
        return (1.0 if final.ee_contact_force > 0.0 else 0.0) - feats["distance_to_target"]
    if task == "grasp":
        return feats["object_height"]
    return -feats["distance_to_goal"]


def final_goal_distance(task: str, final: Observation) -> float:
    """Distance-to-go at an observation: object-to-goal (push) or ee-to-object."""
    feats = extract_features(final, task)
    if task == "push":
        return feats["distance_to_goal"]
    return feats["distance_to_target"]


def obs_to_vec(task: str, obs: Observation) -> np.ndarray:
    """Encode an observation as the policy input vector (scaled to ~O(1))."""
    ee = obs.ee_pose[:3]
    rel_obj = 5.0 * (obs.target_object_pos - ee)
    if task == "touch":
        return np.concatenate([rel_obj, [obs.ee_contact_force / 5.0]])
    if task == "grasp":
        contacted = 1.0 if obs.ee_contact_force > 0.0 else 0.0
        lift = 10.0 * (obs.object_height - 0.025)
        return np.concatenate([rel_obj, [contacted, lift]])
    rel_goal = 5.0 * (obs.goal_pos - obs.target_object_pos)
    return np.concatenate([rel_obj, rel_goal, [obs.ee_contact_force / 5.0]])


def obs_dim(task: str) -> int:
    return {"touch": 4, "grasp": 5, "push": 7}[task]


def rollout(env: DeskEnv, action_fn, seed: int) -> Trajectory:
    """Run one fixed-horizon episode; features are computed once per step."""
    obs = env.reset(seed)
    observations = [obs]
    actions = []
    features = [extract_features(obs, env.task)]
    done = False
    while not done:
        action = action_fn(obs)
        obs, done = env.step(action)
        observations.append(obs)
        actions.append(np.asarray(action, dtype=float))
        features.append(extract_features(obs, env.task))
    return Trajectory(observations=observations, actions=actions, features=features)
