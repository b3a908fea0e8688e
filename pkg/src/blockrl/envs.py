"""Partially observable control environments behind one stepping interface.

All randomness flows through a generator handed in at construction, so a
(seed, action sequence) pair fully determines the trajectory.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


class ProtocolError(RuntimeError):
    """step() after the episode finished."""


class EnvConfigError(ValueError):
    pass


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class Env:
    """Common interface; subclasses set obs_dim / act_dim / act_limit."""

    obs_dim: int
    act_dim: int
    act_limit: float
    max_steps: int

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self._done = True
        self._steps = 0

    def reset(self) -> np.ndarray:
        self._done = False
        self._steps = 0
        return self._reset_state()

    def step(self, action) -> StepResult:
        if self._done:
            raise ProtocolError("step() called on a finished episode; reset first")
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape[0] != self.act_dim:
            raise EnvConfigError(
                f"action dim {action.shape[0]} != expected {self.act_dim}")
        self._steps += 1
        result = self._step(action)
        if self._steps >= self.max_steps:
            result.done = True
        self._done = result.done
        return result

    # serialization of physical state for deterministic resume
    def state_blob(self) -> bytes:
        return json.dumps({"done": self._done, "steps": self._steps,
                           **self._state_dict()}).encode()

    def load_state_blob(self, blob: bytes):
        d = json.loads(blob.decode())
        self._done = d.pop("done")
        self._steps = d.pop("steps")
        self._load_state_dict(d)

    def _state_dict(self) -> dict:
        raise NotImplementedError

    def _load_state_dict(self, d: dict):
        raise NotImplementedError


class MountainHike(Env):
    """Noisy 2-D navigation along a high-reward ridge.

    Observations are the true position plus Gaussian noise; the commanded
    move is norm-clipped and perturbed by transition noise.
    """

    act_dim = 2
    obs_dim = 2
    act_limit = 1.0

    def __init__(self, rng, sigma_error_sq: float = 3.0, c_thres: float = 0.1,
                 max_steps: int = 200, trans_var: float = 0.25):
        super().__init__(rng)
        self.sigma_error = math.sqrt(sigma_error_sq)
        self.c_thres = c_thres
        self.max_steps = max_steps
        self.trans_std = math.sqrt(trans_var)
        self.s = np.zeros(2)

    # ridge path from the start corner, east then north; pluggable stand-in
    # for the published reward surface
    _PATH = np.array([[-8.5, -8.5], [8.5, -8.5], [8.5, 8.5]])

    @classmethod
    def reward_map(cls, x: float, y: float) -> float:
        p = np.array([x, y])
        best = np.inf
        for a, b in zip(cls._PATH[:-1], cls._PATH[1:]):
            ab = b - a
            t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
            best = min(best, np.linalg.norm(p - (a + t * ab)))
        return max(-3.0, -0.1 * best)

    def _reset_state(self):
        self.s = np.array([-8.5, -8.5]) + self.rng.standard_normal(2)
        return self.s + self.sigma_error * self.rng.standard_normal(2)

    def _step(self, action):
        norm = np.linalg.norm(action)
        if norm > self.c_thres:
            a_hat = action * (self.c_thres / norm)
        else:
            a_hat = action
        self.s = self.s + a_hat + self.trans_std * self.rng.standard_normal(2)
        reward = self.reward_map(self.s[0], self.s[1]) - 0.01 * norm
        obs = self.s + self.sigma_error * self.rng.standard_normal(2)
        return StepResult(obs, float(reward), False,
                          info={"state": self.s.copy()})

    def _state_dict(self):
        return {"s": self.s.tolist()}

    def _load_state_dict(self, d):
        self.s = np.array(d["s"])


class PendulumMissing(Env):
    """Swing-up pendulum where each observation dimension is independently
    zeroed with probability p_miss."""

    act_dim = 1
    obs_dim = 3
    act_limit = 2.0

    G = 10.0
    M = 1.0
    LEN = 1.0
    DT = 0.05
    MAX_SPEED = 8.0
    MAX_TORQUE = 2.0

    def __init__(self, rng, p_miss: float = 0.1, max_steps: int = 200):
        super().__init__(rng)
        if not 0.0 <= p_miss <= 1.0:
            raise EnvConfigError(f"p_miss must be in [0, 1], got {p_miss}")
        self.p_miss = p_miss
        self.max_steps = max_steps
        self.theta = 0.0
        self.theta_dot = 0.0

    @staticmethod
    def _wrap(angle: float) -> float:
        return ((angle + math.pi) % (2 * math.pi)) - math.pi

    def _observe(self):
        obs = np.array([math.cos(self.theta), math.sin(self.theta),
                        self.theta_dot])
        if self.p_miss > 0.0:
            obs = obs * (self.rng.random(3) >= self.p_miss)
        return obs

    def _reset_state(self):
        self.theta = self.rng.uniform(-math.pi, math.pi)
        self.theta_dot = self.rng.uniform(-1.0, 1.0)
        return self._observe()

    def _step(self, action):
        u = float(action[0])
        clipped = u < -self.MAX_TORQUE or u > self.MAX_TORQUE
        u = float(np.clip(u, -self.MAX_TORQUE, self.MAX_TORQUE))
        th_bar = self._wrap(self.theta)
        reward = -(th_bar ** 2 + 0.1 * self.theta_dot ** 2 + 0.001 * u ** 2)
        self.theta_dot += (3 * self.G / (2 * self.LEN) * math.sin(self.theta)
                           + 3.0 / (self.M * self.LEN ** 2) * u) * self.DT
        self.theta_dot = float(np.clip(self.theta_dot,
                                       -self.MAX_SPEED, self.MAX_SPEED))
        self.theta += self.theta_dot * self.DT
        return StepResult(self._observe(), float(reward), False,
                          info={"state": np.array([self.theta, self.theta_dot]),
                                "torque_clipped": clipped})

    def _state_dict(self):
        return {"theta": self.theta, "theta_dot": self.theta_dot}

    def _load_state_dict(self, d):
        self.theta = d["theta"]
        self.theta_dot = d["theta_dot"]


class SequentialTarget(Env):
    """Visit three targets in the order 1 -> 2 -> 3.

    The observation carries the polar coordinates of all three targets
    relative to the agent but no visited-history information; remembering
    which targets were already reached is the whole challenge. Rewards
    r1 < r2 < r3 fire at the first, second, and third in-order contact.
    With ``forfeit`` set, touching a target out of order ends all further
    reward for the episode.
    """

    act_dim = 2
    obs_dim = 9
    act_limit = 1.0

    ARENA = 20.0
    CONTACT_RADIUS = 1.0
    SPEED_CAP = 0.5
    REWARDS = (10.0, 30.0, 60.0)

    def __init__(self, rng, R: float = 10.0, max_steps: int = 128,
                 forfeit: bool = False):
        super().__init__(rng)
        if not 0.0 < R <= 15.0:
            raise EnvConfigError(f"R must be in (0, 15], got {R}")
        self.R = R
        self.max_steps = max_steps
        self.forfeit = forfeit
        center = self.ARENA / 2.0
        radius = 0.45 * R
        angles = np.deg2rad([90.0, 210.0, 330.0])
        self.targets = np.stack([center + radius * np.cos(angles),
                                 center + radius * np.sin(angles)], axis=1)
        self.pos = np.full(2, center)
        self.heading = 0.0
        self.next_target = 0
        self.forfeited = False

    def _observe(self):
        out = []
        for t in self.targets:
            delta = t - self.pos
            dist = np.linalg.norm(delta)
            bearing = math.atan2(delta[1], delta[0]) - self.heading
            out.extend([dist, math.sin(bearing), math.cos(bearing)])
        return np.array(out)

    def _reset_state(self):
        self.pos = np.full(2, self.ARENA / 2.0)
        self.heading = self.rng.uniform(-math.pi, math.pi)
        self.next_target = 0
        self.forfeited = False
        return self._observe()

    def _step(self, action):
        norm = np.linalg.norm(action)
        move = action * (self.SPEED_CAP / norm) if norm > self.SPEED_CAP else action
        self.pos = np.clip(self.pos + move, 0.0, self.ARENA)
        if norm > 1e-12:
            self.heading = math.atan2(move[1], move[0])
        reward = 0.0
        done = False
        success = False
        dists = np.linalg.norm(self.targets - self.pos, axis=1)
        touched = np.where(dists <= self.CONTACT_RADIUS)[0]
        if not self.forfeited:
            for idx in touched:
                if idx == self.next_target:
                    reward += self.REWARDS[idx]
                    self.next_target += 1
                elif self.forfeit and idx > self.next_target:
                    self.forfeited = True
                    reward = 0.0
                    break
        if self.next_target == 3:
            done = True
            success = True
        return StepResult(self._observe(), float(reward), done,
                          info={"state": self.pos.copy(), "success": success,
                                "next_target": self.next_target})

    def _state_dict(self):
        return {"pos": self.pos.tolist(), "heading": self.heading,
                "next_target": self.next_target, "forfeited": self.forfeited}

    def _load_state_dict(self, d):
        self.pos = np.array(d["pos"])
        self.heading = d["heading"]
        self.next_target = d["next_target"]
        self.forfeited = d["forfeited"]


ENV_NAMES = ("mountain-hike", "pendulum-missing", "sequential-target")


def make_env(name: str, rng: np.random.Generator, **params) -> Env:
    if name == "mountain-hike":
        allowed = {"sigma_error_sq", "c_thres", "max_steps"}
    elif name == "pendulum-missing":
        allowed = {"p_miss", "max_steps"}
    elif name == "sequential-target":
        allowed = {"R", "max_steps", "forfeit"}
    else:
        raise EnvConfigError(f"unknown environment: {name}")
    unknown = set(params) - allowed
    if unknown:
        raise EnvConfigError(f"invalid parameters for {name}: {sorted(unknown)}")
    cls = {"mountain-hike": MountainHike,
           "pendulum-missing": PendulumMissing,
           "sequential-target": SequentialTarget}[name]
    return cls(rng, **params)
