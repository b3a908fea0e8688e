"""Episode-structured replay memory that serves fixed-length windows.

Transitions are stored per episode; sampling draws contiguous windows of T
steps that never cross an episode boundary, so recurrent state can be
rebuilt from scratch at the window start. Old episodes are evicted
first-in-first-out once the transition budget is exceeded.
"""

from __future__ import annotations

import numpy as np


class ReplayMemory:
    def __init__(self, capacity: int, window: int):
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        if capacity < window:
            raise ValueError(f"capacity {capacity} smaller than window {window}")
        self.capacity = capacity
        self.window = window
        self._episodes: list[dict] = []
        self._current: dict | None = None
        self._total = 0

    FIELDS = ("obs", "action", "reward", "done", "r_prev", "a_prev", "next_obs")

    def begin_episode(self):
        if self._current is not None and len(self._current["reward"]) > 0:
            self._finalize()
        self._current = {f: [] for f in self.FIELDS}

    def add(self, obs, action, reward, done, r_prev, a_prev, next_obs):
        if self._current is None:
            raise RuntimeError("add() before begin_episode()")
        c = self._current
        c["obs"].append(np.asarray(obs, dtype=np.float64))
        c["action"].append(np.asarray(action, dtype=np.float64))
        c["reward"].append(float(reward))
        c["done"].append(float(done))
        c["r_prev"].append(float(r_prev))
        c["a_prev"].append(np.asarray(a_prev, dtype=np.float64))
        c["next_obs"].append(np.asarray(next_obs, dtype=np.float64))
        self._total += 1
        if done:
            self._finalize()
            self._current = None
        self._evict()

    def _finalize(self):
        ep = {f: np.asarray(v, dtype=np.float64) for f, v in self._current.items()}
        if len(ep["reward"]) > 0:
            self._episodes.append(ep)

    def _evict(self):
        while self._total > self.capacity and self._episodes:
            gone = self._episodes.pop(0)
            self._total -= len(gone["reward"])

    def __len__(self):
        return self._total

    def _window_sources(self):
        """(episode-dict, length) pairs including the in-progress episode."""
        out = [(ep, len(ep["reward"])) for ep in self._episodes]
        if self._current is not None:
            n = len(self._current["reward"])
            if n >= self.window:
                out.append((self._current, n))
        return out

    def num_windows(self) -> int:
        return sum(max(0, n - self.window + 1) for _, n in self._window_sources())

    def can_sample(self) -> bool:
        return self.num_windows() > 0

    def sample_windows(self, count: int, rng: np.random.Generator) -> list[dict]:
        """Uniformly sample window start positions (with replacement)."""
        sources = self._window_sources()
        starts = []
        for ep, n in sources:
            for s in range(n - self.window + 1):
                starts.append((ep, s))
        if not starts:
            raise RuntimeError("no complete windows available to sample")
        picks = rng.integers(0, len(starts), size=count)
        out = []
        for p in picks:
            ep, s = starts[p]
            sl = slice(s, s + self.window)
            out.append({f: np.asarray(ep[f][sl], dtype=np.float64)
                        for f in self.FIELDS})
        return out

    # -- checkpoint plumbing ---------------------------------------------------

    def state_tensors(self) -> dict:
        """Canonical array encoding of the buffer (bit-reproducible, unlike
        a generic object serialization)."""
        out = {"replay.n_episodes": np.array([float(len(self._episodes))]),
               "replay.total": np.array([float(self._total)]),
               "replay.has_current": np.array(
                   [1.0 if self._current is not None else 0.0])}
        for i, ep in enumerate(self._episodes):
            for f in self.FIELDS:
                out[f"replay.ep{i:06d}.{f}"] = np.asarray(ep[f],
                                                          dtype=np.float64)
        if self._current is not None:
            for f in self.FIELDS:
                arr = np.asarray(self._current[f], dtype=np.float64)
                if arr.size == 0:
                    arr = arr.reshape(0)
                out[f"replay.current.{f}"] = arr
        return out

    def load_state_tensors(self, tensors: dict):
        n = int(tensors["replay.n_episodes"][0])
        self._total = int(tensors["replay.total"][0])
        self._episodes = [
            {f: np.array(tensors[f"replay.ep{i:06d}.{f}"]) for f in self.FIELDS}
            for i in range(n)
        ]
        if tensors["replay.has_current"][0] > 0:
            self._current = {f: list(tensors[f"replay.current.{f}"])
                             for f in self.FIELDS}
        else:
            self._current = None
