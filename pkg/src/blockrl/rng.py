"""Seeded random streams.

One run seed fans out into independently-seeded named streams (env, model,
agent, ...) so toggling one consumer never perturbs the draws of another.
Streams are checkpointable via their bit-generator state.
"""

from __future__ import annotations

import json
import zlib

import numpy as np


class RngStreams:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            # stable per-name entropy; independent of creation order
            key = zlib.crc32(name.encode("utf-8"))
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(key,))
            self._streams[name] = np.random.Generator(np.random.PCG64(ss))
        return self._streams[name]

    def state_blobs(self) -> dict[str, bytes]:
        return {
            name: json.dumps(gen.bit_generator.state, sort_keys=True).encode()
            for name, gen in self._streams.items()
        }

    def load_state_blobs(self, blobs: dict[str, bytes]):
        for name, blob in blobs.items():
            self.get(name).bit_generator.state = json.loads(blob.decode())
