"""Seeded counter-based pseudorandom streams.

Built on numpy's Philox generator: identical seed plus identical call
sequence gives a bit-identical stream, and independent child streams can be
derived arithmetically (no shared state), which is what lets dataset
generation fan out per scene. State round-trips through plain JSON so train
checkpoints can resume bit-exactly.
"""

from __future__ import annotations

import numpy as np

_M64 = (1 << 64) - 1


def splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return (z ^ (z >> 31)) & _M64


def derive_seed(seed: int, *indices: int) -> int:
    """Deterministic child seed from a parent seed and an index path."""
    z = seed & _M64
    for idx in indices:
        z = splitmix64(z ^ splitmix64(idx & _M64))
    return z


class Rng:
    """A deterministic stream of float64 draws with serializable state."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _M64
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def derive(self, *indices: int) -> "Rng":
        """Independent child stream; pure function of (seed, indices)."""
        return Rng(derive_seed(self.seed, *indices))

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(size=shape, dtype=np.float64)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=()) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def shuffle(self, seq: list) -> list:
        order = self._gen.permutation(len(seq))
        return [seq[i] for i in order]

    def state(self) -> dict:
        """JSON-serializable snapshot of the stream position."""
        raw = self._gen.bit_generator.state
        return {
            "seed": self.seed,
            "counter": [int(v) for v in raw["state"]["counter"]],
            "key": [int(v) for v in raw["state"]["key"]],
            "buffer": [int(v) for v in raw["buffer"]],
            "buffer_pos": int(raw["buffer_pos"]),
            "has_uint32": int(raw["has_uint32"]),
            "uinteger": int(raw["uinteger"]),
        }

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        rng = cls(state["seed"])
        rng._gen.bit_generator.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(state["counter"], dtype=np.uint64),
                "key": np.array(state["key"], dtype=np.uint64),
            },
            "buffer": np.array(state["buffer"], dtype=np.uint64),
            "buffer_pos": state["buffer_pos"],
            "has_uint32": state["has_uint32"],
            "uinteger": state["uinteger"],
        }
        return rng
