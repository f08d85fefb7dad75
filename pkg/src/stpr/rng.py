"""Named, splittable random streams.

Every stochastic call site in the package takes an explicit stream. A stream
is identified by (seed, label path); splitting appends labels, and the
underlying generator is derived by hashing the full path, so any stream can
be reconstructed independently of draw order elsewhere in the program.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Unit separator keeps ("a", "b") and ("a/b",) distinct in the hashed path.
_SEP = "\x1f"


class RngStream:
    def __init__(self, seed: int, path: tuple[str, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        self._gen: np.random.Generator | None = None

    def split(self, *labels: object) -> "RngStream":
        """Derive an independent child stream named by `labels`."""
        return RngStream(self.seed, self.path + tuple(str(x) for x in labels))

    def gen(self) -> np.random.Generator:
        """The stream's generator. Created once; repeated calls advance state."""
        if self._gen is None:
            raw = _SEP.join((str(self.seed),) + self.path).encode()
            entropy = int.from_bytes(hashlib.sha256(raw).digest()[:16], "little")
            self._gen = np.random.default_rng(np.random.SeedSequence(entropy))
        return self._gen

    def normal(self, shape: tuple[int, ...], std: float = 1.0) -> np.ndarray:
        return std * self.gen().standard_normal(shape)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={'/'.join(self.path)!r})"
