"""Named, splittable random substreams for reproducible simulation.

One root seed fans out into independent counter-based (Philox) substreams,
one per named purpose (arrivals, services, patience, routing). Streams are
buffered: variates are drawn from the generator in blocks and handed out one
at a time, which keeps scalar draws cheap inside the event loop while staying
bit-reproducible for a given root seed.
"""

from __future__ import annotations

import numpy as np

ARRIVALS = "arrivals"
SERVICES = "services"
PATIENCE = "patience"
ROUTING = "routing"

_STREAM_IDS = {ARRIVALS: 0, SERVICES: 1, PATIENCE: 2, ROUTING: 3}
_BLOCK = 4096


class Substream:
    """A buffered view of one independent Philox stream."""

    __slots__ = ("_gen", "_exp", "_uni", "_ei", "_ui")

    def __init__(self, seed_seq: np.random.SeedSequence):
        self._gen = np.random.Generator(np.random.Philox(seed_seq))
        self._exp = self._gen.standard_exponential(_BLOCK)
        self._uni = self._gen.random(_BLOCK)
        self._ei = 0
        self._ui = 0

    def exponential(self, rate: float) -> float:
        """One Exp(rate) variate."""
        i = self._ei
        if i == _BLOCK:
            self._exp = self._gen.standard_exponential(_BLOCK)
            i = 0
        self._ei = i + 1
        return self._exp[i] / rate

    def uniform(self) -> float:
        """One U[0,1) variate."""
        i = self._ui
        if i == _BLOCK:
            self._uni = self._gen.random(_BLOCK)
            i = 0
        self._ui = i + 1
        return self._uni[i]

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        return int(self.uniform() * n)


class RandomStreams:
    """Factory for the named substreams of one simulation replication."""

    def __init__(self, root_seed: int):
        self.root_seed = int(root_seed)
        self._cache: dict[tuple[int, int], Substream] = {}

    def stream(self, name: str, index: int = 0) -> Substream:
        """Substream for (purpose, index); index separates e.g. per-class arrivals."""
        sid = _STREAM_IDS[name]
        key = (sid, index)
        sub = self._cache.get(key)
        if sub is None:
            sub = Substream(np.random.SeedSequence(entropy=self.root_seed, spawn_key=key))
            self._cache[key] = sub
        return sub
