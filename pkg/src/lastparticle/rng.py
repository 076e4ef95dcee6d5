"""Counter-based splittable random streams for reproducible simulation.

Every source of randomness in this package is an :class:`RngStream`, a thin
wrapper around a keyed Philox generator.  Streams are addressed by a 64-bit
``(seed, stream_id)`` pair: the seed goes into the Philox key and the stream
id into the high words of the 256-bit Philox counter, so distinct stream ids
yield guaranteed-disjoint counter blocks (independent streams), and replaying
the same pair is bit-identical.

Stream ids are packed from ``(purpose, replicate, index)`` so that engines
can deterministically address one stream per particle lifetime, one stream
per branching event, and so on.  This is what makes the event-driven engine
and the level-synchronous driver consume identical draws and therefore agree
bit-for-bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
# Fixed second key word, keeps user seeds away from the all-zero key.
_KEY_SALT = 0x9E3779B97F4A7C15

# Stream purposes (packed into the top byte of the stream id).
SELECT = 0   # uniform parent choices at branching events
INIT = 1     # initial particle lifetimes, one stream per particle
BRANCH = 2   # resampled trajectory pieces, one stream per branching event
SAMPLE = 3   # batched Monte Carlo sampling (naive MC, nested estimates)
PROBE = 4    # miscellaneous probe/demo sampling

_MAX_PURPOSE = 0xFF
_MAX_REPLICATE = 0xFFFFFF
_MAX_INDEX = 0xFFFFFFFF


def pack_stream_id(purpose: int, index: int = 0, replicate: int = 0) -> int:
    """Pack (purpose, replicate, index) into a single 64-bit stream id."""
    if not 0 <= purpose <= _MAX_PURPOSE:
        raise ValueError(f"purpose out of range: {purpose}")
    if not 0 <= replicate <= _MAX_REPLICATE:
        raise ValueError(f"replicate out of range: {replicate}")
    if not 0 <= index <= _MAX_INDEX:
        raise ValueError(f"stream index out of range: {index}")
    return (purpose << 56) | (replicate << 32) | index


class RngStream:
    """One independent, replayable stream of randomness.

    Parameters
    ----------
    seed : int
        Experiment-level seed (64-bit).
    stream_id : int
        Logical stream address (64-bit); see :func:`pack_stream_id`.

    Notes
    -----
    ``counter`` tracks the number of logically consumed draws.  The
    trajectory integrator reads Gaussian deviates in blocks for speed and a
    block may be only partially used; a stream handed to a simulation call is
    therefore single-use and must not be shared with other consumers.
    """

    __slots__ = ("seed", "stream_id", "counter", "_gen")

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.counter = 0
        bitgen = np.random.Philox(
            key=np.array([self.seed, _KEY_SALT], dtype=np.uint64),
            counter=np.array([0, 0, self.stream_id, 0], dtype=np.uint64),
        )
        self._gen = np.random.Generator(bitgen)

    @classmethod
    def for_task(cls, seed: int, purpose: int, index: int = 0,
                 replicate: int = 0) -> "RngStream":
        return cls(seed, pack_stream_id(purpose, index, replicate))

    def replay(self) -> "RngStream":
        """A fresh stream positioned at the start of this one's sequence."""
        return RngStream(self.seed, self.stream_id)

    def normals(self, shape) -> np.ndarray:
        """Standard normal draws; counts every generated value."""
        out = self._gen.standard_normal(shape)
        self.counter += out.size
        return out

    def raw_normals(self, shape) -> np.ndarray:
        """Block draws for the integrator; caller accounts consumption."""
        return self._gen.standard_normal(shape)

    def uniform_index(self, n: int) -> int:
        """One uniform draw from {0, ..., n-1}."""
        if n <= 0:
            raise ValueError("uniform_index needs n >= 1")
        self.counter += 1
        return int(self._gen.integers(0, n))

    def uniforms(self, shape) -> np.ndarray:
        out = self._gen.random(shape)
        self.counter += out.size
        return out

    def __repr__(self):  # pragma: no cover - debugging aid
        return (f"RngStream(seed={self.seed}, stream_id={self.stream_id:#x}, "
                f"counter={self.counter})")


@dataclass(frozen=True)
class StreamFamily:
    """Deterministic allocator of the streams used by one run.

    The draw-order contract shared by the event-driven engine and the
    level-synchronous driver:

    * ``select()``   -- one persistent stream; one uniform draw per branching
      event, in event order;
    * ``init(n)``    -- stream of particle ``n``'s first lifetime: initial
      state draws, then the trajectory's Gaussian increments;
    * ``branch(j)``  -- stream of the lifetime created by branching event
      ``j`` (1-based): the resampled trajectory piece's increments;
    * ``sample(k)``  -- batched sampling streams for analysis routines.
    """

    seed: int
    replicate: int = 0

    def select(self) -> RngStream:
        return RngStream.for_task(self.seed, SELECT, 0, self.replicate)

    def init(self, n: int) -> RngStream:
        return RngStream.for_task(self.seed, INIT, n, self.replicate)

    def branch(self, j: int) -> RngStream:
        return RngStream.for_task(self.seed, BRANCH, j, self.replicate)

    def sample(self, k: int = 0) -> RngStream:
        return RngStream.for_task(self.seed, SAMPLE, k, self.replicate)

    def probe(self, k: int = 0) -> RngStream:
        return RngStream.for_task(self.seed, PROBE, k, self.replicate)


def as_family(seed_or_family, replicate: int = 0) -> StreamFamily:
    """Accept either an integer seed or a ready-made family."""
    if isinstance(seed_or_family, StreamFamily):
        return seed_or_family
    return StreamFamily(int(seed_or_family), replicate)
