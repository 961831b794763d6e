"""Counter-based random streams.

Every random draw in the package descends from a single 64-bit master seed
through Philox, a counter-based bit generator. Streams are keyed by
(master_seed, lane, worker): distinct keys give statistically independent
streams, and the same key always reproduces the same stream. Within a run,
each (worker, round) pair reads a disjoint stretch of its worker stream
because the per-round draw schedule is fixed, so per-(worker, round)
randomness is independent and reproducible from the master seed alone.

Synchronized-compressor mode uses one shared stream (worker tag ``None``)
whose draws depend only on the round index, so every worker sees the same
compressor realization in a round.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Lane ids separate non-interchangeable uses of randomness.
LANE_STANDALONE = 0
LANE_NOISE = 1
LANE_COMPRESS = 2
LANE_QUANTIZE = 3
LANE_SYNC = 4
LANE_SUITE = 5
LANE_INIT = 6
LANE_OUTPUT = 7

_SYNC_TAG = 0x5F53594E43  # worker slot used when a stream is shared


def _worker_tag(worker):
    return _SYNC_TAG if worker is None else int(worker)


def lane_generator(master_seed: int, lane: int, worker: int | None = None,
                   round_index: int = 0) -> np.random.Generator:
    """Philox generator for (master_seed, lane, worker), positioned at
    ``round_index`` * 2**128 draws so explicit per-round streams never
    overlap sequential consumption of round 0 onward."""
    ss = np.random.SeedSequence((int(master_seed), int(lane), _worker_tag(worker)))
    key = ss.generate_state(2, np.uint64)
    bg = np.random.Philox(counter=int(round_index) << 128, key=key)
    return np.random.Generator(bg)


@dataclass(frozen=True)
class RngStream:
    """Addressable randomness for one (worker, round) cell.

    ``worker=None`` selects the synchronized stream that depends on the
    round index only, identical on all workers.
    """

    master_seed: int
    worker: int | None = None
    round_index: int = 0
    lane: int = LANE_STANDALONE

    def generator(self) -> np.random.Generator:
        return lane_generator(self.master_seed, self.lane, self.worker,
                              self.round_index)


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a Generator, or an int seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).generator()
    raise TypeError(f"cannot interpret {type(rng).__name__} as a random stream")


class RunRngs:
    """Per-run bundle of sequential lane streams.

    One generator per (lane, worker) created up front; round t consumes the
    next fixed-size block of each stream, which keeps trajectories bitwise
    deterministic and keeps matched algorithm pairs (for the exact-reduction
    checks) reading identical draws.
    """

    def __init__(self, master_seed: int, n_workers: int):
        self.noise = [lane_generator(master_seed, LANE_NOISE, i) for i in range(n_workers)]
        self.compress = [lane_generator(master_seed, LANE_COMPRESS, i) for i in range(n_workers)]
        self.quantize = [lane_generator(master_seed, LANE_QUANTIZE, i) for i in range(n_workers)]
        self.sync = lane_generator(master_seed, LANE_SYNC, None)
