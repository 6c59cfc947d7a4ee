"""Counter-based random streams.

Every random quantity is drawn from a Philox generator keyed by
(master seed, stream kind, index), so results never depend on execution
order or worker count.
"""

import numpy as np

STREAM_KINDS = {
    "background": 1,
    "tagged": 2,
    "walker": 3,
    "jump": 4,
    "operator": 5,
    "bootstrap": 6,
    "scatter": 7,
    "test": 8,
}


def stream(master_seed: int, kind: str, index: int = 0) -> np.random.Generator:
    """Independent generator for (master_seed, kind, index)."""
    if kind not in STREAM_KINDS:
        raise KeyError(f"unknown stream kind {kind!r}")
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(STREAM_KINDS[kind], int(index)))
    return np.random.Generator(np.random.Philox(ss))


def substream_seed(master_seed: int, kind: str, index: int = 0) -> int:
    """64-bit integer seed derived from the same key; recorded in manifests."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(STREAM_KINDS[kind], int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
