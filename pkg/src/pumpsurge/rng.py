"""Named, counter-based random streams.

All randomness in the package flows through Philox generators keyed by
``(master_seed, stream, index)``.  Streams are identified by name through a
fixed registry, so the train / validation / test scenario streams (and the
internal training streams) can never collide: two generators coincide only
if master seed, stream name and index are all equal.

Scenario files persist the full key triple, which makes any scenario
reproducible from its record alone.
"""

from __future__ import annotations

import numpy as np

# Registry of named streams.  Append only: renumbering breaks reproducibility
# of every persisted seed triple.
STREAMS = {
    "train-scenarios": 0,
    "validation-scenarios": 1,
    "test-scenarios": 2,
    "net-init": 3,
    "actions": 4,
    "replay": 5,
    "optimizer": 6,
    "misc": 7,
}


def stream_id(name: str) -> int:
    try:
        return STREAMS[name]
    except KeyError:
        raise KeyError(f"unknown rng stream {name!r}; known: {sorted(STREAMS)}") from None


def make_rng(master_seed: int, stream: str | int, index: int = 0) -> np.random.Generator:
    """Generator for one (seed, stream, index) cell of the key space."""
    sid = stream_id(stream) if isinstance(stream, str) else int(stream)
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(sid, int(index)))
    return np.random.Generator(np.random.Philox(seq))


def seed_triple(master_seed: int, stream: str, index: int) -> tuple[int, int, int]:
    """The persistable key of a stream cell (used in scenario records)."""
    return (int(master_seed), stream_id(stream), int(index))


def rng_from_triple(triple) -> np.random.Generator:
    master, sid, index = (int(x) for x in triple)
    return make_rng(master, sid, index)
