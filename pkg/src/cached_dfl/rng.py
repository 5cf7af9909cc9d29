"""Named deterministic random substreams derived from a single experiment seed.

Every stochastic component draws from its own generator keyed by
``(seed, *tags)``, so reordering or parallelising components can never
change what any one of them sees.
"""

from __future__ import annotations

import numpy as np


def _tag_to_int(tag: object) -> int:
    if isinstance(tag, (int, np.integer)):
        if tag < 0:
            raise ValueError(f"stream tags must be non-negative, got {tag}")
        return int(tag)
    return int.from_bytes(str(tag).encode("utf-8"), "big")


def substream(seed: int, *tags: object) -> np.random.Generator:
    """Return an independent generator for (seed, *tags); same key, same stream."""
    entropy = [int(seed)] + [_tag_to_int(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))
