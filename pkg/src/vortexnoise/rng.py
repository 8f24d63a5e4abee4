"""Counter-based random substreams.

Every random draw in the package comes from a Philox generator keyed by
``(seed, stream, index)``, so a sample or trajectory can be regenerated in
isolation and ensembles do not depend on how work is split across workers.
"""

from __future__ import annotations

import numpy as np

STRUCTURE = 1
JUMP = 2
TRANSPORT = 3


def substream(seed: int, stream: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.Philox(ss))
