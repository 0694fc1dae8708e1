"""Counter-based splittable random streams.

Every sampling operation in the package takes an explicit
``numpy.random.Generator``. Streams are derived from a root seed plus a
branch path, so any sub-computation can be replayed in isolation.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *branch: int) -> np.random.Generator:
    """Return a Philox generator for ``(seed, branch...)``.

    The same (seed, branch) pair always yields an identical stream, and
    distinct branch paths are statistically independent.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(b) for b in branch))
    return np.random.Generator(np.random.Philox(ss))


# Branch labels used by the harness so that experiment stages never share
# a stream even when they run from one root seed.
BRANCH_PRETRAIN = 0
BRANCH_INIT = 1
BRANCH_ROLLOUT = 2
BRANCH_EVAL = 3
BRANCH_FIT = 4
BRANCH_MCMC = 5
