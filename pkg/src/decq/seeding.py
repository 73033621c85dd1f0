"""Seed derivation.

Every random stream is a PCG64 generator seeded from a SeedSequence whose
entropy is the list ``[master, *keys]``.  Keys used in the package:

* learners: ``(cell, trial, ENV)`` for the environment, ``(cell, trial, INIT)``
  for the initial state and joint policy, ``(cell, trial, AGENT + i)`` for
  agent ``i``; ``cell`` numbers the (K, T) cells of a sweep and is 0 otherwise;
* best-reply process: ``(BRPI, cell, trial, i, k)`` for agent ``i`` at step
  ``k``, or ``(BRPI, run, i, k)`` for a standalone run.

Streams therefore depend only on their key, never on evaluation order.
"""

from __future__ import annotations

import numpy as np

ENV = 0
INIT = 1
BRPI = 2
AGENT = 16


def stream(master: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(
        [int(master)] + [int(k) for k in keys])))
