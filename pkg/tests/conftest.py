"""Shared helpers: run SPMD protocol closures over a loopback pair."""

import numpy as np

from secnn.dealer import RandomnessStore
from secnn.protocol import Session
from secnn.sharing import Party
from secnn.transport import run_pair


def spmd(fp, f0, f1, items0=None, items1=None, seed=0, sim=None):
    """Run f0/f1 as the two parties; each receives a ready Session.

    Returns (result0, result1, channel0, channel1).
    """

    def mk(party, fn, items):
        def run(ch):
            sess = Session(
                party,
                ch,
                fp,
                RandomnessStore(list(items or [])),
                np.random.default_rng([seed, int(party)]),
            )
            return fn(sess)

        return run

    return run_pair(mk(Party.S0, f0, items0), mk(Party.S1, f1, items1), sim)
