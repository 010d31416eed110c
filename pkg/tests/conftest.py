import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lattix import DecoderConfig, load_fst
from lattix.generate import make_instance
from lattix.scheduler import Scheduler

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

THREE_STATE = "0 1 1 1 0.5\n0 2 0 0 1.0\n1 2 2 2 0.3\n2 0.0\n"


@pytest.fixture
def three_state():
    return load_fst(THREE_STATE)


@pytest.fixture
def three_state_loglikes():
    # loglike(1)=2.0 at t=0, loglike(2)=1.0 at t=1
    return np.array([[0.0, 2.0, 0.0], [0.0, 0.0, 1.0]], dtype=np.float32)


def tiny_instance(seed, max_states=6, max_frames=6, sharpness=1.0):
    """Small random instance sized for exhaustive enumeration."""
    rng = np.random.default_rng([seed, 99])
    num_states = int(rng.integers(2, max_states + 1))
    return make_instance(
        seed,
        num_states=num_states,
        num_arcs=int(rng.integers(num_states, 3 * num_states + 1)),
        num_frames=int(rng.integers(1, max_frames + 1)),
        epsilon_frac=0.3,
        sharpness=sharpness,
        num_ilabels=3,
        num_words=4,
    )


def decode_isolated(fst, loglikes, config=None, chunks=None):
    """Decode one stream on its own scheduler; ``chunks`` splits submission."""
    config = config or DecoderConfig(n_lanes=1, n_channels=1)
    with Scheduler(fst, config) as sched:
        cid = sched.open_channel()
        if chunks is None:
            sched.submit_frames(cid, loglikes, last=True)
        else:
            bounds = [0, *chunks, len(loglikes)]
            for i, (lo, hi) in enumerate(zip(bounds, bounds[1:])):
                sched.submit_frames(cid, loglikes[lo:hi], last=i == len(bounds) - 2)
        return sched.finalize(cid)


def lattice_walk(lattice, fst_arcs):
    """Follow graph arcs from the lattice start; True if this reaches a final node."""
    step = {}
    for a, (s, f) in enumerate(zip(lattice.arc_from.tolist(), lattice.arc_fst_arc.tolist())):
        step[(s, f)] = a
    node = lattice.start
    for fa in fst_arcs:
        a = step.get((node, fa))
        if a is None:
            return False
        node = int(lattice.arc_to[a])
    return node in lattice.finals
