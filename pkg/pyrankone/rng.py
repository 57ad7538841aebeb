"""Counter-based random streams.

Every stream is a Philox generator keyed by a 128-bit seed and positioned by
its counter, so any block of draws can be produced directly without replaying
the ones before it. Draws are identical across platforms and independent of
the order in which runs are scheduled.
"""

import numpy as np

KEY_BITS = 128
# Round k starts at counter word 1 = k, leaving 2**64 blocks per round.
ROUND_SHIFT = 64


def derive_seed(*words):
    """Mixes integers into a 128-bit Philox key.

    :param words: nonnegative integers, e.g. ``(master_seed, instance)``.
    :returns: int -- key in ``[0, 2**128)``.
    """
    state = np.random.SeedSequence([int(w) for w in words]).generate_state(
        2, dtype=np.uint64
    )
    return (int(state[0]) << 64) | int(state[1])


def counter_generator(seed, round_index=0):
    """Generator for round ``round_index`` of the stream keyed by ``seed``.

    :param seed: stream key.
    :type seed: int.
    :param round_index: position of the block of draws.
    :type round_index: int.
    :returns: numpy.random.Generator
    """
    key = int(seed) % (1 << KEY_BITS)
    counter = int(round_index) << ROUND_SHIFT
    return np.random.Generator(np.random.Philox(key=key, counter=counter))
