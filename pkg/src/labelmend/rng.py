"""xoshiro256** generator, seeded through splitmix64.

Pure Python so parameter initialisation is bit-identical on every platform
and numpy version. Streams: seed -> splitmix64 x4 -> state; each draw yields
the next 64-bit output; ``random()`` maps the top 53 bits to [0, 1).
"""

import zlib

import numpy as np

_MASK = (1 << 64) - 1


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK


def splitmix64(state):
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


class Xoshiro256:
    def __init__(self, seed):
        sm = int(seed) & _MASK
        s = []
        for _ in range(4):
            sm, z = splitmix64(sm)
            s.append(z)
        self.s = s

    def next_u64(self):
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (s1 << 17) & _MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def random(self, size=None):
        if size is None:
            return (self.next_u64() >> 11) * (1.0 / (1 << 53))
        n = int(np.prod(size))
        out = np.fromiter(((self.next_u64() >> 11) for _ in range(n)), dtype=np.float64, count=n)
        return (out * (1.0 / (1 << 53))).reshape(size)

    def uniform(self, low, high, size):
        return low + (high - low) * self.random(size)


def image_seed(global_seed, image_id):
    """Per-image stream: global seed XOR crc32 of the image id."""
    return (int(global_seed) ^ zlib.crc32(str(image_id).encode("utf-8"))) & _MASK
