import zlib

import numpy as np

from labelmend.rng import Xoshiro256, image_seed, splitmix64


def test_splitmix64_reference_value():
    # first output of the reference splitmix64 from state 0
    _, z = splitmix64(0)
    assert z == 0xE220A8397B1DCDAF


def test_xoshiro_reference_sequence():
    g = Xoshiro256(0)
    g.s = [1, 2, 3, 4]
    assert [g.next_u64() for _ in range(4)] == [11520, 0, 1509978240, 1215971899390074240]


def test_random_in_unit_interval_and_repeatable():
    a = Xoshiro256(42).random((100,))
    b = Xoshiro256(42).random((100,))
    assert a.tobytes() == b.tobytes()
    assert a.min() >= 0 and a.max() < 1
    assert not np.array_equal(a, Xoshiro256(43).random((100,)))


def test_image_seed_is_xor_of_crc():
    assert image_seed(7, "img_01") == 7 ^ zlib.crc32(b"img_01")
    assert image_seed(0, "a") != image_seed(0, "b")
