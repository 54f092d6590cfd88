import numpy as np
import pytest

from rbivision.rng import StreamRandom, as_rng, normalize_seed


def test_same_seed_same_stream():
    a, b = StreamRandom(42), StreamRandom(42)
    assert a.random_bytes(64) == b.random_bytes(64)
    assert np.array_equal(a.integers(0, np.full(50, 9)), b.integers(0, np.full(50, 9)))
    assert StreamRandom("x").random_bytes(16) != StreamRandom("y").random_bytes(16)


def test_seed_forms():
    assert len(normalize_seed(None)) == 32
    raw = bytes(range(32))
    assert normalize_seed(raw) == raw
    assert as_rng(StreamRandom(1)).seed == StreamRandom(1).seed


def test_spawn_is_independent_and_reproducible():
    r = StreamRandom(5)
    c1, c2 = r.spawn("a"), r.spawn("b")
    assert c1.random_bytes(32) != c2.random_bytes(32)
    assert StreamRandom(5).spawn("a").random_bytes(32) == StreamRandom(5).spawn("a").random_bytes(32)


def test_ranges():
    r = StreamRandom(9)
    v = r.integers(np.full(20000, -3), 4)
    assert v.min() == -3 and v.max() == 4
    big = r.uniform_below(np.full(1000, (1 << 40) + 7))
    assert big.min() >= 0 and big.max() < (1 << 40) + 7
    assert all(0 <= r.randbelow(7) < 7 for _ in range(200))
    assert all(10 <= r.randint(10, 12) <= 12 for _ in range(200))
    assert r.randbits(0) == 0 and r.randbits(13) < 1 << 13
    with pytest.raises(ValueError):
        r.randbelow(0)
    with pytest.raises(ValueError):
        r.uniform_below([0])


def test_uniform_below_is_unbiased():
    counts = np.bincount(StreamRandom(1).uniform_below(np.full(60000, 3)), minlength=3)
    assert np.all(np.abs(counts - 20000) < 5 * np.sqrt(20000 * 2 / 3))


def test_permutation_and_bits():
    r = StreamRandom(3)
    p = r.permutation(300)
    assert sorted(p.tolist()) == list(range(300))
    b = r.bits((100, 100))
    assert b.dtype == bool and 4500 < b.sum() < 5500
    assert sorted(r.shuffle_list(list("abcdef"))) == list("abcdef")
