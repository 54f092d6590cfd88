"""Paillier cryptosystem (g = n + 1 variant) with CRT decryption."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import gmpy2

from .rng import StreamRandom

DEFAULT_KEY_BITS = 1024


def _random_prime(bits: int, rng: StreamRandom) -> gmpy2.mpz:
    # top two bits set so the product has exactly 2*bits bits
    while True:
        cand = rng.randbits(bits) | (3 << (bits - 2)) | 1
        p = gmpy2.next_prime(cand)
        if p.bit_length() == bits:
            return p


@dataclass(frozen=True)
class PaillierPublicKey:
    n: int

    @property
    def nsquare(self):
        return gmpy2.mpz(self.n) * self.n

    @property
    def bits(self) -> int:
        return int(self.n).bit_length()

    def random_unit(self, rng: StreamRandom) -> gmpy2.mpz:
        while True:
            r = rng.randbelow(self.n)
            if r > 1 and gmpy2.gcd(r, self.n) == 1:
                return gmpy2.mpz(r)

    def obfuscator(self, rng: StreamRandom) -> gmpy2.mpz:
        return gmpy2.powmod(self.random_unit(rng), self.n, self.nsquare)

    def encrypt(self, m: int, rng: StreamRandom) -> gmpy2.mpz:
        n2 = self.nsquare
        return (self.raw_encode(m) * self.obfuscator(rng)) % n2

    def raw_encode(self, m: int) -> gmpy2.mpz:
        """Deterministic (unrandomized) encryption ``1 + m*n mod n^2``."""
        n = gmpy2.mpz(self.n)
        return (1 + (m % n) * n) % (n * n)

    def add(self, c1, c2):
        return (c1 * c2) % self.nsquare

    def mul_const(self, c, k: int):
        return gmpy2.powmod(c, k % self.n, self.nsquare)


@dataclass(frozen=True)
class PaillierPrivateKey:
    public_key: PaillierPublicKey
    p: int
    q: int

    def __post_init__(self):
        p, q = gmpy2.mpz(self.p), gmpy2.mpz(self.q)
        n = p * q
        object.__setattr__(self, "_psq", p * p)
        object.__setattr__(self, "_qsq", q * q)
        object.__setattr__(self, "_hp", self._h(p, self._psq, n))
        object.__setattr__(self, "_hq", self._h(q, self._qsq, n))
        object.__setattr__(self, "_pinv", gmpy2.invert(p, q))

    @staticmethod
    def _h(x, xsq, n):
        # h_x = L_x((n+1)^(x-1) mod x^2)^-1 mod x
        lx = (gmpy2.powmod(n + 1, x - 1, xsq) - 1) // x
        return gmpy2.invert(lx, x)

    def decrypt(self, c) -> int:
        p, q = gmpy2.mpz(self.p), gmpy2.mpz(self.q)
        mp = ((gmpy2.powmod(c, p - 1, self._psq) - 1) // p * self._hp) % p
        mq = ((gmpy2.powmod(c, q - 1, self._qsq) - 1) // q * self._hq) % q
        u = ((mq - mp) * self._pinv) % q
        return int(mp + u * p)


def generate_keypair(bits: int = DEFAULT_KEY_BITS,
                     rng: Optional[StreamRandom] = None) -> tuple[PaillierPublicKey, PaillierPrivateKey]:
    if bits < 128 or bits % 2:
        raise ValueError("key size must be an even number of bits >= 128")
    rng = rng or StreamRandom()
    while True:
        p = _random_prime(bits // 2, rng)
        q = _random_prime(bits // 2, rng)
        if p != q:
            break
    pub = PaillierPublicKey(int(p * q))
    return pub, PaillierPrivateKey(pub, int(p), int(q))
