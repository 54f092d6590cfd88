"""Private comparison and oblivious transfer between Alice and Bob.

Two backends share one interface:

* ``mock``: Bob hands his operands to Alice in the clear and Alice computes
  the results locally. Functionally identical, no privacy; used for fast
  tests and benchmarks.
* ``paillier``: the real protocols.

  - Comparison ``a > b`` (Alice learns the bit): Lin-Tzeng 0/1-encodings.
    Alice sends Paillier encryptions of her 1-encoding slots, Bob subtracts
    his 0-encoding slots, blinds each difference by a random unit and
    rerandomizes, shuffles and returns them. ``a > b`` iff some slot
    decrypts to zero.
  - 1-of-2 OT: receiver-keyed ElGamal (Bellare-Micali) in the quadratic
    residue subgroup of a MODP safe prime, hashed with SHAKE-256.

All calls are batched: one message round serves a whole vector of
comparisons. Every batch carries the id of its first comparison; both sides
keep the same counter and reject mismatches.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import gmpy2
import numpy as np

from . import wire
from .channel import Channel
from .errors import ProtocolViolation, RangeError
from .integral import COMPARE_BITS
from .paillier import DEFAULT_KEY_BITS, PaillierPublicKey, generate_keypair
from .rng import StreamRandom

MAX_OT_MESSAGE = 64
LEAF_BYTES = 8

# RFC 2409 group 2 and RFC 3526 group 14 safe primes; g = 4 generates the
# order-q subgroup of quadratic residues.
_MODP = {
    1024: int(
        "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
        "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
        "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
        "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE65381FFFFFFFFFFFFFFFF", 16),
    2048: int(
        "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
        "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
        "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
        "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
        "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
        "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
        "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
        "3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF", 16),
}


@dataclass(frozen=True)
class ModpGroup:
    p: int
    g: int = 4

    @property
    def q(self) -> int:
        return (self.p - 1) // 2

    @property
    def bits(self) -> int:
        return self.p.bit_length()

    @classmethod
    def named(cls, bits: int) -> "ModpGroup":
        try:
            return cls(_MODP[bits])
        except KeyError:
            raise ValueError(f"no MODP group of {bits} bits (have {sorted(_MODP)})") from None

    def exp(self, base, e):
        return gmpy2.powmod(base, e, self.p)

    def random_exponent(self, rng: StreamRandom) -> int:
        return 1 + rng.randbelow(self.q - 1)

    def check(self, x: int) -> int:
        if not 1 < x < self.p - 1 or gmpy2.jacobi(x, self.p) != 1:
            raise ProtocolViolation("group element outside the prime-order subgroup")
        return x


def _ot_pad(element, cid: int, index: int, length: int) -> bytes:
    h = hashlib.shake_256(b"rbivision-ot" + struct.pack(">IB", cid, index)
                          + int(element).to_bytes((int(element).bit_length() + 7) // 8, "big"))
    return h.digest(length)


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# Lin-Tzeng encodings over unsigned ``bits``-bit values, MSB first.
# Slot i (1-based) of Alice's 1-encoding is code(a[:i]) when a_i = 1, else 0;
# slot i of Bob's 0-encoding is code(b[:i-1] + '1') when b_i = 0, else -1.
# code(prefix of length i) = (1 << i) | prefix, which is >= 2 and injective.

def one_encoding(a: int, bits: int) -> list[int]:
    out = []
    for i in range(1, bits + 1):
        prefix = a >> (bits - i)
        out.append((1 << i) | prefix if prefix & 1 else 0)
    return out


def zero_encoding(b: int, bits: int) -> list[int]:
    out = []
    for i in range(1, bits + 1):
        prefix = b >> (bits - i)
        out.append((1 << i) | prefix | 1 if not prefix & 1 else -1)
    return out


def check_domain(values: np.ndarray, bits: int) -> None:
    off = 1 << (bits - 1)
    if values.size and (values.min() < -off or values.max() >= off):
        raise RangeError(f"comparison operand outside the {bits}-bit domain")


def to_unsigned(values, bits: int) -> list[int]:
    off = 1 << (bits - 1)
    out = []
    for v in values:
        v = int(v)
        if not -off <= v < off:
            raise RangeError(f"comparison operand {v} outside the {bits}-bit domain")
        out.append(v + off)
    return out


# ---------------------------------------------------------------------------
# Backends


class _Party:
    def __init__(self, channel: Channel, bits: int = COMPARE_BITS):
        self.channel = channel
        self.bits = bits
        self.next_id = 0

    def _claim(self, count: int) -> int:
        cid = self.next_id
        self.next_id = (self.next_id + count) & 0xFFFFFFFF
        return cid

    def _recv_cmp(self, msg_type: int, cid: int, sub: int) -> bytes:
        got_cid, got_sub, body = wire.cmp_unpack(self.channel.expect(msg_type))
        if got_cid != cid or got_sub != sub:
            raise ProtocolViolation(
                f"comparison message out of order: id {got_cid}/{cid}, sub {got_sub}/{sub}")
        return body

    def _send_cmp(self, msg_type: int, cid: int, sub: int, body: bytes) -> None:
        self.channel.send(msg_type, wire.cmp_pack(cid, sub, body))


class ComparisonClient(_Party):
    """Alice's role: learns comparison bits and chosen messages."""

    def setup(self) -> None:
        pass

    def greater(self, values) -> np.ndarray:
        """Bits ``values[i] > bob_values[i]``; Bob supplies his side."""
        raise NotImplementedError

    def receive(self, choices, length: int = LEAF_BYTES) -> list[bytes]:
        """1-of-2 OT: obtain ``m_choice`` for each pair Bob offers."""
        raise NotImplementedError

    def receive_leaves(self, bits) -> np.ndarray:
        """Blinded leaf transfer: ``c_n = alpha_n+s_n`` if bit else ``beta_n+s_n``."""
        msgs = self.receive(bits, LEAF_BYTES)
        return np.array([int.from_bytes(m, "big", signed=True) for m in msgs], dtype=np.int64)


class ComparisonServer(_Party):
    """Bob's role: supplies operands and message pairs, learns nothing."""

    def setup(self) -> None:
        pass

    def greater(self, values) -> None:
        raise NotImplementedError

    def offer(self, m0: Sequence[bytes], m1: Sequence[bytes]) -> None:
        raise NotImplementedError

    def offer_leaves(self, if_false, if_true) -> None:
        enc = lambda v: int(v).to_bytes(LEAF_BYTES, "big", signed=True)  # noqa: E731
        self.offer([enc(v) for v in if_false], [enc(v) for v in if_true])


# -- mock ------------------------------------------------------------------

class MockClient(ComparisonClient):
    def greater(self, values):
        values = np.asarray(values, dtype=np.int64).ravel()
        check_domain(values, self.bits)
        cid = self._claim(len(values))
        body = self._recv_cmp(wire.CMP_MOCK, cid, 1)
        (count,) = struct.unpack_from(">I", body, 0)
        if count != len(values):
            raise ProtocolViolation(f"mock comparison batch of {count}, expected {len(values)}")
        theirs = wire.unpack_i64(body, count, 4)
        return values > theirs

    def receive(self, choices, length=LEAF_BYTES):
        choices = [int(c) for c in np.asarray(choices).ravel()]
        cid = self._claim(len(choices))
        body = self._recv_cmp(wire.CMP_MOCK, cid, 2)
        count, mlen = struct.unpack_from(">IB", body, 0)
        if count != len(choices) or mlen != length or len(body) != 5 + 2 * count * mlen:
            raise ProtocolViolation("mock transfer batch has the wrong shape")
        out = []
        for i, c in enumerate(choices):
            off = 5 + 2 * i * mlen + (mlen if c else 0)
            out.append(body[off:off + mlen])
        return out

    def receive_leaves(self, bits):
        bits = np.asarray(bits, dtype=bool).ravel()
        cid = self._claim(len(bits))
        body = self._recv_cmp(wire.CMP_MOCK, cid, 2)
        count, mlen = struct.unpack_from(">IB", body, 0)
        if count != len(bits) or mlen != LEAF_BYTES or len(body) != 5 + 16 * count:
            raise ProtocolViolation("mock leaf batch has the wrong shape")
        pairs = wire.unpack_i64(body, 2 * count, 5).reshape(count, 2)
        return np.where(bits, pairs[:, 1], pairs[:, 0])


class MockServer(ComparisonServer):
    def greater(self, values):
        values = np.asarray(values, dtype=np.int64).ravel()
        check_domain(values, self.bits)
        cid = self._claim(len(values))
        self._send_cmp(wire.CMP_MOCK, cid, 1,
                       struct.pack(">I", len(values)) + wire.pack_i64(values))

    def offer(self, m0, m1):
        if len(m0) != len(m1):
            raise ValueError("message lists differ in length")
        mlen = len(m0[0]) if m0 else 0
        if any(len(a) != mlen or len(b) != mlen for a, b in zip(m0, m1)):
            raise ValueError("OT messages must share one length")
        cid = self._claim(len(m0))
        body = struct.pack(">IB", len(m0), mlen) + b"".join(a + b for a, b in zip(m0, m1))
        self._send_cmp(wire.CMP_MOCK, cid, 2, body)

    def offer_leaves(self, if_false, if_true):
        # same bytes as the generic path: interleaved big-endian i64 pairs
        pairs = np.stack([np.asarray(if_false, dtype=np.int64),
                          np.asarray(if_true, dtype=np.int64)], axis=1)
        cid = self._claim(len(pairs))
        body = struct.pack(">IB", len(pairs), LEAF_BYTES) + wire.pack_i64(pairs.ravel())
        self._send_cmp(wire.CMP_MOCK, cid, 2, body)


# -- public key ------------------------------------------------------------

class PaillierClient(ComparisonClient):
    def __init__(self, channel, bits=COMPARE_BITS, key_bits: int = DEFAULT_KEY_BITS,
                 rng: Optional[StreamRandom] = None):
        super().__init__(channel, bits)
        self.key_bits = key_bits
        self.rng = rng or StreamRandom()
        self.group: Optional[ModpGroup] = None
        self.C: Optional[int] = None

    def setup(self):
        self.pk, self.sk = generate_keypair(self.key_bits, self.rng)
        self._send_cmp(wire.CMP_SETUP, 0, 1, wire.pack_bigint(self.pk.n))
        body = self._recv_cmp(wire.CMP_SETUP, 0, 2)
        (gbits,) = struct.unpack_from(">H", body, 0)
        try:
            self.group = ModpGroup.named(gbits)
        except ValueError as exc:
            raise ProtocolViolation(str(exc)) from None
        (C,), _ = wire.unpack_bigints(body, 1, 2)
        self.C = self.group.check(C)

    def greater(self, values):
        values = np.asarray(values, dtype=np.int64).ravel()
        unsigned = to_unsigned(values, self.bits)
        cid = self._claim(len(values))
        cts = []
        for a in unsigned:
            cts.extend(self.pk.encrypt(u, self.rng) for u in one_encoding(a, self.bits))
        self._send_cmp(wire.CMP_MILLIONAIRE, cid, 1,
                       struct.pack(">IB", len(values), self.bits) + wire.pack_bigints(cts))
        body = self._recv_cmp(wire.CMP_MILLIONAIRE, cid, 2)
        count, bits = struct.unpack_from(">IB", body, 0)
        if count != len(values) or bits != self.bits:
            raise ProtocolViolation("millionaire response has the wrong shape")
        replies, end = wire.unpack_bigints(body, count * bits, 5)
        if end != len(body):
            raise ProtocolViolation("trailing bytes in millionaire response")
        n2 = self.pk.nsquare
        out = np.zeros(count, dtype=bool)
        for i in range(count):
            chunk = replies[i * bits:(i + 1) * bits]
            if any(not 0 < c < n2 for c in chunk):
                raise ProtocolViolation("ciphertext outside Z*_{n^2}")
            out[i] = any(self.sk.decrypt(c) == 0 for c in chunk)
        return out

    def receive(self, choices, length=LEAF_BYTES):
        if self.group is None:
            raise ProtocolViolation("OT used before setup")
        choices = [int(c) for c in np.asarray(choices).ravel()]
        G = self.group
        cid = self._claim(len(choices))
        keys, pk0s = [], []
        for c in choices:
            k = G.random_exponent(self.rng)
            mine = G.exp(G.g, k)
            other = (self.C * gmpy2.invert(mine, G.p)) % G.p
            keys.append(k)
            pk0s.append(other if c else mine)
        self._send_cmp(wire.CMP_OT, cid, 1, struct.pack(">I", len(choices)) + wire.pack_bigints(pk0s))
        body = self._recv_cmp(wire.CMP_OT, cid, 2)
        count, mlen = struct.unpack_from(">IB", body, 0)
        if count != len(choices) or mlen != length:
            raise ProtocolViolation("OT response has the wrong shape")
        off = 5
        out = []
        for i, (c, k) in enumerate(zip(choices, keys)):
            (R,), off = wire.unpack_bigints(body, 1, off)
            G.check(R)
            e = body[off + (mlen if c else 0): off + (mlen if c else 0) + mlen]
            if len(e) != mlen:
                raise ProtocolViolation("truncated OT ciphertext")
            off += 2 * mlen
            out.append(_xor(e, _ot_pad(G.exp(R, k), cid + i, c, mlen)))
        if off != len(body):
            raise ProtocolViolation("trailing bytes in OT response")
        return out


class PaillierServer(ComparisonServer):
    def __init__(self, channel, bits=COMPARE_BITS, group_bits: int = 1024,
                 rng: Optional[StreamRandom] = None):
        super().__init__(channel, bits)
        self.rng = rng or StreamRandom()
        self.group = ModpGroup.named(group_bits)
        self.pk: Optional[PaillierPublicKey] = None

    def setup(self):
        (n,), end = wire.unpack_bigints(self._recv_cmp(wire.CMP_SETUP, 0, 1), 1)
        if n.bit_length() < 2 * self.bits + 8:
            raise ProtocolViolation("Paillier modulus too small for the comparison domain")
        self.pk = PaillierPublicKey(n)
        G = self.group
        self.C = G.exp(G.g, G.random_exponent(self.rng))
        self._send_cmp(wire.CMP_SETUP, 0, 2, struct.pack(">H", G.bits) + wire.pack_bigint(self.C))

    def greater(self, values):
        if self.pk is None:
            raise ProtocolViolation("comparison used before setup")
        values = np.asarray(values, dtype=np.int64).ravel()
        unsigned = to_unsigned(values, self.bits)
        cid = self._claim(len(values))
        body = self._recv_cmp(wire.CMP_MILLIONAIRE, cid, 1)
        count, bits = struct.unpack_from(">IB", body, 0)
        if count != len(values) or bits != self.bits:
            raise ProtocolViolation("millionaire request has the wrong shape")
        cts, end = wire.unpack_bigints(body, count * bits, 5)
        if end != len(body):
            raise ProtocolViolation("trailing bytes in millionaire request")
        pk, n2 = self.pk, self.pk.nsquare
        out = []
        for i, b in enumerate(unsigned):
            slots = []
            for c, v in zip(cts[i * bits:(i + 1) * bits], zero_encoding(b, bits)):
                if not 0 < c < n2:
                    raise ProtocolViolation("ciphertext outside Z*_{n^2}")
                diff = pk.add(c, pk.raw_encode(-v))
                blinded = pk.mul_const(diff, pk.random_unit(self.rng))
                slots.append(pk.add(blinded, pk.obfuscator(self.rng)))
            out.extend(self.rng.shuffle_list(slots))
        self._send_cmp(wire.CMP_MILLIONAIRE, cid, 2,
                       struct.pack(">IB", count, bits) + wire.pack_bigints(out))

    def offer(self, m0, m1):
        if len(m0) != len(m1):
            raise ValueError("message lists differ in length")
        mlen = len(m0[0]) if m0 else 0
        if mlen > MAX_OT_MESSAGE or any(len(a) != mlen or len(b) != mlen for a, b in zip(m0, m1)):
            raise ValueError(f"OT messages must share one length <= {MAX_OT_MESSAGE}")
        G = self.group
        cid = self._claim(len(m0))
        body = self._recv_cmp(wire.CMP_OT, cid, 1)
        (count,) = struct.unpack_from(">I", body, 0)
        if count != len(m0):
            raise ProtocolViolation("OT request has the wrong size")
        pk0s, end = wire.unpack_bigints(body, count, 4)
        if end != len(body):
            raise ProtocolViolation("trailing bytes in OT request")
        parts = [struct.pack(">IB", count, mlen)]
        for i, (pk0, a, b) in enumerate(zip(pk0s, m0, m1)):
            G.check(pk0)
            pk1 = (self.C * gmpy2.invert(pk0, G.p)) % G.p
            r = G.random_exponent(self.rng)
            parts.append(wire.pack_bigint(G.exp(G.g, r)))
            parts.append(_xor(a, _ot_pad(G.exp(pk0, r), cid + i, 0, mlen)))
            parts.append(_xor(b, _ot_pad(G.exp(pk1, r), cid + i, 1, mlen)))
        self._send_cmp(wire.CMP_OT, cid, 2, b"".join(parts))


BACKENDS = ("mock", "paillier")


def make_client(kind: str, channel: Channel, bits: int = COMPARE_BITS, key_bits: int = DEFAULT_KEY_BITS,
                rng: Optional[StreamRandom] = None) -> ComparisonClient:
    if kind == "mock":
        return MockClient(channel, bits)
    if kind == "paillier":
        return PaillierClient(channel, bits, key_bits, rng)
    raise ValueError(f"unknown comparison backend {kind!r}")


def make_server(kind: str, channel: Channel, bits: int = COMPARE_BITS, group_bits: int = 1024,
                rng: Optional[StreamRandom] = None) -> ComparisonServer:
    if kind == "mock":
        return MockServer(channel, bits)
    if kind == "paillier":
        return PaillierServer(channel, bits, group_bits, rng)
    raise ValueError(f"unknown comparison backend {kind!r}")


# ---------------------------------------------------------------------------
# One-shot two-party operations (each side calls its own half).

def ot_send(channel: Channel, m0: bytes, m1: bytes, kind: str = "paillier", **kw) -> None:
    srv = make_server(kind, channel, **kw)
    srv.setup()
    srv.offer([m0], [m1])


def ot_receive(channel: Channel, choice: int, length: int, kind: str = "paillier", **kw) -> bytes:
    cli = make_client(kind, channel, **kw)
    cli.setup()
    return cli.receive([choice], length)[0]


def millionaire_alice(channel: Channel, value: int, kind: str = "paillier", **kw) -> bool:
    cli = make_client(kind, channel, **kw)
    cli.setup()
    return bool(cli.greater([value])[0])


def millionaire_bob(channel: Channel, value: int, kind: str = "paillier", **kw) -> None:
    srv = make_server(kind, channel, **kw)
    srv.setup()
    srv.greater([value])
