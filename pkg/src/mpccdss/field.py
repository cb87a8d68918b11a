"""Prime-field arithmetic underlying all shares and protocol messages.

Field elements are canonical Python ints in ``[0, p)``; every operation
returns a fully reduced value (no lazy reduction across module boundaries).
The wire encoding is fixed at 16 bytes little-endian, zero-padded, for every
supported modulus, so messages are bit-exact regardless of ``p``.

This implementation is not hardened against timing side channels; see the
README for the list of known production gaps.
"""

from __future__ import annotations

import random

from .errors import ConfigError, DivisionByZero

ENCODED_SIZE = 16

# Witnesses making Miller-Rabin deterministic for n < 3,317,044,064,679,887,385,961,981
# (covers everything below 2^64 with a wide margin).
_DETERMINISTIC_WITNESSES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)
_DETERMINISTIC_LIMIT = 3_317_044_064_679_887_385_961_981


def _miller_rabin_round(n: int, d: int, r: int, a: int) -> bool:
    x = pow(a, d, n)
    if x == 1 or x == n - 1:
        return True
    for _ in range(r - 1):
        x = x * x % n
        if x == n - 1:
            return True
    return False


def is_prime(n: int, rounds: int = 40, rng: random.Random | None = None) -> bool:
    """Primality check: deterministic below 2^64, ``rounds`` Miller-Rabin
    rounds with random bases above."""
    if n < 2:
        return False
    for small in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n == small:
            return True
        if n % small == 0:
            return False
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    if n < _DETERMINISTIC_LIMIT:
        witnesses = [a for a in _DETERMINISTIC_WITNESSES if a < n - 1]
    else:
        rng = rng or random.SystemRandom()
        witnesses = [rng.randrange(2, n - 1) for _ in range(rounds)]
    return all(_miller_rabin_round(n, d, r, a) for a in witnesses)


class Field:
    """The ring Z_p for a verified prime p, with sampling and wire codecs."""

    __slots__ = ("p", "bit_length", "_nbytes", "_mask")

    def __init__(self, p: int, check_primality: bool = True):
        if p < 2 or p.bit_length() > 8 * ENCODED_SIZE:
            raise ConfigError(f"modulus must be a prime below 2^128, got {p}")
        if check_primality and not is_prime(p):
            raise ConfigError(f"modulus {p} is not prime")
        self.p = p
        self.bit_length = p.bit_length()
        self._nbytes = (self.bit_length + 7) // 8
        self._mask = (1 << self.bit_length) - 1

    def reduce(self, x: int) -> int:
        return x % self.p

    def add(self, a: int, b: int) -> int:
        return (a + b) % self.p

    def sub(self, a: int, b: int) -> int:
        return (a - b) % self.p

    def neg(self, a: int) -> int:
        return -a % self.p

    def mul(self, a: int, b: int) -> int:
        return a * b % self.p

    def inv(self, a: int) -> int:
        """Multiplicative inverse via Fermat: a^(p-2) mod p."""
        if a % self.p == 0:
            raise DivisionByZero("inverse of zero")
        return pow(a, self.p - 2, self.p)

    def sample(self, rng: random.Random) -> int:
        """Uniform element by rejection sampling on the minimal number of
        random bytes covering p (high bits masked to the modulus width)."""
        nbytes, mask, p = self._nbytes, self._mask, self.p
        while True:
            v = int.from_bytes(rng.randbytes(nbytes), "little") & mask
            if v < p:
                return v

    def sample_many(self, rng: random.Random, count: int) -> list[int]:
        """Bulk uniform sampling; identical distribution to ``sample``."""
        nbytes, mask, p = self._nbytes, self._mask, self.p
        out: list[int] = []
        while len(out) < count:
            want = count - len(out)
            # over-draw a little so one pass usually suffices
            n = want + (want >> 2) + 8
            buf = rng.randbytes(n * nbytes)
            chunk = [
                v
                for i in range(0, n * nbytes, nbytes)
                if (v := int.from_bytes(buf[i : i + nbytes], "little") & mask) < p
            ]
            out.extend(chunk)
        del out[count:]
        return out

    def encode(self, a: int) -> bytes:
        return a.to_bytes(ENCODED_SIZE, "little")

    def decode(self, buf: bytes) -> int:
        if len(buf) != ENCODED_SIZE:
            raise ConfigError(f"field element must be {ENCODED_SIZE} bytes, got {len(buf)}")
        v = int.from_bytes(buf, "little")
        if v >= self.p:
            raise ConfigError("encoded value exceeds modulus")
        return v

    def encode_many(self, values: list[int]) -> bytes:
        return b"".join(v.to_bytes(ENCODED_SIZE, "little") for v in values)

    def decode_many(self, buf: bytes) -> list[int]:
        if len(buf) % ENCODED_SIZE:
            raise ConfigError("element buffer not a multiple of the encoding size")
        p = self.p
        out = []
        for i in range(0, len(buf), ENCODED_SIZE):
            v = int.from_bytes(buf[i : i + ENCODED_SIZE], "little")
            if v >= p:
                raise ConfigError("encoded value exceeds modulus")
            out.append(v)
        return out

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Field) and other.p == self.p

    def __hash__(self) -> int:
        return hash(("Field", self.p))

    def __repr__(self) -> str:
        return f"Field(p={self.p})"


# Largest prime below 2^128 (cross-checked against an independent primality
# oracle in the test suite); fits two 64-bit words and the 16-byte encoding.
PRODUCTION_MODULUS = 2**128 - 159

# Mersenne prime 2^61 - 1: fast desk-scale testing.
TEST_MODULUS = 2**61 - 1

# Small prime permitting exhaustive checks.
EXHAUSTIVE_TEST_MODULUS = 101
