"""Two-party additive secret sharing, optionally with SPDZ-style MACs.

A secret x lives as value shares x0 + x1 = x (mod p). In authenticated mode
each share also carries a MAC share, and the MAC shares sum to alpha*x for a
global key alpha = alpha0 + alpha1 known to neither party alone.

Convention used everywhere: the party with id 0 absorbs public constants
(its value share gets the +const term); MAC shares of a constant are
const*alpha_share_i at both parties, which sums to const*alpha.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from .errors import ArityError, ModeMismatch
from .field import Field


@dataclass(slots=True)
class AuthenticatedShare:
    """One party's share of one secret; ``mac`` is None in semi-honest mode."""

    value: int
    mac: int | None = None


@dataclass(slots=True)
class ShareVector:
    """Columnar batch of shares: parallel value and (optional) MAC lists.

    The protocol engine works on these rather than per-element objects; a
    query touches millions of elements and the flat-list form keeps the hot
    loops as plain int arithmetic.
    """

    values: list[int]
    macs: list[int] | None = None

    def __post_init__(self):
        if self.macs is not None and len(self.macs) != len(self.values):
            raise ArityError("value and MAC columns differ in length")

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> AuthenticatedShare:
        return AuthenticatedShare(
            self.values[i], None if self.macs is None else self.macs[i]
        )

    @property
    def authenticated(self) -> bool:
        return self.macs is not None

    def slice(self, start: int, stop: int) -> "ShareVector":
        return ShareVector(
            self.values[start:stop],
            None if self.macs is None else self.macs[start:stop],
        )


def concat(vectors: Sequence[ShareVector]) -> ShareVector:
    """Concatenate batches; all must agree on MAC presence."""
    if not vectors:
        return ShareVector([])
    with_macs = vectors[0].macs is not None
    if any((v.macs is not None) != with_macs for v in vectors):
        raise ModeMismatch("cannot concatenate MACed and MAC-less vectors")
    values: list[int] = []
    macs: list[int] | None = [] if with_macs else None
    for v in vectors:
        values.extend(v.values)
        if with_macs:
            macs.extend(v.macs)  # type: ignore[union-attr]
    return ShareVector(values, macs)


@dataclass(frozen=True, slots=True)
class GlobalMacKey:
    """Dealer-held MAC key alpha and its two additive shares."""

    alpha: int
    shares: tuple[int, int]

    @classmethod
    def generate(cls, field: Field, rng: random.Random) -> "GlobalMacKey":
        alpha = field.sample(rng)
        s0, s1 = share_secret(field, alpha, rng)
        return cls(alpha, (s0, s1))


def share_secret(field: Field, x: int, rng: random.Random) -> tuple[int, int]:
    """Split x into (uniform share, complement)."""
    s0 = field.sample(rng)
    return s0, field.sub(x, s0)


def reconstruct(field: Field, s0: int, s1: int) -> int:
    return field.add(s0, s1)


def share_authenticated(
    field: Field, x: int, key: GlobalMacKey, rng: random.Random
) -> tuple[AuthenticatedShare, AuthenticatedShare]:
    """Dealer-side sharing of x together with shares of alpha*x."""
    if key is None:
        raise ModeMismatch("authenticated sharing requires the MAC key")
    v0, v1 = share_secret(field, x, rng)
    m0, m1 = share_secret(field, field.mul(key.alpha, x), rng)
    return AuthenticatedShare(v0, m0), AuthenticatedShare(v1, m1)


def share_vector(
    field: Field,
    xs: Sequence[int],
    rng: random.Random,
    key: GlobalMacKey | None = None,
) -> tuple[ShareVector, ShareVector]:
    """Bulk sharing of a plaintext vector; MACed when a key is supplied."""
    n = len(xs)
    r = field.sample_many(rng, n)
    v0 = r
    v1 = [(x - s) % field.p for x, s in zip(xs, r)]
    if key is None:
        return ShareVector(v0), ShareVector(v1)
    alpha, p = key.alpha, field.p
    rm = field.sample_many(rng, n)
    m1 = [(alpha * x - s) % p for x, s in zip(xs, rm)]
    return ShareVector(v0, rm), ShareVector(v1, m1)


def reconstruct_vector(field: Field, a: ShareVector, b: ShareVector) -> list[int]:
    if len(a) != len(b):
        raise ArityError(f"share vectors differ in length: {len(a)} vs {len(b)}")
    p = field.p
    return [(x + y) % p for x, y in zip(a.values, b.values)]


def linear_combine(
    field: Field,
    party_id: int,
    shares: Sequence[AuthenticatedShare],
    coeffs: Sequence[int],
    const: int = 0,
    alpha_share: int | None = None,
) -> AuthenticatedShare:
    """Local affine map sum(c_j * share_j) + const; no communication.

    MAC shares transform the same way, with const entering as
    const*alpha_share at both parties.
    """
    if len(shares) != len(coeffs):
        raise ArityError(f"{len(shares)} shares vs {len(coeffs)} coefficients")
    p = field.p
    value = sum(c * s.value for c, s in zip(coeffs, shares))
    if party_id == 0:
        value += const
    authenticated = any(s.mac is not None for s in shares) or alpha_share is not None
    if not authenticated:
        return AuthenticatedShare(value % p)
    if alpha_share is None:
        raise ModeMismatch("MACed shares need alpha_share for the constant term")
    if any(s.mac is None for s in shares):
        raise ModeMismatch("mixed MACed and MAC-less shares")
    mac = sum(c * s.mac for c, s in zip(coeffs, shares)) + const * alpha_share
    return AuthenticatedShare(value % p, mac % p)
