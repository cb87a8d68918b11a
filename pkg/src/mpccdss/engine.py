"""The online two-party protocol engine.

One ProtocolSession drives one party's half of a query: batched openings,
Beaver multiplication, XOR/Hamming folding, the oblivious threshold
comparison, and the deferred batched MAC check. Every operation is
vectorized so the number of communication rounds depends only on the shape
of the computation (D, N, T, ell, kappa), never on secret values.

Wire conventions: OPEN_BATCH and SYNC payloads start with the u32 round
counter so a de-synchronized peer is detected immediately; COMMIT carries a
SHA-256 digest and REVEAL its 32-byte-nonce preimage.
"""

from __future__ import annotations

import hashlib
import random
import struct
from typing import Sequence

from .config import ProtocolConfig
from .dealer import TripleStore
from .errors import (
    ArityError,
    ConfigError,
    DesyncAbort,
    MacAbort,
    ProtocolError,
    RemoteAbort,
)
from .sharing import ShareVector, concat
from .transport import Transport
from .wire import MessageType, decode_abort

_ROUND = struct.Struct(">I")


def _sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class ProtocolSession:
    """One party's sequential protocol state for a single query."""

    def __init__(
        self,
        party_id: int,
        transport: Transport,
        store: TripleStore,
        protocol: ProtocolConfig,
        timeout: float = 30.0,
        rng: random.Random | None = None,
    ):
        if party_id not in (0, 1):
            raise ConfigError(f"party id must be 0 or 1, got {party_id}")
        store.verify_against(protocol)
        self.party_id = party_id
        self.transport = transport
        self.store = store
        self.protocol = protocol
        self.field = protocol.field
        self.timeout = timeout
        self.round = 0
        self.alpha_share = store.alpha_share if protocol.authenticated else None
        if protocol.authenticated and self.alpha_share is None:
            raise ConfigError("authenticated mode requires an alpha share in the store")
        # (opened value, our MAC share or None); cleared by mac_check
        self.opened_log: list[tuple[int, int | None]] = []
        self._rng = rng if rng is not None else random.SystemRandom()

    # -- framing ------------------------------------------------------------

    def _expect(self, expected: MessageType) -> bytes:
        msg_type, payload = self.transport.recv(self.timeout)
        if msg_type == MessageType.ABORT:
            raise RemoteAbort(decode_abort(payload))
        if msg_type != expected:
            raise ProtocolError(f"expected {expected.name}, got {msg_type.name}")
        return payload

    def sync(self, tag: bytes) -> None:
        """Barrier: both parties must present identical round and tag."""
        self.round += 1
        payload = _ROUND.pack(self.round) + _sha256(tag)
        self.transport.send(MessageType.SYNC, payload)
        theirs = self._expect(MessageType.SYNC)
        if theirs != payload:
            raise DesyncAbort(
                f"sync barrier mismatch at round {self.round}: "
                f"ours {payload.hex()[:16]}.., theirs {theirs.hex()[:16]}.."
            )

    # -- local share algebra -------------------------------------------------

    def affine(
        self,
        terms: Sequence[tuple[int, ShareVector]],
        consts: int | Sequence[int] = 0,
    ) -> ShareVector:
        """Elementwise sum(coef * vec) + consts, no communication.

        Party 0 absorbs the public constants into its value shares; in
        authenticated mode both parties add const*alpha_share to the MACs.
        """
        if not terms:
            raise ArityError("affine needs at least one term")
        size = len(terms[0][1])
        if any(len(vec) != size for _, vec in terms):
            raise ArityError("affine term vectors differ in length")
        p = self.field.p
        const_list = [consts] * size if isinstance(consts, int) else list(consts)
        if len(const_list) != size:
            raise ArityError("constant vector length mismatch")

        vals = [0] * size
        for coef, vec in terms:
            vv = vec.values
            vals = [acc + coef * v for acc, v in zip(vals, vv)]
        if self.party_id == 0:
            vals = [(acc + c) % p for acc, c in zip(vals, const_list)]
        else:
            vals = [acc % p for acc in vals]

        if not self.protocol.authenticated:
            return ShareVector(vals)
        alpha = self.alpha_share
        macs = [0] * size
        for coef, vec in terms:
            if vec.macs is None:
                raise ConfigError("authenticated mode requires MACed shares")
            macs = [acc + coef * m for acc, m in zip(macs, vec.macs)]
        macs = [(acc + c * alpha) % p for acc, c in zip(macs, const_list)]
        return ShareVector(vals, macs)

    def fold_sum(self, vec: ShareVector, group: int) -> ShareVector:
        """Sum consecutive groups of ``group`` elements."""
        if len(vec) % group:
            raise ArityError(f"vector of {len(vec)} not divisible into groups of {group}")
        p = self.field.p
        vals = [sum(vec.values[i:i + group]) % p for i in range(0, len(vec), group)]
        if vec.macs is None:
            return ShareVector(vals)
        macs = [sum(vec.macs[i:i + group]) % p for i in range(0, len(vec), group)]
        return ShareVector(vals, macs)

    def fold_weighted(self, vec: ShareVector, weights: Sequence[int]) -> ShareVector:
        """Per group of len(weights) elements: sum(w_j * v_j)."""
        g = len(weights)
        if len(vec) % g:
            raise ArityError(f"vector of {len(vec)} not divisible into groups of {g}")
        p = self.field.p
        vals = [
            sum(w * v for w, v in zip(weights, vec.values[i:i + g])) % p
            for i in range(0, len(vec), g)
        ]
        if vec.macs is None:
            return ShareVector(vals)
        macs = [
            sum(w * m for w, m in zip(weights, vec.macs[i:i + g])) % p
            for i in range(0, len(vec), g)
        ]
        return ShareVector(vals, macs)

    # -- interactive primitives ----------------------------------------------

    def open_vector(self, shares: ShareVector) -> list[int]:
        """Open a batch in one round; values land in the MAC log."""
        self.round += 1
        f = self.field
        payload = _ROUND.pack(self.round) + f.encode_many(shares.values)
        self.transport.send(MessageType.OPEN_BATCH, payload)
        reply = self._expect(MessageType.OPEN_BATCH)
        (their_round,) = _ROUND.unpack_from(reply)
        if their_round != self.round:
            raise DesyncAbort(f"open at round {self.round}, peer at {their_round}")
        theirs = f.decode_many(reply[_ROUND.size:])
        if len(theirs) != len(shares):
            raise DesyncAbort(
                f"open batch size mismatch: ours {len(shares)}, theirs {len(theirs)}"
            )
        p = f.p
        opened = [(a + b) % p for a, b in zip(shares.values, theirs)]
        macs = shares.macs if shares.macs is not None else [None] * len(opened)
        self.opened_log.extend(zip(opened, macs))
        return opened

    def mul_vector(self, x: ShareVector, y: ShareVector) -> ShareVector:
        """Batched Beaver multiplication: one opening round, one triple per
        element."""
        if len(x) != len(y):
            raise ArityError(f"mul operands differ: {len(x)} vs {len(y)}")
        k = len(x)
        if k == 0:
            return ShareVector([], [] if self.protocol.authenticated else None)
        a, b, c = self.store.consume_triples(k)
        d_sh = self.affine([(1, x), (-1, a)])
        e_sh = self.affine([(1, y), (-1, b)])
        opened = self.open_vector(concat([d_sh, e_sh]))
        d, e = opened[:k], opened[k:]
        p = self.field.p
        if self.party_id == 0:
            vals = [
                (cv + dv * bv + ev * av + dv * ev) % p
                for cv, av, bv, dv, ev in zip(c.values, a.values, b.values, d, e)
            ]
        else:
            vals = [
                (cv + dv * bv + ev * av) % p
                for cv, av, bv, dv, ev in zip(c.values, a.values, b.values, d, e)
            ]
        if not self.protocol.authenticated:
            return ShareVector(vals)
        alpha = self.alpha_share
        macs = [
            (cm + dv * bm + ev * am + dv * ev * alpha) % p
            for cm, am, bm, dv, ev in zip(c.macs, a.macs, b.macs, d, e)
        ]
        return ShareVector(vals, macs)

    def xor_vector(self, x: ShareVector, y: ShareVector) -> ShareVector:
        """Elementwise XOR of shared bits: x + y - 2xy; one triple each."""
        prod = self.mul_vector(x, y)
        return self.affine([(1, x), (1, y), (-2, prod)])

    def hamming_fold(self, x: ShareVector, y: ShareVector, n: int) -> ShareVector:
        """XOR two flattened bit batches and sum each n-bit group: the
        Hamming distance of every group pair, all in one opening round."""
        return self.fold_sum(self.xor_vector(x, y), n)

    def bit_lt_public_vector(
        self, xs: Sequence[int], rbits: ShareVector, ell: int
    ) -> ShareVector:
        """For each record i: share of [x_i < r_i], where x_i is public and
        r_i is the integer with shared bits rbits[i*ell:(i+1)*ell] (LSB
        first). Prefix-OR from the MSB locates the highest differing bit;
        the answer is that bit of r. Costs 2*ell-1 triples per record."""
        d_count = len(xs)
        if len(rbits) != d_count * ell:
            raise ArityError(f"need {d_count * ell} bit shares, got {len(rbits)}")
        p = self.field.p
        authenticated = self.protocol.authenticated
        alpha = self.alpha_share

        # d_j = x_j XOR r_j, local since x is public:
        # x_j = 0 -> r_j;  x_j = 1 -> 1 - r_j
        dvals = list(rbits.values)
        dmacs = list(rbits.macs) if authenticated else None
        for i, x in enumerate(xs):
            base = i * ell
            for j in range(ell):
                if (x >> j) & 1:
                    k = base + j
                    dvals[k] = ((1 if self.party_id == 0 else 0) - dvals[k]) % p
                    if authenticated:
                        dmacs[k] = (alpha - dmacs[k]) % p

        def column(flat_vals, flat_macs, j):
            vals = flat_vals[j::ell]
            return ShareVector(vals, flat_macs[j::ell] if authenticated else None)

        # prefix-OR down from the MSB, one multiplication layer per level
        f = column(dvals, dmacs, ell - 1)
        f_cols = {ell - 1: f}
        for j in range(ell - 2, -1, -1):
            dj = column(dvals, dmacs, j)
            prod = self.mul_vector(f, dj)
            f = self.affine([(1, f), (1, dj), (-1, prod)])
            f_cols[j] = f

        # w_j = f_j - f_{j+1} marks the highest differing position
        w_cols = {ell - 1: f_cols[ell - 1]}
        for j in range(ell - 1):
            w_cols[j] = self.affine([(1, f_cols[j]), (-1, f_cols[j + 1])])

        # record-major flatten of w, then one batched product with r bits
        wvals = [w_cols[j].values[i] for i in range(d_count) for j in range(ell)]
        wmacs = (
            [w_cols[j].macs[i] for i in range(d_count) for j in range(ell)]
            if authenticated
            else None
        )
        prods = self.mul_vector(ShareVector(wvals, wmacs), rbits)
        return self.fold_sum(prods, ell)

    def lt_threshold_vector(
        self, h: ShareVector, bound: int, ell: int, kappa: int
    ) -> ShareVector:
        """Share of [h_i < bound] for each i, where 0 <= h_i <= N < 2^ell and
        0 <= bound <= N. Masked opening: only z_i = h_i - bound + 2^ell + r_i
        + 2^ell*r'_i is revealed, statistically independent of h_i up to
        2^-kappa. Costs ell+kappa bits and 2*ell-1 triples per element."""
        two_ell = 1 << ell
        if not 0 <= bound < two_ell:
            raise ConfigError(f"threshold {bound} outside [0, 2^{ell})")
        if self.field.p <= (1 << (ell + kappa + 2)):
            raise ConfigError(
                f"modulus {self.field.p} too small for ell={ell}, kappa={kappa}"
            )
        d_count = len(h)
        if d_count == 0:
            return ShareVector([], [] if self.protocol.authenticated else None)

        # a_i = h_i - bound + 2^ell: bit ell of a_i is [h_i >= bound]
        a = self.affine([(1, h)], consts=two_ell - bound)

        g = ell + kappa
        chunk = self.store.consume_bits(d_count * g)
        rb_idx = [i * g + j for i in range(d_count) for j in range(ell)]
        rp_idx = [i * g + ell + j for i in range(d_count) for j in range(kappa)]
        rbits = ShareVector(
            [chunk.values[k] for k in rb_idx],
            [chunk.macs[k] for k in rb_idx] if chunk.macs is not None else None,
        )
        rpbits = ShareVector(
            [chunk.values[k] for k in rp_idx],
            [chunk.macs[k] for k in rp_idx] if chunk.macs is not None else None,
        )
        pow2_ell = [1 << j for j in range(ell)]
        pow2_kappa = [1 << j for j in range(kappa)]
        r = self.fold_weighted(rbits, pow2_ell)
        rp = self.fold_weighted(rpbits, pow2_kappa)

        z_sh = self.affine([(1, a), (1, r), (two_ell, rp)])
        z = self.open_vector(z_sh)
        z_low = [v % two_ell for v in z]

        # borrow u_i = [z_low_i < r_i]; then a_i mod 2^ell = z_low - r + 2^ell*u
        u = self.bit_lt_public_vector(z_low, rbits, ell)
        a_mod = self.affine([(-1, r), (two_ell, u)], consts=z_low)

        # [h < bound] = 1 - (a - a_mod) / 2^ell
        inv = self.field.inv(two_ell)
        return self.affine([(-inv % self.field.p, a), (inv, a_mod)], consts=1)

    # -- MAC verification ------------------------------------------------------

    def _commit_exchange(self, payload: bytes) -> bytes:
        """Commit-then-reveal swap of fixed-length payloads; returns the
        peer's payload. A bad opening is treated as tampering."""
        nonce = self._rng.randbytes(32)
        self.round += 1
        self.transport.send(MessageType.COMMIT, _sha256(nonce + payload))
        their_digest = self._expect(MessageType.COMMIT)
        self.round += 1
        self.transport.send(MessageType.REVEAL, nonce + payload)
        their_reveal = self._expect(MessageType.REVEAL)
        if _sha256(their_reveal) != their_digest:
            raise MacAbort("peer's reveal does not match its commitment")
        return their_reveal[32:]

    def mac_check(self) -> None:
        """Batched verification of every value opened since the last check.

        Joint coin flip picks random coefficients rho_k; each party commits
        to sigma_i = sum(rho_k * (mac_k - alpha_i * opened_k)) and the sum
        must vanish. No-op in semi-honest mode; vacuous on an empty log.
        """
        if not self.protocol.authenticated:
            return
        if not self.opened_log:
            return
        seed_mine = self._rng.randbytes(32)
        seed_theirs = self._commit_exchange(seed_mine)
        seed = bytes(x ^ y for x, y in zip(seed_mine, seed_theirs))

        p = self.field.p
        alpha = self.alpha_share
        sigma = 0
        for k, (opened, mac) in enumerate(self.opened_log):
            rho = int.from_bytes(_sha256(seed + k.to_bytes(8, "big")), "big") % p
            sigma += rho * (mac - alpha * opened)
        sigma %= p

        sigma_theirs = self.field.decode(self._commit_exchange(self.field.encode(sigma)))
        self.opened_log.clear()
        if (sigma + sigma_theirs) % p != 0:
            raise MacAbort("MAC check failed: an opened value was inconsistent")
