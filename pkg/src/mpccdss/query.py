"""The medical query layer: patient records, the plaintext reference
computation, the secure per-treatment aggregation, and client-side result
reconstruction.

A record is (genotype bits, treatment id, time-to-treatment-failure). A
query asks: per treatment, what is the average TTF over records whose
genotype lies within Hamming distance < B of the query genotype? The secure
path computes, for every treatment, shares of (sum of TTF, count) over the
matching records; the client reconstructs and derives averages.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .config import TTF_MAX
from .engine import ProtocolSession
from .errors import (
    ArityError,
    IntegrityError,
    ProtocolError,
    ValidationError,
)
from .field import ENCODED_SIZE, Field
from .sharing import GlobalMacKey, ShareVector, concat, share_vector

QUERY_ID_SIZE = 16


# ---------------------------------------------------------------------------
# plaintext side


@dataclass(frozen=True)
class PatientRecordPlain:
    """One clear-text record: genotype bit string, treatment, TTF in days."""

    genotype: str
    treatment_id: int
    ttf_days: int

    def validate(self, n_bits: int, n_treatments: int) -> None:
        if len(self.genotype) != n_bits:
            raise ValidationError(
                f"genotype length {len(self.genotype)}, expected {n_bits}"
            )
        if any(ch not in "01" for ch in self.genotype):
            raise ValidationError("genotype must consist of 0/1 characters")
        if not 0 <= self.treatment_id < n_treatments:
            raise ValidationError(
                f"treatment_id {self.treatment_id} outside [0, {n_treatments})"
            )
        if not 0 <= self.ttf_days <= TTF_MAX:
            raise ValidationError(
                f"ttf_days {self.ttf_days} outside [0, {TTF_MAX}]"
            )


def validate_genotype(genotype: str, n_bits: int) -> None:
    if len(genotype) != n_bits or any(ch not in "01" for ch in genotype):
        raise ValidationError(
            f"genotype must be {n_bits} characters of 0/1, got {genotype!r}"
        )


def encode_genotype(positions: Sequence[int], n_bits: int) -> str:
    """Mutation position list to indicator bit string."""
    bits = ["0"] * n_bits
    for pos in positions:
        if not 0 <= pos < n_bits:
            raise ValidationError(f"mutation position {pos} outside [0, {n_bits})")
        bits[pos] = "1"
    return "".join(bits)


def hamming(a: str, b: str) -> int:
    if len(a) != len(b):
        raise ValidationError("genotype lengths differ")
    return sum(x != y for x, y in zip(a, b))


@dataclass(frozen=True)
class QueryResultPlain:
    """Per-treatment aggregates; averages are derived, absent on count 0."""

    counts: tuple[int, ...]
    sums: tuple[int, ...]

    def __post_init__(self):
        if len(self.counts) != len(self.sums):
            raise ArityError("counts and sums differ in length")

    @property
    def n_treatments(self) -> int:
        return len(self.counts)

    def avg(self, t: int) -> Fraction | None:
        if self.counts[t] == 0:
            return None
        return Fraction(self.sums[t], self.counts[t])


def plaintext_oracle(
    db: Sequence[PatientRecordPlain], q: str, bound: int, n_treatments: int
) -> QueryResultPlain:
    """Reference computation, no cryptography: per treatment, count and
    TTF-sum over records with hamming(q, genotype) < bound."""
    counts = [0] * n_treatments
    sums = [0] * n_treatments
    for rec in db:
        rec.validate(len(q), n_treatments)
        if hamming(q, rec.genotype) < bound:
            counts[rec.treatment_id] += 1
            sums[rec.treatment_id] += rec.ttf_days
    return QueryResultPlain(tuple(counts), tuple(sums))


def rank_treatments(result: QueryResultPlain) -> list[int]:
    """Longest average TTF first; no-data treatments last; ties by id."""
    def key(t: int):
        avg = result.avg(t)
        return (1, Fraction(0), t) if avg is None else (0, -avg, t)

    return sorted(range(result.n_treatments), key=key)


def format_avg(avg: Fraction | None) -> str:
    """Exact rendering to one decimal place ('no data' when absent)."""
    if avg is None:
        return "no data"
    tenths = round(10 * avg)
    return f"{tenths // 10}.{tenths % 10}"


# ---------------------------------------------------------------------------
# shared records


@dataclass(frozen=True)
class SharedPatientRecord:
    """One party's shares of a record: genotype bits, treatment one-hot,
    TTF-scaled one-hot."""

    genotype: ShareVector
    onehot: ShareVector
    ttf_onehot: ShareVector

    def validate_arity(self, n_bits: int, n_treatments: int) -> None:
        if len(self.genotype) != n_bits:
            raise ArityError(f"genotype arity {len(self.genotype)}, expected {n_bits}")
        if len(self.onehot) != n_treatments or len(self.ttf_onehot) != n_treatments:
            raise ArityError(
                f"one-hot arity ({len(self.onehot)}, {len(self.ttf_onehot)}), "
                f"expected {n_treatments}"
            )


def record_to_field_vector(rec: PatientRecordPlain, n_treatments: int) -> list[int]:
    """Clear-text expansion: N genotype bits, T one-hot, T ttf*one-hot."""
    onehot = [1 if t == rec.treatment_id else 0 for t in range(n_treatments)]
    ttf_onehot = [rec.ttf_days * b for b in onehot]
    return [int(ch) for ch in rec.genotype] + onehot + ttf_onehot


def split_record_vector(
    vec: ShareVector, n_bits: int, n_treatments: int
) -> SharedPatientRecord:
    if len(vec) != n_bits + 2 * n_treatments:
        raise ArityError(
            f"record vector length {len(vec)}, expected {n_bits + 2 * n_treatments}"
        )
    return SharedPatientRecord(
        genotype=vec.slice(0, n_bits),
        onehot=vec.slice(n_bits, n_bits + n_treatments),
        ttf_onehot=vec.slice(n_bits + n_treatments, len(vec)),
    )


def share_record(
    field: Field,
    rec: PatientRecordPlain,
    n_treatments: int,
    rng: random.Random,
    key: GlobalMacKey | None = None,
) -> tuple[SharedPatientRecord, SharedPatientRecord]:
    """Client-side sharing of one record (dealer-side when a key is given)."""
    v0, v1 = share_vector(field, record_to_field_vector(rec, n_treatments), rng, key)
    n = len(rec.genotype)
    return (
        split_record_vector(v0, n, n_treatments),
        split_record_vector(v1, n, n_treatments),
    )


def shares_from_masks(
    field: Field,
    party_id: int,
    alpha_share: int | None,
    mask_shares: ShareVector,
    deltas: Sequence[int],
) -> ShareVector:
    """Party-side input derivation from dealer masks: the client published
    delta = x - r, so [x] = [r] + delta with party 0 absorbing delta."""
    if len(mask_shares) != len(deltas):
        raise ArityError(f"{len(mask_shares)} mask shares vs {len(deltas)} deltas")
    p = field.p
    if party_id == 0:
        vals = [(m + d) % p for m, d in zip(mask_shares.values, deltas)]
    else:
        vals = list(mask_shares.values)
    if mask_shares.macs is None:
        return ShareVector(vals)
    if alpha_share is None:
        raise ProtocolError("MACed masks require an alpha share")
    macs = [(m + d * alpha_share) % p for m, d in zip(mask_shares.macs, deltas)]
    return ShareVector(vals, macs)


# ---------------------------------------------------------------------------
# the secure query


def evaluate_query(
    session: ProtocolSession,
    records: Sequence[SharedPatientRecord],
    query_genotype: ShareVector,
    bound: int,
    ell: int,
    kappa: int,
    n_treatments: int,
) -> tuple[ShareVector, ShareVector]:
    """One party's half of the joint query; returns shares of per-treatment
    (counts, sums).

    Layer structure, each layer one opening round regardless of D:
      1. all D*N genotype XORs, folded into D Hamming distances;
      2. the D threshold comparisons (1 + ell rounds internally);
      3. all 2*D*T aggregation products s_i*onehot and s_i*ttf_onehot.
    """
    d_count = len(records)
    n_bits = len(query_genotype)
    authenticated = session.protocol.authenticated
    if d_count == 0:
        zeros = ShareVector(
            [0] * n_treatments, [0] * n_treatments if authenticated else None
        )
        return zeros, zeros

    for rec in records:
        rec.validate_arity(n_bits, n_treatments)

    tiled_q = ShareVector(
        query_genotype.values * d_count,
        query_genotype.macs * d_count if query_genotype.macs is not None else None,
    )
    flat_geno = concat([rec.genotype for rec in records])
    h = session.hamming_fold(tiled_q, flat_geno, n_bits)

    s = session.lt_threshold_vector(h, bound, ell, kappa)

    # similarity flags against both one-hot vectors in a single batch
    s_rep_vals = [v for v in s.values for _ in range(n_treatments)]
    s_rep_macs = (
        [m for m in s.macs for _ in range(n_treatments)] if s.macs is not None else None
    )
    s_rep = ShareVector(s_rep_vals, s_rep_macs)
    onehot_flat = concat([rec.onehot for rec in records])
    ttf_flat = concat([rec.ttf_onehot for rec in records])
    prods = session.mul_vector(
        concat([s_rep, s_rep]), concat([onehot_flat, ttf_flat])
    )

    p = session.field.p
    dt = d_count * n_treatments

    def fold_by_treatment(vals: list[int], base: int) -> list[int]:
        return [
            sum(vals[base + i * n_treatments + t] for i in range(d_count)) % p
            for t in range(n_treatments)
        ]

    counts = ShareVector(
        fold_by_treatment(prods.values, 0),
        fold_by_treatment(prods.macs, 0) if prods.macs is not None else None,
    )
    sums = ShareVector(
        fold_by_treatment(prods.values, dt),
        fold_by_treatment(prods.macs, dt) if prods.macs is not None else None,
    )
    return counts, sums


# ---------------------------------------------------------------------------
# result shares and client-side reconstruction

_RESULT_HEAD = struct.Struct(">16sI")


@dataclass(frozen=True)
class ResultShare:
    """One party's response to a query: shares of counts and sums plus the
    record count the aggregates ranged over."""

    query_id: bytes
    record_count: int
    counts: list[int]
    sums: list[int]


def encode_result_share(field: Field, rs: ResultShare) -> bytes:
    return (
        _RESULT_HEAD.pack(rs.query_id, rs.record_count)
        + field.encode_many(rs.counts)
        + field.encode_many(rs.sums)
    )


def decode_result_share(field: Field, payload: bytes, n_treatments: int) -> ResultShare:
    if len(payload) != _RESULT_HEAD.size + 2 * n_treatments * ENCODED_SIZE:
        raise ProtocolError(f"result share payload has {len(payload)} bytes")
    query_id, record_count = _RESULT_HEAD.unpack_from(payload)
    flat = field.decode_many(payload[_RESULT_HEAD.size:])
    return ResultShare(query_id, record_count, flat[:n_treatments], flat[n_treatments:])


def finalize_result(field: Field, rs0: ResultShare, rs1: ResultShare) -> QueryResultPlain:
    """Client-side reconstruction with sanity bounds: counts cannot exceed
    the record count, sums cannot exceed record_count * TTF_MAX."""
    if rs0.query_id != rs1.query_id:
        raise ProtocolError("result shares answer different queries")
    if rs0.record_count != rs1.record_count:
        raise ProtocolError(
            f"parties disagree on record count: {rs0.record_count} vs {rs1.record_count}"
        )
    if len(rs0.counts) != len(rs1.counts) or len(rs0.sums) != len(rs1.sums):
        raise ProtocolError("result share arity mismatch")
    d_count = rs0.record_count
    p = field.p
    counts = [(a + b) % p for a, b in zip(rs0.counts, rs1.counts)]
    sums = [(a + b) % p for a, b in zip(rs0.sums, rs1.sums)]
    for t, (c, s) in enumerate(zip(counts, sums)):
        if c > d_count:
            raise IntegrityError(f"treatment {t}: count {c} exceeds record count {d_count}")
        if s > d_count * TTF_MAX:
            raise IntegrityError(f"treatment {t}: TTF sum {s} exceeds bound")
        if c == 0 and s != 0:
            raise IntegrityError(f"treatment {t}: nonzero TTF sum with zero count")
    return QueryResultPlain(tuple(counts), tuple(sums))


# ---------------------------------------------------------------------------
# client -> party payloads

INPUT_DIRECT = 0   # body carries this party's shares (semi-honest)
INPUT_MASKED = 1   # body carries public deltas against dealer masks

_INGEST_HEAD = struct.Struct(">16sBIQ")
_QUERY_HEAD = struct.Struct(">16sBQ")
_ACK = struct.Struct(">16sQ")


@dataclass(frozen=True)
class IngestBatch:
    batch_id: bytes
    kind: int
    mask_start: int
    vectors: list[list[int]]  # one flattened (N+2T)-element vector per record


def encode_ingest_batch(field: Field, batch: IngestBatch) -> bytes:
    body = b"".join(field.encode_many(vec) for vec in batch.vectors)
    return _INGEST_HEAD.pack(
        batch.batch_id, batch.kind, len(batch.vectors), batch.mask_start
    ) + body


def decode_ingest_batch(
    field: Field, payload: bytes, n_bits: int, n_treatments: int
) -> IngestBatch:
    if len(payload) < _INGEST_HEAD.size:
        raise ProtocolError("ingest batch payload truncated")
    batch_id, kind, n_records, mask_start = _INGEST_HEAD.unpack_from(payload)
    if kind not in (INPUT_DIRECT, INPUT_MASKED):
        raise ProtocolError(f"unknown ingest input kind {kind}")
    width = n_bits + 2 * n_treatments
    flat = field.decode_many(payload[_INGEST_HEAD.size:])
    if len(flat) != n_records * width:
        raise ProtocolError(
            f"ingest batch carries {len(flat)} elements, expected {n_records * width}"
        )
    vectors = [flat[i * width:(i + 1) * width] for i in range(n_records)]
    return IngestBatch(batch_id, kind, mask_start, vectors)


def encode_ingest_ack(batch_id: bytes, record_count: int) -> bytes:
    return _ACK.pack(batch_id, record_count)


def decode_ingest_ack(payload: bytes) -> tuple[bytes, int]:
    if len(payload) != _ACK.size:
        raise ProtocolError(f"ingest ack payload has {len(payload)} bytes")
    batch_id, count = _ACK.unpack(payload)
    return batch_id, count


@dataclass(frozen=True)
class QuerySubmit:
    query_id: bytes
    kind: int
    mask_start: int
    elements: list[int]  # N genotype shares or deltas


def encode_query_submit(field: Field, qs: QuerySubmit) -> bytes:
    return _QUERY_HEAD.pack(qs.query_id, qs.kind, qs.mask_start) + field.encode_many(
        qs.elements
    )


def decode_query_submit(field: Field, payload: bytes, n_bits: int) -> QuerySubmit:
    if len(payload) != _QUERY_HEAD.size + n_bits * ENCODED_SIZE:
        raise ProtocolError(f"query payload has {len(payload)} bytes")
    query_id, kind, mask_start = _QUERY_HEAD.unpack_from(payload)
    if kind not in (INPUT_DIRECT, INPUT_MASKED):
        raise ProtocolError(f"unknown query input kind {kind}")
    return QuerySubmit(
        query_id, kind, mask_start, field.decode_many(payload[_QUERY_HEAD.size:])
    )


# ---------------------------------------------------------------------------
# rendering


def render_table(result: QueryResultPlain) -> str:
    lines = [f"{'treatment':>9}  {'count':>5}  {'avg_ttf_days':>12}"]
    for t in rank_treatments(result):
        avg = format_avg(result.avg(t))
        lines.append(f"{t:>9}  {result.counts[t]:>5}  {avg:>12}")
    return "\n".join(lines)


def render_csv(result: QueryResultPlain) -> str:
    lines = ["treatment_id,count,sum_ttf,avg_ttf"]
    for t in rank_treatments(result):
        avg = result.avg(t)
        avg_text = "" if avg is None else format_avg(avg)
        lines.append(f"{t},{result.counts[t]},{result.sums[t]},{avg_text}")
    return "\n".join(lines)
