"""Trusted dealer standing in for the cryptographic offline phase.

The dealer is a separate offline principal that is assumed honest: it
generates Beaver triples, shared random bits, and client input masks, and
writes one store file per party plus a plaintext mask file for the client.
This trust assumption is weaker than a real malicious-secure offline phase
and is called out in the README as a deliberate substitution.

Store file layout (all multi-byte header integers big-endian, field elements
16-byte little-endian):

    16s  magic "MPCCDSS-PREPROC\\0"
    u16  version = 1
    16s  session id
    u8   mode (0 semi-honest, 1 authenticated)
    16s  modulus
    u64  triple count
    u64  bit count
    u64  mask count
    16s  alpha share          -- authenticated mode only
    ...  triples (a,b,c), bits, masks; each share as value[,mac]

The client mask file uses its own magic and holds plaintext mask values r.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

from .config import ProtocolConfig
from .errors import ConfigError, DealError, ModeMismatch, OutOfPreprocessing
from .field import ENCODED_SIZE, Field
from .sharing import GlobalMacKey, ShareVector

MAGIC_STORE = b"MPCCDSS-PREPROC\x00"
MAGIC_MASKS = b"MPCCDSS-MASKS\x00\x00\x00"
STORE_VERSION = 1

MODE_BYTE = {"semi-honest": 0, "authenticated": 1}
MODE_FROM_BYTE = {v: k for k, v in MODE_BYTE.items()}

_HEADER = struct.Struct(">16sH16sB16sQQQ")

_GEN_CHUNK = 1 << 15

PARTY_STORE_NAMES = ("party0.preproc", "party1.preproc")
CLIENT_MASKS_NAME = "client.masks"

TRIPLES = "triples"
BITS = "bits"
MASKS = "masks"
CATEGORIES = (TRIPLES, BITS, MASKS)


@dataclass(frozen=True)
class Budget:
    """Exact preprocessing consumption of one query over D records."""

    triples: int
    bits: int


def budget_for_query(d: int, n_bits: int, n_treatments: int, ell: int, kappa: int) -> Budget:
    """Per query: each record costs N triples (Hamming XORs), 2*ell-1 triples
    and ell+kappa bits (threshold comparison), and 2T triples (aggregation)."""
    if d < 0 or n_bits < 1 or n_treatments < 1 or kappa < 1:
        raise ConfigError("budget arguments out of range")
    if ell != n_bits.bit_length():
        raise ConfigError(f"ell must be ceil(log2(N+1)) = {n_bits.bit_length()}, got {ell}")
    return Budget(
        triples=d * (n_bits + (2 * ell - 1) + 2 * n_treatments),
        bits=d * (ell + kappa),
    )


@dataclass(frozen=True)
class Counts:
    triples: int = 0
    bits: int = 0
    masks: int = 0

    def __post_init__(self):
        if min(self.triples, self.bits, self.masks) < 0:
            raise ConfigError("preprocessing counts must be non-negative")


@dataclass(frozen=True)
class DealResult:
    session_id: bytes
    party_paths: tuple[Path, Path]
    client_masks_path: Path
    counts: Counts


def _encode_share(value: int, mac: int | None) -> bytes:
    out = value.to_bytes(ENCODED_SIZE, "little")
    if mac is not None:
        out += mac.to_bytes(ENCODED_SIZE, "little")
    return out


def _write_header(fh: BinaryIO, magic: bytes, session_id: bytes, mode: str,
                  p: int, counts: tuple[int, int, int]) -> None:
    fh.write(_HEADER.pack(magic, STORE_VERSION, session_id, MODE_BYTE[mode],
                          p.to_bytes(16, "big"), *counts))


def _random_bits(rng: random.Random, count: int) -> list[int]:
    acc = int.from_bytes(rng.randbytes((count + 7) // 8), "little")
    return [(acc >> i) & 1 for i in range(count)]


def deal_preprocessing(
    counts: Counts,
    protocol: ProtocolConfig,
    rng: random.Random,
    out_dir: str | Path,
    session_id: bytes | None = None,
) -> DealResult:
    """Generate and persist all preprocessing for one session.

    Writes records in a streaming fashion so memory stays bounded even for
    multi-million-triple batches.
    """
    out = Path(out_dir)
    f = protocol.field
    p = f.p
    if session_id is None:
        session_id = rng.randbytes(16)
    if len(session_id) != 16:
        raise ConfigError("session id must be 16 bytes")
    key = GlobalMacKey.generate(f, rng) if protocol.authenticated else None

    paths = tuple(out / name for name in PARTY_STORE_NAMES)
    masks_path = out / CLIENT_MASKS_NAME
    try:
        fhs = [open(path, "wb") for path in paths]
        mh = open(masks_path, "wb")
    except OSError as exc:
        raise DealError(f"cannot create store files: {exc}") from exc

    triad = (counts.triples, counts.bits, counts.masks)
    with fhs[0], fhs[1], mh:
        for i, fh in enumerate(fhs):
            _write_header(fh, MAGIC_STORE, session_id, protocol.mode, p, triad)
            if key is not None:
                fh.write(key.shares[i].to_bytes(ENCODED_SIZE, "little"))
        _write_header(mh, MAGIC_MASKS, session_id, protocol.mode, p, (0, 0, counts.masks))

        def emit(secrets_groups: list[list[int]]) -> None:
            """Share each parallel group of secrets and append one record per
            index to both party files (groups interleave within a record)."""
            m = len(secrets_groups[0])
            cols0: list[list[bytes]] = []
            cols1: list[list[bytes]] = []
            for group in secrets_groups:
                v0s = f.sample_many(rng, m)
                if key is None:
                    cols0.append([_encode_share(v0, None) for v0 in v0s])
                    cols1.append(
                        [_encode_share((x - v0) % p, None) for x, v0 in zip(group, v0s)]
                    )
                else:
                    alpha = key.alpha
                    m0s = f.sample_many(rng, m)
                    cols0.append([_encode_share(v0, m0) for v0, m0 in zip(v0s, m0s)])
                    cols1.append(
                        [
                            _encode_share((x - v0) % p, (alpha * x - m0) % p)
                            for x, v0, m0 in zip(group, v0s, m0s)
                        ]
                    )
            for fh, cols in ((fhs[0], cols0), (fhs[1], cols1)):
                fh.write(b"".join(b"".join(rec) for rec in zip(*cols)))

        # triples
        done = 0
        while done < counts.triples:
            m = min(_GEN_CHUNK, counts.triples - done)
            a = f.sample_many(rng, m)
            b = f.sample_many(rng, m)
            c = [x * y % p for x, y in zip(a, b)]
            emit([a, b, c])
            done += m

        # shared random bits
        done = 0
        while done < counts.bits:
            m = min(_GEN_CHUNK, counts.bits - done)
            emit([_random_bits(rng, m)])
            done += m

        # input masks: shares to the parties, plaintext to the client
        done = 0
        while done < counts.masks:
            m = min(_GEN_CHUNK, counts.masks - done)
            r = f.sample_many(rng, m)
            emit([r])
            mh.write(b"".join(v.to_bytes(ENCODED_SIZE, "little") for v in r))
            done += m

    return DealResult(session_id, paths, masks_path, counts)


def _read_header(data: bytes, magic: bytes, path: Path) -> tuple[bytes, str, int, tuple[int, int, int], int]:
    if len(data) < _HEADER.size:
        raise DealError(f"{path}: truncated header")
    got_magic, version, session_id, mode_byte, modulus, nt, nb, nm = _HEADER.unpack_from(data)
    if got_magic != magic:
        raise DealError(f"{path}: bad magic")
    if version != STORE_VERSION:
        raise DealError(f"{path}: unsupported version {version}")
    if mode_byte not in MODE_FROM_BYTE:
        raise DealError(f"{path}: unknown mode byte {mode_byte}")
    return session_id, MODE_FROM_BYTE[mode_byte], int.from_bytes(modulus, "big"), (nt, nb, nm), _HEADER.size


def _split_columns(flat: list[int], stride: int, authenticated: bool) -> list[ShareVector]:
    """De-interleave a decoded section into per-position ShareVectors."""
    step = stride * (2 if authenticated else 1)
    out = []
    for j in range(stride):
        if authenticated:
            out.append(ShareVector(flat[2 * j::step], flat[2 * j + 1::step]))
        else:
            out.append(ShareVector(flat[j::step]))
    return out


class TripleStore:
    """One party's preprocessing, consumed strictly in order.

    The cursor for each category only advances; sequential consumes of
    k1 then k2 return the same elements as one consume of k1+k2.
    """

    def __init__(self, session_id: bytes, mode: str, field: Field,
                 alpha_share: int | None,
                 triples: tuple[ShareVector, ShareVector, ShareVector],
                 bits: ShareVector, masks: ShareVector, path: Path | None = None):
        self.session_id = session_id
        self.mode = mode
        self.field = field
        self.alpha_share = alpha_share
        self._triples = triples
        self._bits = bits
        self._masks = masks
        self.path = path
        self._cursor = {TRIPLES: 0, BITS: 0, MASKS: 0}
        self._total = {
            TRIPLES: len(triples[0]),
            BITS: len(bits),
            MASKS: len(masks),
        }

    @classmethod
    def load(cls, path: str | Path, expected: ProtocolConfig | None = None) -> "TripleStore":
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise DealError(f"cannot read store {path}: {exc}") from exc
        session_id, mode, p, (nt, nb, nm), off = _read_header(data, MAGIC_STORE, path)
        field = Field(p)
        authenticated = mode == "authenticated"
        alpha_share = None
        if authenticated:
            if len(data) < off + ENCODED_SIZE:
                raise DealError(f"{path}: truncated alpha share")
            alpha_share = field.decode(data[off:off + ENCODED_SIZE])
            off += ENCODED_SIZE
        esize = ENCODED_SIZE * (2 if authenticated else 1)
        need = off + esize * (3 * nt + nb + nm)
        if len(data) != need:
            raise DealError(f"{path}: expected {need} bytes, found {len(data)}")

        def section(count: int, stride: int) -> list[ShareVector]:
            nonlocal off
            size = count * stride * esize
            flat = field.decode_many(data[off:off + size])
            off += size
            return _split_columns(flat, stride, authenticated)

        a, b, c = section(nt, 3)
        (bits,) = section(nb, 1)
        (masks,) = section(nm, 1)
        store = cls(session_id, mode, field, alpha_share, (a, b, c), bits, masks, path)
        if expected is not None:
            store.verify_against(expected)
        return store

    def verify_against(self, protocol: ProtocolConfig) -> None:
        if self.field.p != protocol.field.p:
            raise ConfigError(
                f"store modulus {self.field.p} differs from configured {protocol.field.p}"
            )
        if self.mode != protocol.mode:
            raise ModeMismatch(f"store mode {self.mode!r} vs configured {protocol.mode!r}")

    def remaining(self, category: str) -> int:
        return self._total[category] - self._cursor[category]

    @property
    def consumed_counts(self) -> dict[str, int]:
        return dict(self._cursor)

    def _advance(self, category: str, k: int) -> tuple[int, int]:
        if k < 0:
            raise ConfigError("cannot consume a negative count")
        start = self._cursor[category]
        if start + k > self._total[category]:
            raise OutOfPreprocessing(
                f"{category}: requested {k}, only {self._total[category] - start} left"
            )
        self._cursor[category] = start + k
        return start, start + k

    def consume_triples(self, k: int) -> tuple[ShareVector, ShareVector, ShareVector]:
        i, j = self._advance(TRIPLES, k)
        a, b, c = self._triples
        return a.slice(i, j), b.slice(i, j), c.slice(i, j)

    def consume_bits(self, k: int) -> ShareVector:
        i, j = self._advance(BITS, k)
        return self._bits.slice(i, j)

    def consume_masks(self, k: int) -> ShareVector:
        i, j = self._advance(MASKS, k)
        return self._masks.slice(i, j)


class ClientMaskFile:
    """The client's plaintext mask values, consumed in dealer order."""

    def __init__(self, session_id: bytes, mode: str, field: Field, values: list[int]):
        self.session_id = session_id
        self.mode = mode
        self.field = field
        self._values = values
        self._cursor = 0

    @classmethod
    def load(cls, path: str | Path) -> "ClientMaskFile":
        """Load masks; a ``<path>.cursor`` sidecar (written after successful
        use) records how many were already spent across CLI invocations."""
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise DealError(f"cannot read mask file {path}: {exc}") from exc
        session_id, mode, p, (_, _, nm), off = _read_header(data, MAGIC_MASKS, path)
        field = Field(p)
        if len(data) != off + nm * ENCODED_SIZE:
            raise DealError(f"{path}: truncated mask section")
        values = field.decode_many(data[off:])
        masks = cls(session_id, mode, field, values)
        sidecar = cls._cursor_path(path)
        if sidecar.exists():
            try:
                masks._cursor = int(sidecar.read_text().strip())
            except (OSError, ValueError) as exc:
                raise DealError(f"{sidecar}: unreadable cursor sidecar: {exc}") from exc
            if not 0 <= masks._cursor <= len(values):
                raise DealError(f"{sidecar}: cursor {masks._cursor} out of range")
        return masks

    @staticmethod
    def _cursor_path(path: str | Path) -> Path:
        return Path(str(path) + ".cursor")

    def persist_cursor(self, path: str | Path) -> None:
        self._cursor_path(path).write_text(f"{self._cursor}\n")

    @property
    def cursor(self) -> int:
        return self._cursor

    def remaining(self) -> int:
        return len(self._values) - self._cursor

    def consume(self, k: int) -> list[int]:
        if self._cursor + k > len(self._values):
            raise OutOfPreprocessing(
                f"masks: requested {k}, only {len(self._values) - self._cursor} left"
            )
        out = self._values[self._cursor:self._cursor + k]
        self._cursor += k
        return out


def main(argv: list[str] | None = None) -> int:
    import argparse

    from .config import load_config

    parser = argparse.ArgumentParser(
        prog="dealer",
        description="Generate preprocessing (Beaver triples, shared bits, "
        "input masks) for one session.",
    )
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--triples", type=int, default=0)
    parser.add_argument("--bits", type=int, default=0)
    parser.add_argument("--masks", type=int, default=0)
    parser.add_argument("--config", required=True)
    args = parser.parse_args(argv)

    cfg = load_config(args.config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = Counts(triples=args.triples, bits=args.bits, masks=args.masks)
    result = deal_preprocessing(counts, cfg.protocol, random.SystemRandom(), out_dir)
    print(f"session {result.session_id.hex()}")
    for path in result.party_paths:
        print(f"wrote {path}")
    print(f"wrote {result.client_masks_path}")
    print(
        f"counts: {counts.triples} triples, {counts.bits} bits, {counts.masks} masks"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
