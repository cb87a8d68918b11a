"""The input-party tool: upload patient records as shares, submit genotype
queries, reconstruct and display ranked per-treatment results.

Plaintext never leaves this process: records and query genotypes are split
into additive shares (semi-honest mode) or published only as deltas against
dealer-issued masks (authenticated mode), with one share stream per party.

Exit codes: 0 ok, 2 validation failure, 3 network failure, 4 protocol abort.
"""

from __future__ import annotations

import argparse
import csv
import random
import sys
from pathlib import Path

from .config import SystemConfig, load_config
from .dealer import ClientMaskFile
from .errors import (
    ConfigError,
    ConnectError,
    ConnectionLost,
    HandshakeError,
    IngestError,
    MpcError,
    OutOfPreprocessing,
    ProtocolError,
    QueryTimeout,
    RemoteAbort,
    ValidationError,
)
from .query import (
    INPUT_DIRECT,
    INPUT_MASKED,
    IngestBatch,
    PatientRecordPlain,
    QuerySubmit,
    decode_ingest_ack,
    decode_result_share,
    encode_genotype,
    encode_ingest_batch,
    encode_query_submit,
    finalize_result,
    record_to_field_vector,
    render_csv,
    render_table,
    validate_genotype,
)
from .sharing import share_secret
from .transport import Transport, client_handshake, connect_tcp
from .wire import (
    Hello,
    MessageType,
    MODE_CODE,
    ROLE_CLIENT,
    WILDCARD_SESSION,
    decode_abort,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NETWORK = 3
EXIT_ABORT = 4

INGEST_CHUNK = 5000  # records per INGEST_BATCH frame, bounded by the frame cap

CLIENT_NODE_ID = 2


def read_record_file(path: str | Path, cfg: SystemConfig) -> list[PatientRecordPlain]:
    """Parse and fully validate the CSV before anything touches the network."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        if [h.strip() for h in header] != ["genotype", "treatment_id", "ttf_days"]:
            raise ValidationError(
                f"{path}: header must be genotype,treatment_id,ttf_days"
            )
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise ValidationError(f"{path} line {lineno}: expected 3 fields")
            genotype = row[0].strip()
            try:
                treatment = int(row[1])
                ttf = int(row[2])
            except ValueError:
                raise ValidationError(
                    f"{path} line {lineno}: treatment_id and ttf_days must be integers"
                ) from None
            rec = PatientRecordPlain(genotype, treatment, ttf)
            try:
                rec.validate(cfg.n_bits, cfg.n_treatments)
            except ValidationError as exc:
                raise ValidationError(f"{path} line {lineno}: {exc}") from None
            records.append(rec)
    return records


class PartyChannels:
    """The client's two party connections plus input-preparation state."""

    def __init__(self, cfg: SystemConfig, masks: ClientMaskFile | None,
                 masks_path: Path | None, rng: random.Random):
        self.cfg = cfg
        self.masks = masks
        self.masks_path = masks_path
        self.rng = rng
        self.field = cfg.protocol.field
        session = masks.session_id if masks is not None else WILDCARD_SESSION
        self.hello = Hello(
            session_id=session,
            role=ROLE_CLIENT,
            node_id=CLIENT_NODE_ID,
            modulus=cfg.protocol.field.p,
            n_bits=cfg.n_bits,
            n_treatments=cfg.n_treatments,
            mode_code=MODE_CODE[cfg.protocol.mode],
        )
        self.transports: list[Transport] = []

    def connect(self) -> None:
        retry_for = min(5.0, self.cfg.timeout_secs)
        for addr in (self.cfg.party0_addr, self.cfg.party1_addr):
            t = connect_tcp(addr, timeout=self.cfg.timeout_secs, retry_for=retry_for)
            client_handshake(t, self.hello, self.cfg.timeout_secs)
            self.transports.append(t)

    def close(self) -> None:
        for t in self.transports:
            t.close()

    def commit_masks(self) -> None:
        """Record spent masks; called only after the operation succeeded so
        a failed run does not silently burn the client's mask budget."""
        if self.masks is not None and self.masks_path is not None:
            self.masks.persist_cursor(self.masks_path)

    # -- input preparation ---------------------------------------------------

    def split_inputs(self, vectors: list[list[int]]) -> tuple[int, int, list[list[int]], list[list[int]]]:
        """Turn plaintext vectors into the two parties' payload vectors.

        Semi-honest: fresh additive shares, one set per party.
        Authenticated: identical public deltas against the next masks.
        Returns (kind, mask_start, vectors_for_p0, vectors_for_p1).
        """
        if self.masks is None:
            out0, out1 = [], []
            for vec in vectors:
                s0s, s1s = [], []
                for x in vec:
                    s0, s1 = share_secret(self.field, x, self.rng)
                    s0s.append(s0)
                    s1s.append(s1)
                out0.append(s0s)
                out1.append(s1s)
            return INPUT_DIRECT, 0, out0, out1
        total = sum(len(v) for v in vectors)
        mask_start = self.masks.cursor
        r = self.masks.consume(total)
        p = self.field.p
        deltas, off = [], 0
        for vec in vectors:
            deltas.append([(x - m) % p for x, m in zip(vec, r[off:off + len(vec)])])
            off += len(vec)
        return INPUT_MASKED, mask_start, deltas, deltas

    # -- operations ------------------------------------------------------------

    def ingest(self, records: list[PatientRecordPlain]) -> int:
        cfg = self.cfg
        count = 0
        for start in range(0, len(records), INGEST_CHUNK):
            chunk = records[start:start + INGEST_CHUNK]
            vectors = [record_to_field_vector(r, cfg.n_treatments) for r in chunk]
            kind, mask_start, v0, v1 = self.split_inputs(vectors)
            batch_id = self.rng.randbytes(16)
            for t, vecs in zip(self.transports, (v0, v1)):
                payload = encode_ingest_batch(
                    self.field, IngestBatch(batch_id, kind, mask_start, vecs)
                )
                t.send(MessageType.INGEST_BATCH, payload)
            acks = [self._await(t, MessageType.INGEST_ACK) for t in self.transports]
            counts = []
            for ack in acks:
                got_id, got_count = decode_ingest_ack(ack)
                if got_id != batch_id:
                    raise IngestError("ack for a different batch")
                counts.append(got_count)
            if counts[0] != counts[1]:
                raise IngestError(
                    f"parties disagree on record count: {counts[0]} vs {counts[1]}"
                )
            count = counts[0]
        return count

    def query(self, genotype: str) -> tuple[bytes, list]:
        cfg = self.cfg
        vectors = [[int(ch) for ch in genotype]]
        kind, mask_start, v0, v1 = self.split_inputs(vectors)
        query_id = self.rng.randbytes(16)
        for t, vecs in zip(self.transports, (v0, v1)):
            payload = encode_query_submit(
                self.field, QuerySubmit(query_id, kind, mask_start, vecs[0])
            )
            t.send(MessageType.QUERY_SUBMIT, payload)
        shares = [
            decode_result_share(
                self.field, self._await(t, MessageType.RESULT_SHARE), cfg.n_treatments
            )
            for t in self.transports
        ]
        for rs in shares:
            if rs.query_id != query_id:
                raise ProtocolError("result share for a different query")
        return query_id, shares

    def _await(self, t: Transport, expected: MessageType) -> bytes:
        try:
            msg_type, payload = t.recv(self.cfg.timeout_secs)
        except ConnectionLost as exc:
            raise QueryTimeout(f"no response within {self.cfg.timeout_secs}s: {exc}") from exc
        if msg_type == MessageType.ABORT:
            raise RemoteAbort(decode_abort(payload))
        if msg_type != expected:
            raise ProtocolError(f"expected {expected.name}, got {msg_type.name}")
        return payload


def _load_masks(cfg: SystemConfig, masks_arg: str | None) -> tuple[ClientMaskFile | None, Path | None]:
    if not cfg.protocol.authenticated:
        return None, None
    path = Path(masks_arg) if masks_arg else Path("client.masks")
    if not path.exists():
        raise ConfigError(
            f"authenticated mode needs the dealer's client mask file (not found: {path})"
        )
    return ClientMaskFile.load(path), path


def cmd_ingest(args) -> int:
    cfg = load_config(args.config)
    records = read_record_file(args.file, cfg)
    masks, masks_path = _load_masks(cfg, args.masks)
    channels = PartyChannels(cfg, masks, masks_path, random.SystemRandom())
    channels.connect()
    try:
        count = channels.ingest(records)
    finally:
        channels.close()
    channels.commit_masks()
    print(f"ingested {len(records)} records; database now holds {count}")
    return EXIT_OK


def cmd_query(args) -> int:
    cfg = load_config(args.config)
    if args.genotype is not None:
        genotype = args.genotype.strip()
        validate_genotype(genotype, cfg.n_bits)
    else:
        try:
            positions = [int(tok) for tok in args.mutations.split(",") if tok.strip()]
        except ValueError:
            raise ValidationError("mutation list must be comma-separated integers") from None
        genotype = encode_genotype(positions, cfg.n_bits)
    masks, masks_path = _load_masks(cfg, args.masks)
    channels = PartyChannels(cfg, masks, masks_path, random.SystemRandom())
    channels.connect()
    try:
        _, shares = channels.query(genotype)
    finally:
        channels.close()
    channels.commit_masks()
    result = finalize_result(cfg.protocol.field, shares[0], shares[1])
    print(render_csv(result) if args.csv else render_table(result))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clinician",
        description="Share patient records with the computing parties and "
        "run privacy-preserving treatment queries.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="validate, share, and upload a record CSV")
    p_ingest.add_argument("--file", required=True)
    p_ingest.add_argument("--config", required=True)
    p_ingest.add_argument("--masks", help="dealer mask file (authenticated mode)")
    p_ingest.set_defaults(func=cmd_ingest)

    p_query = sub.add_parser("query", help="submit a genotype similarity query")
    group = p_query.add_mutually_exclusive_group(required=True)
    group.add_argument("--genotype", help="bit string of length N")
    group.add_argument("--mutations", help="comma-separated mutation positions")
    p_query.add_argument("--csv", action="store_true", help="machine-readable output")
    p_query.add_argument("--config", required=True)
    p_query.add_argument("--masks", help="dealer mask file (authenticated mode)")
    p_query.set_defaults(func=cmd_query)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ConfigError, OutOfPreprocessing) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION if not isinstance(exc, OutOfPreprocessing) else EXIT_ABORT
    except (ConnectError, ConnectionLost, QueryTimeout, HandshakeError) as exc:
        print(f"network error: {exc}", file=sys.stderr)
        return EXIT_NETWORK
    except RemoteAbort as exc:
        print(f"party aborted: {exc.reason}", file=sys.stderr)
        return EXIT_ABORT
    except MpcError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    raise SystemExit(main())
