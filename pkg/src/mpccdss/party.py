"""The computing-party daemon.

Holds one party's half of the share database and preprocessing, keeps a
single peer link to the other party, and serves clients sequentially:
INGEST_BATCH appends validated share records, QUERY_SUBMIT runs the joint
protocol and returns this party's result share. All protocol failures abort
the affected query with an ABORT frame to the client; the daemon keeps
running.

Logs never contain share values or reconstructed data: only counts, public
parameters, and hex identifiers.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

from .config import SystemConfig
from .dealer import TripleStore
from .engine import ProtocolSession
from .errors import (
    ArityError,
    ConnectionLost,
    CorruptDatabase,
    DesyncAbort,
    HandshakeError,
    MacAbort,
    MpcError,
    OutOfPreprocessing,
    ProtocolError,
    RemoteAbort,
)
from .field import ENCODED_SIZE, Field
from .query import (
    INPUT_MASKED,
    ResultShare,
    SharedPatientRecord,
    decode_ingest_batch,
    decode_query_submit,
    encode_ingest_ack,
    encode_result_share,
    evaluate_query,
    shares_from_masks,
    split_record_vector,
)
from .sharing import ShareVector
from .transport import (
    TcpListener,
    Transport,
    client_handshake,
    connect_tcp,
    server_handshake,
)
from .wire import (
    Hello,
    MessageType,
    MODE_CODE,
    ROLE_CLIENT,
    ROLE_PARTY,
    encode_abort,
)

DB_MAGIC = b"MPCCDSS-SHAREDB\x00"
DB_VERSION = 1

_DB_HEADER = struct.Struct(">16sHB16sHHQ")
_BATCH_HEAD = struct.Struct(">16sI")


class ShareDatabase:
    """Append-only store of one party's record shares, file-backed.

    The file is header + a sequence of batches (batch id, count, records);
    batch ids make re-uploads idempotent. Loading rebuilds everything and
    cross-checks the header count against the actual records.
    """

    def __init__(self, field: Field, mode: str, n_bits: int, n_treatments: int):
        self.field = field
        self.mode = mode
        self.n_bits = n_bits
        self.n_treatments = n_treatments
        self.records: list[SharedPatientRecord] = []
        self.batches: list[tuple[bytes, int]] = []  # (batch id, record count)

    @classmethod
    def for_config(cls, cfg: SystemConfig) -> "ShareDatabase":
        return cls(cfg.protocol.field, cfg.protocol.mode, cfg.n_bits, cfg.n_treatments)

    @property
    def authenticated(self) -> bool:
        return self.mode == "authenticated"

    @property
    def record_width(self) -> int:
        return self.n_bits + 2 * self.n_treatments

    def seen_batch(self, batch_id: bytes) -> bool:
        return any(bid == batch_id for bid, _ in self.batches)

    def append_batch(self, batch_id: bytes, records: list[SharedPatientRecord]) -> int:
        """Append unless the batch id was already stored; returns the new
        record total either way."""
        if self.seen_batch(batch_id):
            return len(self.records)
        for rec in records:
            rec.validate_arity(self.n_bits, self.n_treatments)
            if self.authenticated != (rec.genotype.macs is not None):
                raise ArityError("record share MAC presence contradicts database mode")
        self.batches.append((batch_id, len(records)))
        self.records.extend(records)
        return len(self.records)

    # -- persistence --------------------------------------------------------

    def _encode_record(self, rec: SharedPatientRecord) -> bytes:
        out = bytearray()
        for vec in (rec.genotype, rec.onehot, rec.ttf_onehot):
            for i, v in enumerate(vec.values):
                out += v.to_bytes(ENCODED_SIZE, "little")
                if vec.macs is not None:
                    out += vec.macs[i].to_bytes(ENCODED_SIZE, "little")
        return bytes(out)

    def persist(self, path: str | Path) -> None:
        mode_byte = 1 if self.authenticated else 0
        header = _DB_HEADER.pack(
            DB_MAGIC,
            DB_VERSION,
            mode_byte,
            self.field.p.to_bytes(16, "big"),
            self.n_bits,
            self.n_treatments,
            len(self.records),
        )
        chunks = [header]
        offset = 0
        for batch_id, count in self.batches:
            chunks.append(_BATCH_HEAD.pack(batch_id, count))
            for rec in self.records[offset:offset + count]:
                chunks.append(self._encode_record(rec))
            offset += count
        Path(path).write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, path: str | Path) -> "ShareDatabase":
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise CorruptDatabase(f"cannot read database {path}: {exc}") from exc
        if len(data) < _DB_HEADER.size:
            raise CorruptDatabase(f"{path}: truncated header")
        magic, version, mode_byte, modulus, n_bits, n_treat, n_records = (
            _DB_HEADER.unpack_from(data)
        )
        if magic != DB_MAGIC:
            raise CorruptDatabase(f"{path}: bad magic")
        if version != DB_VERSION:
            raise CorruptDatabase(f"{path}: unsupported version {version}")
        if mode_byte not in (0, 1):
            raise CorruptDatabase(f"{path}: unknown mode byte {mode_byte}")
        mode = "authenticated" if mode_byte else "semi-honest"
        field = Field(int.from_bytes(modulus, "big"))
        db = cls(field, mode, n_bits, n_treat)

        esize = ENCODED_SIZE * (2 if db.authenticated else 1)
        rec_size = db.record_width * esize
        off = _DB_HEADER.size
        while off < len(data):
            if off + _BATCH_HEAD.size > len(data):
                raise CorruptDatabase(f"{path}: truncated batch header")
            batch_id, count = _BATCH_HEAD.unpack_from(data, off)
            off += _BATCH_HEAD.size
            if off + count * rec_size > len(data):
                raise CorruptDatabase(f"{path}: truncated batch body")
            records = []
            for _ in range(count):
                flat = field.decode_many(data[off:off + rec_size])
                off += rec_size
                if db.authenticated:
                    vec = ShareVector(flat[0::2], flat[1::2])
                else:
                    vec = ShareVector(flat)
                records.append(split_record_vector(vec, n_bits, n_treat))
            db.batches.append((batch_id, count))
            db.records.extend(records)
        if len(db.records) != n_records:
            raise CorruptDatabase(
                f"{path}: header claims {n_records} records, file holds {len(db.records)}"
            )
        return db

    def verify_against(self, cfg: SystemConfig) -> None:
        if self.field.p != cfg.protocol.field.p:
            raise CorruptDatabase("database modulus differs from configuration")
        if self.mode != cfg.protocol.mode:
            raise CorruptDatabase("database mode differs from configuration")
        if (self.n_bits, self.n_treatments) != (cfg.n_bits, cfg.n_treatments):
            raise CorruptDatabase("database dimensions differ from configuration")


@dataclass
class _ClientState:
    queries_used: int = 0


class PartyServer:
    """One computing party. Transport-agnostic core; ``serve`` adds TCP."""

    def __init__(
        self,
        party_id: int,
        cfg: SystemConfig,
        db: ShareDatabase,
        store: TripleStore,
        db_path: str | Path | None = None,
        logger: logging.Logger | None = None,
    ):
        cfg.validate_for_queries()
        db.verify_against(cfg)
        store.verify_against(cfg.protocol)
        self.party_id = party_id
        self.cfg = cfg
        self.db = db
        self.store = store
        self.db_path = Path(db_path) if db_path is not None else None
        self.peer: Transport | None = None
        self.log = logger or logging.getLogger(f"mpccdss.party{party_id}")
        self._queries_served = 0

    # -- identity -------------------------------------------------------------

    def hello(self, role: int = ROLE_PARTY) -> Hello:
        return Hello(
            session_id=self.store.session_id,
            role=role,
            node_id=self.party_id,
            modulus=self.cfg.protocol.field.p,
            n_bits=self.cfg.n_bits,
            n_treatments=self.cfg.n_treatments,
            mode_code=MODE_CODE[self.cfg.protocol.mode],
        )

    def attach_peer(self, transport: Transport) -> None:
        self.peer = transport

    # -- client sessions --------------------------------------------------------

    def handle_client(self, transport: Transport) -> None:
        """Serve one client connection to completion (handshake included)."""
        try:
            theirs = server_handshake(
                transport, self.hello(), self.cfg.timeout_secs, allow_wildcard_session=True
            )
        except HandshakeError as exc:
            self.log.warning("client handshake refused: %s", exc)
            return
        if theirs.role != ROLE_CLIENT:
            self.log.warning("expected a client connection, got role %d", theirs.role)
            transport.send(MessageType.ABORT, encode_abort("expected client role"))
            return
        state = _ClientState()
        self.log.info("client %d connected", theirs.node_id)
        while True:
            try:
                msg_type, payload = transport.recv(None)
            except ConnectionLost:
                self.log.info("client %d disconnected", theirs.node_id)
                return
            try:
                if msg_type == MessageType.INGEST_BATCH:
                    self._serve_ingest(transport, payload)
                elif msg_type == MessageType.QUERY_SUBMIT:
                    self._serve_query(transport, payload, state)
                else:
                    raise ProtocolError(f"unexpected {msg_type.name} from client")
            except MpcError as exc:
                reason = _abort_reason(exc)
                self.log.warning("aborting client %d request: %s (%s)",
                                 theirs.node_id, reason, exc)
                try:
                    transport.send(MessageType.ABORT, encode_abort(reason))
                except MpcError:
                    return

    def _serve_ingest(self, transport: Transport, payload: bytes) -> None:
        field = self.cfg.protocol.field
        batch = decode_ingest_batch(field, payload, self.cfg.n_bits, self.cfg.n_treatments)
        if self.db.seen_batch(batch.batch_id):
            transport.send(
                MessageType.INGEST_ACK,
                encode_ingest_ack(batch.batch_id, len(self.db.records)),
            )
            return
        if batch.kind == INPUT_MASKED:
            records = self._masked_batch(batch)
        else:
            if self.cfg.protocol.authenticated:
                raise ProtocolError("authenticated mode requires masked input")
            records = [
                split_record_vector(
                    ShareVector(list(vec)), self.cfg.n_bits, self.cfg.n_treatments
                )
                for vec in batch.vectors
            ]
        count = self.db.append_batch(batch.batch_id, records)
        if self.db_path is not None:
            self.db.persist(self.db_path)
        self.log.info("ingest batch %s: +%d records (total %d)",
                      batch.batch_id.hex()[:8], len(batch.vectors), count)
        transport.send(MessageType.INGEST_ACK, encode_ingest_ack(batch.batch_id, count))

    def _masked_batch(self, batch) -> list[SharedPatientRecord]:
        if not self.cfg.protocol.authenticated:
            raise ProtocolError("masked input only applies to authenticated mode")
        width = self.cfg.n_bits + 2 * self.cfg.n_treatments
        need = len(batch.vectors) * width
        if batch.mask_start != self.store.consumed_counts["masks"]:
            raise DesyncAbort(
                f"client mask cursor {batch.mask_start} vs store "
                f"{self.store.consumed_counts['masks']}"
            )
        masks = self.store.consume_masks(need)
        records = []
        field = self.cfg.protocol.field
        for i, deltas in enumerate(batch.vectors):
            rec_masks = masks.slice(i * width, (i + 1) * width)
            shares = shares_from_masks(
                field, self.party_id, self.store.alpha_share, rec_masks, deltas
            )
            records.append(
                split_record_vector(shares, self.cfg.n_bits, self.cfg.n_treatments)
            )
        return records

    def _serve_query(self, transport: Transport, payload: bytes, state: _ClientState) -> None:
        cfg = self.cfg
        field = cfg.protocol.field
        qs = decode_query_submit(field, payload, cfg.n_bits)
        if state.queries_used >= cfg.max_queries_per_client:
            raise ProtocolError(
                f"quota: client exceeded {cfg.max_queries_per_client} queries"
            )
        state.queries_used += 1
        if self.peer is None:
            raise ConnectionLost("peer party not connected")

        if qs.kind == INPUT_MASKED:
            if not cfg.protocol.authenticated:
                raise ProtocolError("masked input only applies to authenticated mode")
            if qs.mask_start != self.store.consumed_counts["masks"]:
                raise DesyncAbort(
                    f"client mask cursor {qs.mask_start} vs store "
                    f"{self.store.consumed_counts['masks']}"
                )
            masks = self.store.consume_masks(cfg.n_bits)
            q_shares = shares_from_masks(
                field, self.party_id, self.store.alpha_share, masks, qs.elements
            )
        else:
            if cfg.protocol.authenticated:
                raise ProtocolError("authenticated mode requires masked input")
            q_shares = ShareVector(list(qs.elements))

        session = ProtocolSession(
            self.party_id, self.peer, self.store, cfg.protocol,
            timeout=cfg.timeout_secs,
        )
        d_count = len(self.db.records)
        consumed = self.store.consumed_counts
        tag = (
            qs.query_id
            + struct.pack(
                ">HHHQ", cfg.threshold_b, cfg.n_bits, cfg.n_treatments, d_count
            )
            + struct.pack(">QQQ", consumed["triples"], consumed["bits"], consumed["masks"])
        )
        session.sync(tag)
        counts, sums = evaluate_query(
            session,
            self.db.records,
            q_shares,
            cfg.threshold_b,
            cfg.comparison_bit_length,
            cfg.protocol.kappa,
            cfg.n_treatments,
        )
        session.mac_check()
        self._queries_served += 1
        self.log.info(
            "query %s served over %d records (%d total queries)",
            qs.query_id.hex()[:8], d_count, self._queries_served,
        )
        rs = ResultShare(qs.query_id, d_count, counts.values, sums.values)
        transport.send(MessageType.RESULT_SHARE, encode_result_share(field, rs))

    # -- TCP daemon ----------------------------------------------------------------

    def serve(self, listen_addr: str, peer_addr: str, ready_event=None) -> None:
        """Run forever: establish the peer link, then serve client
        connections sequentially. Party 1 dials party 0."""
        listener = TcpListener(listen_addr)
        self.log.info("listening on %s", listen_addr)
        try:
            if self.party_id == 1:
                peer = connect_tcp(peer_addr, self.cfg.timeout_secs, retry_for=15.0)
                client_handshake(peer, self.hello(), self.cfg.timeout_secs)
                self.attach_peer(peer)
                self.log.info("peer link established to %s", peer_addr)
            else:
                conn = listener.accept(timeout=60.0)
                theirs = server_handshake(
                    conn, self.hello(), self.cfg.timeout_secs,
                    allow_wildcard_session=False,
                )
                if theirs.role != ROLE_PARTY:
                    raise HandshakeError("first connection must be the peer party")
                self.attach_peer(conn)
                self.log.info("peer link established from party %d", theirs.node_id)
            if ready_event is not None:
                ready_event.set()
            print("READY", flush=True)
            while True:
                conn = listener.accept(timeout=None)
                self.handle_client(conn)
                conn.close()
        finally:
            listener.close()


def _abort_reason(exc: MpcError) -> str:
    if isinstance(exc, OutOfPreprocessing):
        return "preproc"
    if isinstance(exc, DesyncAbort):
        return "desync"
    if isinstance(exc, MacAbort):
        return "mac"
    if isinstance(exc, RemoteAbort):
        return f"peer: {exc.reason}"
    if isinstance(exc, ConnectionLost):
        return "peer-lost"
    if isinstance(exc, ProtocolError) and str(exc).startswith("quota"):
        return "quota"
    return type(exc).__name__


def main(argv: list[str] | None = None) -> int:
    import argparse

    from .config import load_config

    parser = argparse.ArgumentParser(
        prog="party", description="Run one computing party of the two-party CDSS."
    )
    parser.add_argument("--id", type=int, required=True, choices=(0, 1))
    parser.add_argument("--config", required=True)
    parser.add_argument("--listen", required=True, help="host:port to listen on")
    parser.add_argument("--peer", required=True, help="peer party host:port")
    parser.add_argument("--db", required=True, help="share database path")
    parser.add_argument("--preproc", required=True, help="preprocessing store path")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    cfg = load_config(args.config)
    store = TripleStore.load(args.preproc, cfg.protocol)
    db_path = Path(args.db)
    if db_path.exists():
        db = ShareDatabase.load(db_path)
    else:
        db = ShareDatabase.for_config(cfg)
        db.persist(db_path)
    server = PartyServer(args.id, cfg, db, store, db_path=db_path)
    try:
        server.serve(args.listen, args.peer)
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
