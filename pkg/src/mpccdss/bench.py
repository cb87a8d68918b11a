"""Scaling harness: synthetic databases, timed end-to-end loopback queries,
linear-fit reporting, CSV output.

Timing covers the online query phase only: dealing (the offline phase) and
ingestion happen before the clock starts. Every timed query is checked
against the plaintext reference; timings of wrong results are worthless, so
a mismatch invalidates the whole sweep.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .clinician import PartyChannels
from .config import SystemConfig, load_config
from .dealer import (
    ClientMaskFile,
    Counts,
    TripleStore,
    budget_for_query,
    deal_preprocessing,
)
from .errors import BenchInvalid
from .party import PartyServer, ShareDatabase
from .query import (
    PatientRecordPlain,
    QueryResultPlain,
    finalize_result,
    plaintext_oracle,
)
from .transport import Tap, client_handshake, loopback_pair


def gen_synthetic_db(
    d: int, n_bits: int, n_treatments: int, seed: int
) -> list[PatientRecordPlain]:
    """Deterministic synthetic records: sparse genotypes (bit density 0.1),
    uniform treatment, TTF uniform in [30, 3650] days."""
    rng = random.Random(seed)
    records = []
    for _ in range(d):
        genotype = "".join("1" if rng.random() < 0.1 else "0" for _ in range(n_bits))
        records.append(
            PatientRecordPlain(
                genotype=genotype,
                treatment_id=rng.randrange(n_treatments),
                ttf_days=rng.randint(30, 3650),
            )
        )
    return records


def gen_query_genotype(n_bits: int, seed: int) -> str:
    rng = random.Random(seed)
    return "".join("1" if rng.random() < 0.1 else "0" for _ in range(n_bits))


def write_record_csv(records: list[PatientRecordPlain], path: str | Path) -> None:
    lines = ["genotype,treatment_id,ttf_days"]
    lines += [f"{r.genotype},{r.treatment_id},{r.ttf_days}" for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# one full loopback run


@dataclass
class LoopbackRun:
    result: QueryResultPlain
    wall_millis: float
    triples_consumed: int
    bits_consumed: int
    bytes_on_wire: int


def run_loopback_query(
    cfg: SystemConfig,
    records: list[PatientRecordPlain],
    genotype: str,
    work_dir: str | Path,
    seed: int = 0,
    tap: Tap | None = None,
    extra_counts: Counts = Counts(),
) -> LoopbackRun:
    """Deal, ingest, and run one query through the full protocol stack
    (party daemons included) over in-process channels.

    Only the query itself is timed. The ``tap`` sees every frame on all
    three channels, labeled by sender.
    """
    d = len(records)
    width = cfg.n_bits + 2 * cfg.n_treatments
    budget = budget_for_query(
        d, cfg.n_bits, cfg.n_treatments, cfg.comparison_bit_length, cfg.protocol.kappa
    )
    masks_needed = (d * width + cfg.n_bits) if cfg.protocol.authenticated else 0
    counts = Counts(
        triples=budget.triples + extra_counts.triples,
        bits=budget.bits + extra_counts.bits,
        masks=masks_needed + extra_counts.masks,
    )
    rng = random.Random(seed)
    dealt = deal_preprocessing(counts, cfg.protocol, rng, work_dir)

    stores = [TripleStore.load(p, cfg.protocol) for p in dealt.party_paths]
    masks = (
        ClientMaskFile.load(dealt.client_masks_path)
        if cfg.protocol.authenticated
        else None
    )
    servers = [
        PartyServer(i, cfg, ShareDatabase.for_config(cfg), stores[i])
        for i in (0, 1)
    ]
    peer0, peer1 = loopback_pair(names=("party0", "party1"), tap=tap)
    servers[0].attach_peer(peer0)
    servers[1].attach_peer(peer1)

    client_ends = []
    threads = []
    for i in (0, 1):
        client_end, server_end = loopback_pair(
            names=(f"client>p{i}", f"p{i}>client"), tap=tap
        )
        client_ends.append(client_end)
        thread = threading.Thread(
            target=servers[i].handle_client, args=(server_end,), daemon=True
        )
        thread.start()
        threads.append(thread)

    channels = PartyChannels(cfg, masks, None, random.Random(seed + 1))
    channels.transports = client_ends
    for t in client_ends:
        client_handshake(t, channels.hello, cfg.timeout_secs)

    try:
        channels.ingest(records)
        before = [s.consumed_counts for s in stores]
        t0 = time.perf_counter()
        _, shares = channels.query(genotype)
        wall_millis = (time.perf_counter() - t0) * 1e3
        result = finalize_result(cfg.protocol.field, shares[0], shares[1])
    finally:
        channels.close()
        for thread in threads:
            thread.join(timeout=5.0)
        peer0.close()
        peer1.close()

    after = stores[0].consumed_counts
    triples = after["triples"] - before[0]["triples"]
    bits = after["bits"] - before[0]["bits"]
    total_bytes = sum(t.bytes_sent for t in client_ends) + peer0.bytes_sent + peer1.bytes_sent
    return LoopbackRun(result, wall_millis, triples, bits, total_bytes)


# ---------------------------------------------------------------------------
# the sweep


@dataclass(frozen=True)
class BenchRow:
    db_size: int
    rep: int
    wall_millis: float
    triples: int
    bytes_on_wire: int


@dataclass(frozen=True)
class FitReport:
    slope_ms_per_record: float
    intercept_ms: float
    r_squared: float


def fit_linear(rows: list[BenchRow]) -> FitReport:
    import numpy as np

    x = np.array([row.db_size for row in rows], dtype=float)
    y = np.array([row.wall_millis for row in rows], dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    predicted = slope * x + intercept
    ss_res = float(np.sum((y - predicted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return FitReport(float(slope), float(intercept), r_squared)


def run_sweep(
    sizes: list[int],
    reps: int,
    cfg: SystemConfig,
    work_dir: str | Path,
    seed: int = 0,
) -> tuple[list[BenchRow], FitReport]:
    """Timed queries at each database size; verifies every result against
    the plaintext reference and cross-checks triple consumption against the
    analytic budget."""
    if reps < 1 or not sizes or min(sizes) < 1:
        raise BenchInvalid("need at least one size and one repetition")
    work_dir = Path(work_dir)
    rows: list[BenchRow] = []
    for size in sizes:
        records = gen_synthetic_db(size, cfg.n_bits, cfg.n_treatments, seed + size)
        genotype = gen_query_genotype(cfg.n_bits, seed + size + 1)
        expected = plaintext_oracle(records, genotype, cfg.threshold_b, cfg.n_treatments)
        budget = budget_for_query(
            size, cfg.n_bits, cfg.n_treatments,
            cfg.comparison_bit_length, cfg.protocol.kappa,
        )
        for rep in range(reps):
            run = run_loopback_query(
                cfg, records, genotype, work_dir, seed=seed + size * 31 + rep
            )
            if run.result != expected:
                raise BenchInvalid(
                    f"size {size} rep {rep}: secure result disagrees with reference"
                )
            if run.triples_consumed != budget.triples:
                raise BenchInvalid(
                    f"size {size} rep {rep}: consumed {run.triples_consumed} triples, "
                    f"budget says {budget.triples}"
                )
            rows.append(
                BenchRow(size, rep, run.wall_millis, run.triples_consumed,
                         run.bytes_on_wire)
            )
    return rows, fit_linear(rows)


def render_rows_csv(rows: list[BenchRow]) -> str:
    lines = ["db_size,rep,wall_millis,triples,bytes"]
    lines += [
        f"{r.db_size},{r.rep},{r.wall_millis:.3f},{r.triples},{r.bytes_on_wire}"
        for r in rows
    ]
    return "\n".join(lines) + "\n"


def main(argv: list[str] | None = None) -> int:
    import argparse
    import tempfile

    parser = argparse.ArgumentParser(
        prog="bench", description="Time the online query phase across database sizes."
    )
    parser.add_argument("--sizes", default="100,500,1000,2000,5000",
                        help="comma-separated database sizes")
    parser.add_argument("--reps", type=int, default=3)
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default="results.csv")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    sizes = [int(tok) for tok in args.sizes.split(",") if tok.strip()]
    cfg = load_config(args.config)
    with tempfile.TemporaryDirectory(prefix="mpccdss-bench-") as work_dir:
        rows, fit = run_sweep(sizes, args.reps, cfg, work_dir, seed=args.seed)
    Path(args.out).write_text(render_rows_csv(rows))
    print(f"wrote {len(rows)} measurements to {args.out}")
    print(
        f"linear fit: wall_millis = {fit.slope_ms_per_record:.4f}*D "
        f"+ {fit.intercept_ms:.2f}  (R^2 = {fit.r_squared:.4f})"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
