"""Acceptance checks: one test per shipped guarantee, each printing a
[PASS]/[FAIL] line so the suite output doubles as the acceptance report.

These are deliberately heavyweight (exhaustive gadget sweeps, randomized
end-to-end instances, real OS processes) and run minutes, not seconds.
"""

import random
import socket
import subprocess
import sys
import threading
from collections import defaultdict

from scipy.stats import chi2_contingency

from mpccdss.bench import (
    gen_query_genotype,
    gen_synthetic_db,
    run_loopback_query,
    run_sweep,
    write_record_csv,
)
from mpccdss.config import ProtocolConfig, save_config
from mpccdss.dealer import budget_for_query
from mpccdss.engine import ProtocolSession
from mpccdss.errors import MacAbort
from mpccdss.field import ENCODED_SIZE, PRODUCTION_MODULUS, Field
from mpccdss.query import PatientRecordPlain, plaintext_oracle
from mpccdss.sharing import reconstruct_vector, share_secret, share_vector
from mpccdss.transport import loopback_pair
from mpccdss.wire import MessageType

from conftest import (
    P101,
    P61,
    criterion,
    random_triples,
    run_pair,
    session_pair,
    small_config,
    stores_from_plain,
)

P128 = Field(PRODUCTION_MODULUS)


# ---------------------------------------------------------------------------
# 1. full-protocol results equal the plaintext reference


def test_criterion_1_oracle_equivalence(tmp_path, capsys):
    with criterion(
        capsys, 1,
        "200 randomized end-to-end runs reproduce the plaintext aggregates exactly",
    ):
        rng = random.Random(0xACCE97)
        failures = []
        for i in range(200):
            n_bits = rng.choice((8, 64, 128))
            n_treat = rng.choice((2, 16))
            if i == 0:
                d = 0                      # empty database, local answer path
            elif i == 1:
                d = 1000                   # the size cap
            else:
                d = int(10 ** rng.uniform(0, 3))
            if i == 2:
                bound = 0                  # nothing can match
            elif i == 3:
                bound = n_bits             # everything matches
            else:
                bound = rng.randint(0, n_bits)
            field = (P61, P128)[i % 2]
            mode = ("semi-honest", "authenticated")[(i // 2) % 2]
            cfg = small_config(
                field=field, mode=mode, n_bits=n_bits, n_treatments=n_treat,
                threshold_b=bound, kappa=40,
            )
            records = gen_synthetic_db(d, n_bits, n_treat, seed=1000 + i)
            genotype = gen_query_genotype(n_bits, seed=2000 + i)
            run = run_loopback_query(cfg, records, genotype, tmp_path, seed=i)
            expected = plaintext_oracle(records, genotype, bound, n_treat)
            budget = budget_for_query(
                d, n_bits, n_treat, cfg.comparison_bit_length, 40
            )
            if run.result != expected:
                failures.append(f"instance {i}: {run.result} != {expected}")
            if run.triples_consumed != budget.triples:
                failures.append(
                    f"instance {i}: {run.triples_consumed} triples, "
                    f"budget {budget.triples}"
                )
        assert not failures, "\n".join(failures)


# ---------------------------------------------------------------------------
# 2. comparison gadget, exhaustive at ell=8


def test_criterion_2_comparison_exhaustive(capsys):
    with criterion(
        capsys, 2, "threshold comparison correct on all 65,536 (h, bound) pairs"
    ):
        ell, kappa = 8, 8
        triples_needed = 256 * 256 * (2 * ell - 1)
        bits_needed = 256 * 256 * (ell + kappa)
        rng = random.Random(0xACC2)
        st0, st1, _ = stores_from_plain(
            P61,
            random_triples(P61, triples_needed, rng),
            [rng.randrange(2) for _ in range(bits_needed)],
            seed=21,
        )
        s0, s1, _ = session_pair(ProtocolConfig(field=P61), (st0, st1))
        h0, h1 = share_vector(P61, list(range(256)), rng)
        wrong = 0
        for bound in range(256):
            out0, out1 = run_pair(
                lambda: s0.lt_threshold_vector(h0, bound, ell, kappa),
                lambda: s1.lt_threshold_vector(h1, bound, ell, kappa),
            )
            got = reconstruct_vector(P61, out0, out1)
            wrong += sum(got[h] != int(h < bound) for h in range(256))
        assert wrong == 0
        assert st0.remaining("triples") == 0  # consumption matches the budget


# ---------------------------------------------------------------------------
# 3. Hamming distance, exhaustive at 8 bits


def test_criterion_3_hamming_exhaustive(capsys):
    with criterion(
        capsys, 3, "secure Hamming distance matches on all 65,536 8-bit pairs"
    ):
        n = 8
        bits_of = [[(v >> k) & 1 for k in range(n)] for v in range(256)]
        x_flat = [b for x in range(256) for _ in range(256) for b in bits_of[x]]
        y_flat = [b for _ in range(256) for y in range(256) for b in bits_of[y]]
        rng = random.Random(0xACC3)
        st0, st1, _ = stores_from_plain(
            P61, random_triples(P61, len(x_flat), rng), seed=31
        )
        s0, s1, _ = session_pair(ProtocolConfig(field=P61), (st0, st1))
        x0, x1 = share_vector(P61, x_flat, rng)
        y0, y1 = share_vector(P61, y_flat, rng)
        h0, h1 = run_pair(
            lambda: s0.hamming_fold(x0, y0, n),
            lambda: s1.hamming_fold(x1, y1, n),
            timeout=120,
        )
        got = reconstruct_vector(P61, h0, h1)
        expected = [
            bin(x ^ y).count("1") for x in range(256) for y in range(256)
        ]
        assert got == expected


# ---------------------------------------------------------------------------
# 4. communication pattern carries no information about the secrets


def _records_fixed_treatments(d, n_bits, n_treat, seed):
    """Treatment sequence pinned to i mod T; genotypes and TTFs drawn from
    the seed, so two seeds differ only in the secret payloads."""
    r = random.Random(seed)
    return [
        PatientRecordPlain(
            "".join(r.choice("01") for _ in range(n_bits)),
            i % n_treat,
            r.randint(1, 3650),
        )
        for i in range(d)
    ]


def _traced_run(cfg, records, genotype, work_dir, seed):
    transcript = defaultdict(list)

    def tap(name, msg_type, payload):
        transcript[name].append((int(msg_type), len(payload)))

    run_loopback_query(cfg, records, genotype, work_dir, seed=seed, tap=tap)
    return dict(transcript)


def test_criterion_4_oblivious_transcripts(tmp_path, capsys):
    with criterion(
        capsys, 4,
        "message type/length transcripts are identical across secret changes",
    ):
        for mode in ("semi-honest", "authenticated"):
            cfg = small_config(n_bits=8, n_treatments=2, threshold_b=3, mode=mode)
            run_a = _traced_run(
                cfg,
                _records_fixed_treatments(20, 8, 2, seed=41),
                gen_query_genotype(8, seed=42),
                tmp_path,
                seed=43,
            )
            run_b = _traced_run(
                cfg,
                _records_fixed_treatments(20, 8, 2, seed=44),
                gen_query_genotype(8, seed=45),
                tmp_path,
                seed=43,
            )
            assert run_a.keys() == run_b.keys()
            for name in run_a:
                assert run_a[name] == run_b[name], f"{mode}: channel {name} differs"


# ---------------------------------------------------------------------------
# 5. a single share says nothing about the secret


def test_criterion_5_share_distributions(capsys):
    with criterion(
        capsys, 5,
        "single-party share distributions indistinguishable (chi-square, a=0.001)",
    ):
        rng = random.Random(0xACC5)
        n = 100_000
        table = []
        for secret in (5, 64):
            counts = [0] * P101.p
            for _ in range(n):
                s0, _ = share_secret(P101, secret, rng)
                counts[s0] += 1
            table.append(counts)
        result = chi2_contingency(table)
        assert result.pvalue > 0.001


# ---------------------------------------------------------------------------
# 6. authenticated mode catches every tampered opening


class _TamperTransport:
    """Wraps a transport; adds 1 (mod p) to one field element of the n-th
    outgoing opening frame, leaving the round header intact."""

    def __init__(self, inner, field, elem_back):
        self.inner = inner
        self.field = field
        self.elem_back = elem_back
        self.tampered = False

    def send(self, msg_type, payload):
        if msg_type == MessageType.OPEN_BATCH and not self.tampered:
            n_elems = (len(payload) - 4) // ENCODED_SIZE
            k = self.elem_back % n_elems
            off = len(payload) - ENCODED_SIZE * (k + 1)
            val = self.field.decode(payload[off:off + ENCODED_SIZE])
            forged = self.field.encode((val + 1) % self.field.p)
            payload = payload[:off] + forged + payload[off + ENCODED_SIZE:]
            self.tampered = True
        self.inner.send(msg_type, payload)

    def __getattr__(self, name):
        return getattr(self.inner, name)


def test_criterion_6_tamper_detection(capsys):
    with criterion(
        capsys, 6, "1,000 in-flight tamper trials all end in a MAC abort"
    ):
        detected = 0
        for trial in range(1000):
            t_rng = random.Random(trial)
            k = t_rng.randint(1, 4)
            st = stores_from_plain(
                P61, random_triples(P61, k, t_rng),
                mode="authenticated", seed=trial + 1,
            )
            stores, key = st[:2], st[2]
            x0, x1 = share_vector(P61, [t_rng.randrange(P61.p) for _ in range(k)],
                                  t_rng, key)
            y0, y1 = share_vector(P61, [t_rng.randrange(P61.p) for _ in range(k)],
                                  t_rng, key)
            t0, t1 = loopback_pair(names=("party0", "party1"))
            cheater = t_rng.randrange(2)
            wrapped = _TamperTransport(
                (t0, t1)[cheater], P61, elem_back=t_rng.randrange(2 * k)
            )
            transports = (wrapped, t1) if cheater == 0 else (t0, wrapped)
            protocol = ProtocolConfig(field=P61, mode="authenticated")
            s0 = ProtocolSession(0, transports[0], stores[0], protocol, timeout=10)
            s1 = ProtocolSession(1, transports[1], stores[1], protocol, timeout=10)

            def run(session, xs, ys):
                session.mul_vector(xs, ys)
                session.mac_check()

            results = run_pair(
                lambda: run(s0, x0, y0), lambda: run(s1, x1, y1), capture=True
            )
            assert wrapped.tampered
            if all(isinstance(r, MacAbort) for r in results):
                detected += 1
        assert detected == 1000  # zero accepted forgeries


# ---------------------------------------------------------------------------
# 7. online query time is linear in the database size


def test_criterion_7_linear_scaling(tmp_path, capsys):
    with criterion(
        capsys, 7,
        "online time linear over D in {100..5000} (R^2 >= 0.98), triples == budget",
    ):
        cfg = small_config(n_bits=128, n_treatments=16, threshold_b=20, kappa=40)
        sizes = [100, 500, 1000, 2000, 5000]
        rows, fit = run_sweep(sizes, reps=1, cfg=cfg, work_dir=tmp_path, seed=77)
        for row in rows:  # run_sweep already aborts on any budget mismatch
            budget = budget_for_query(
                row.db_size, 128, 16, cfg.comparison_bit_length, 40
            )
            assert row.triples == budget.triples
        assert fit.r_squared >= 0.98, f"R^2 = {fit.r_squared:.4f}"


# ---------------------------------------------------------------------------
# 8. the full deployment story over real processes and TCP


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _spawn_party(party_id, cfg_path, listen, peer, work):
    return subprocess.Popen(
        [
            sys.executable, "-m", "mpccdss.party",
            "--id", str(party_id),
            "--config", str(cfg_path),
            "--listen", listen,
            "--peer", peer,
            "--db", str(work / f"db{party_id}.bin"),
            "--preproc", str(work / f"party{party_id}.preproc"),
        ],
        stdout=subprocess.PIPE,
        stderr=subprocess.PIPE,
        text=True,
    )


def _await_ready(procs, timeout=30.0):
    flags = [False] * len(procs)

    def watch(i):
        for line in procs[i].stdout:
            if line.strip() == "READY":
                flags[i] = True
                return

    threads = [threading.Thread(target=watch, args=(i,), daemon=True)
               for i in range(len(procs))]
    for th in threads:
        th.start()
    for th in threads:
        th.join(timeout=timeout)
    if not all(flags):
        errs = [p.stderr.read() if p.poll() is not None else "(still running)"
                for p in procs]
        raise AssertionError(f"parties never became ready: {errs}")


def _run_cli(args, timeout=60):
    return subprocess.run(
        [sys.executable, "-m", "mpccdss.clinician", *args],
        capture_output=True, text=True, timeout=timeout,
    )


def test_criterion_8_cli_end_to_end(tmp_path, capsys):
    with criterion(
        capsys, 8,
        "dealer/party/clinician processes over TCP reproduce the 3-record example",
    ):
        addr0 = f"127.0.0.1:{_free_port()}"
        addr1 = f"127.0.0.1:{_free_port()}"
        cfg = small_config(
            n_bits=4, n_treatments=2, threshold_b=2,
            timeout_secs=20, party0_addr=addr0, party1_addr=addr1,
        )
        cfg_path = tmp_path / "system.cfg"
        save_config(cfg, cfg_path)
        write_record_csv(
            [
                PatientRecordPlain("0000", 0, 100),
                PatientRecordPlain("0001", 0, 200),
                PatientRecordPlain("1111", 0, 900),
            ],
            tmp_path / "records.csv",
        )

        dealt = subprocess.run(
            [
                sys.executable, "-m", "mpccdss.dealer",
                "--out-dir", str(tmp_path),
                "--triples", "400", "--bits", "400", "--masks", "0",
                "--config", str(cfg_path),
            ],
            capture_output=True, text=True, timeout=60,
        )
        assert dealt.returncode == 0, dealt.stderr

        parties = [
            _spawn_party(0, cfg_path, addr0, addr1, tmp_path),
            _spawn_party(1, cfg_path, addr1, addr0, tmp_path),
        ]
        try:
            _await_ready(parties)

            ingest = _run_cli([
                "ingest", "--file", str(tmp_path / "records.csv"),
                "--config", str(cfg_path),
            ])
            assert ingest.returncode == 0, ingest.stderr
            assert "ingested 3 records" in ingest.stdout

            table = _run_cli([
                "query", "--genotype", "0000", "--config", str(cfg_path),
            ])
            assert table.returncode == 0, table.stderr
            assert "150.0" in table.stdout
            assert "no data" in table.stdout

            csv_out = _run_cli([
                "query", "--genotype", "0000", "--config", str(cfg_path), "--csv",
            ])
            assert csv_out.returncode == 0, csv_out.stderr
            lines = csv_out.stdout.splitlines()
            assert "0,2,300,150.0" in lines
            assert "1,0,0," in lines
        finally:
            for proc in parties:
                proc.terminate()
            for proc in parties:
                try:
                    proc.wait(timeout=5)
                except subprocess.TimeoutExpired:
                    proc.kill()
