#!/usr/bin/env python3
"""Run the whole system once on localhost: deal preprocessing, start both
party daemons as real processes, upload three records, query, print the
ranked result, and shut everything down.

    python3 scripts/demo_localhost.py
    python3 scripts/demo_localhost.py --mode authenticated --keep
"""

import argparse
import socket
import subprocess
import sys
import tempfile
import threading
from pathlib import Path

from mpccdss.config import ProtocolConfig, SystemConfig, save_config
from mpccdss.dealer import budget_for_query
from mpccdss.field import TEST_MODULUS, Field

RECORDS = """genotype,treatment_id,ttf_days
0000,0,100
0001,0,200
1111,0,900
"""


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def run(label: str, args: list[str]) -> str:
    print(f"$ {' '.join(args)}")
    proc = subprocess.run(args, capture_output=True, text=True, timeout=120)
    if proc.returncode != 0:
        print(proc.stdout, end="")
        print(proc.stderr, end="", file=sys.stderr)
        raise SystemExit(f"{label} failed with exit code {proc.returncode}")
    print(proc.stdout, end="")
    return proc.stdout


def await_ready(procs, timeout=30.0):
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
        for proc in procs:
            proc.terminate()
        raise SystemExit("party processes never became ready")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--mode", choices=("semi-honest", "authenticated"),
                        default="semi-honest")
    parser.add_argument("--keep", action="store_true",
                        help="keep the working directory for inspection")
    args = parser.parse_args()

    tmp = tempfile.mkdtemp(prefix="mpccdss-demo-")
    work = Path(tmp)
    print(f"working directory: {work}")

    addr0 = f"127.0.0.1:{free_port()}"
    addr1 = f"127.0.0.1:{free_port()}"
    cfg = SystemConfig(
        protocol=ProtocolConfig(field=Field(TEST_MODULUS), mode=args.mode, kappa=8),
        n_bits=4,
        n_treatments=2,
        threshold_b=2,
        timeout_secs=20,
        party0_addr=addr0,
        party1_addr=addr1,
    )
    cfg_path = work / "system.cfg"
    save_config(cfg, cfg_path)
    (work / "records.csv").write_text(RECORDS)

    # enough preprocessing for the ingest plus a handful of queries
    budget = budget_for_query(
        12, cfg.n_bits, cfg.n_treatments,
        cfg.comparison_bit_length, cfg.protocol.kappa,
    )
    masks = (12 * (cfg.n_bits + 2 * cfg.n_treatments) + 4 * cfg.n_bits
             if args.mode == "authenticated" else 0)
    run("dealer", [
        sys.executable, "-m", "mpccdss.dealer",
        "--out-dir", str(work),
        "--triples", str(budget.triples),
        "--bits", str(budget.bits),
        "--masks", str(masks),
        "--config", str(cfg_path),
    ])

    def spawn(pid: int, listen: str, peer: str):
        argv = [
            sys.executable, "-m", "mpccdss.party",
            "--id", str(pid), "--config", str(cfg_path),
            "--listen", listen, "--peer", peer,
            "--db", str(work / f"db{pid}.bin"),
            "--preproc", str(work / f"party{pid}.preproc"),
        ]
        print(f"$ {' '.join(argv)} &")
        return subprocess.Popen(argv, stdout=subprocess.PIPE,
                                stderr=subprocess.DEVNULL, text=True)

    parties = [spawn(0, addr0, addr1), spawn(1, addr1, addr0)]
    try:
        await_ready(parties)
        print("both parties ready\n")

        mask_args = (["--masks", str(work / "client.masks")]
                     if args.mode == "authenticated" else [])
        run("ingest", [
            sys.executable, "-m", "mpccdss.clinician", "ingest",
            "--file", str(work / "records.csv"), "--config", str(cfg_path),
            *mask_args,
        ])
        print()
        run("query", [
            sys.executable, "-m", "mpccdss.clinician", "query",
            "--genotype", "0000", "--config", str(cfg_path), *mask_args,
        ])
    finally:
        for proc in parties:
            proc.terminate()
        for proc in parties:
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
        if not args.keep:
            import shutil

            shutil.rmtree(work, ignore_errors=True)
        else:
            print(f"kept {work}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
