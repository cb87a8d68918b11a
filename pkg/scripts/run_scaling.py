#!/usr/bin/env python3
"""Measure online query latency across database sizes and fit a line.

Runs the full protocol stack over in-process channels (no TCP, no OS
processes) so the numbers reflect protocol work rather than network noise.
Writes one CSV row per (size, repetition) and prints the linear fit.

    python3 scripts/run_scaling.py
    python3 scripts/run_scaling.py --sizes 100,1000,10000 --reps 5 --mode authenticated
"""

import argparse
import tempfile

from mpccdss.bench import render_rows_csv, run_sweep
from mpccdss.config import ProtocolConfig, SystemConfig
from mpccdss.field import TEST_MODULUS, Field


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="100,500,1000,2000,5000")
    parser.add_argument("--reps", type=int, default=3)
    parser.add_argument("--n-bits", type=int, default=128)
    parser.add_argument("--treatments", type=int, default=16)
    parser.add_argument("--threshold", type=int, default=20)
    parser.add_argument("--mode", choices=("semi-honest", "authenticated"),
                        default="semi-honest")
    parser.add_argument("--out", default="scaling.csv")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    cfg = SystemConfig(
        protocol=ProtocolConfig(
            field=Field(TEST_MODULUS), mode=args.mode, kappa=40
        ),
        n_bits=args.n_bits,
        n_treatments=args.treatments,
        threshold_b=args.threshold,
    )
    sizes = [int(tok) for tok in args.sizes.split(",") if tok.strip()]

    with tempfile.TemporaryDirectory(prefix="mpccdss-scaling-") as work:
        rows, fit = run_sweep(sizes, args.reps, cfg, work, seed=args.seed)

    with open(args.out, "w") as fh:
        fh.write(render_rows_csv(rows))
    print(f"wrote {len(rows)} rows to {args.out}")

    per_size = {}
    for row in rows:
        per_size.setdefault(row.db_size, []).append(row.wall_millis)
    print(f"{'db_size':>8}  {'mean_ms':>10}  {'triples':>10}")
    for size in sizes:
        mean = sum(per_size[size]) / len(per_size[size])
        triples = next(r.triples for r in rows if r.db_size == size)
        print(f"{size:>8}  {mean:>10.1f}  {triples:>10}")
    print(
        f"fit: wall_millis = {fit.slope_ms_per_record:.4f}*D + "
        f"{fit.intercept_ms:.2f}  (R^2 = {fit.r_squared:.4f})"
    )
    if fit.r_squared < 0.98:
        print("warning: fit is poor; rerun on a quieter machine")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
