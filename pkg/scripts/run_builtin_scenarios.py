"""Run every built-in scenario and write its report plus one summary CSV.

    python scripts/run_builtin_scenarios.py --out results/ [--seed N]

Exits 1 if any scenario fails an assertion.
"""

import argparse
import csv
import sys
import time
from pathlib import Path

from hybridedge.scenarios import builtin_names, run_scenario


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="results", help="directory for reports (default: results)")
    parser.add_argument("--seed", type=int, help="override each scenario's own seed")
    args = parser.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for name in builtin_names():
        start = time.perf_counter()
        report = run_scenario(name, args.seed)
        elapsed = time.perf_counter() - start
        (out / f"{name}.json").write_text(report.to_json())
        print(report.render())
        comparison = report.comparisons[0] if report.comparisons else {}
        rows.append({
            "scenario": name,
            "seed": report.seed,
            "passed": report.passed,
            "wall_s": f"{elapsed:.3f}",
            "final_counts": " ".join(f"{k}={v}" for k, v in report.final_counts.items()),
            "migrations": len(report.migrations),
            "orphans": len(report.orphans),
            "queued": len(report.queue),
            "mem_saving_pct": f"{comparison['mem_saving_pct']:.4f}" if comparison else "",
            "proc_time_delta_ms": f"{comparison['proc_time_delta_ms']:+.4f}" if comparison else "",
        })

    with (out / "summary.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"\nwrote {len(rows)} reports and summary.csv to {out}/")
    return 0 if all(r["passed"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
