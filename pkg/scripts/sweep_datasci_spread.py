"""Container vs unikernel comparison with sampled (non-zero spread) profiles.

The built-in datasci scenario pins both profiles to point values. This script
drops those pins, so each run samples memory and time from the bundled
calibration ranges, and reports how the saving and time delta vary over seeds.

    python scripts/sweep_datasci_spread.py --seeds 200 --instances 20 --csv sweep.csv
"""

import argparse
import csv
import statistics
import sys
from dataclasses import replace

from hybridedge.reports import MetricsLog, compare, select
from hybridedge.scenarios import TraceEvent, load_scenario, run_scenario


def sampled_doc(instances):
    doc = load_scenario("paper-datasci-hybrid")
    trace = []
    for event in doc.trace:
        if event.action == "submit":
            event = TraceEvent(event.at_ms, event.action, replace(event.value, instances=instances))
        trace.append(event)
    return replace(doc, name="datasci-sampled", calibration={}, assertions=(), trace=tuple(trace))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=100)
    parser.add_argument("--instances", type=int, default=10, help="instances per runtime per run")
    parser.add_argument("--csv", help="write one row per seed here")
    args = parser.parse_args(argv)

    doc = sampled_doc(args.instances)
    rows = []
    for seed in range(args.seeds):
        records = MetricsLog.loads(run_scenario(doc, seed).metrics_log).records
        report = compare(select(records, "container-datasci"), select(records, "hybrid-datasci"))
        rows.append({"seed": seed, "mem_saving_pct": report.mem_saving_pct,
                     "proc_time_delta_ms": report.proc_time_delta_ms, "verdict": report.verdict})

    savings = [r["mem_saving_pct"] for r in rows]
    deltas = [r["proc_time_delta_ms"] for r in rows]
    print(f"{args.seeds} seeds x {args.instances} instances per runtime")
    print(f"memory saving %   mean {statistics.mean(savings):.3f}  stdev {statistics.pstdev(savings):.3f}  "
          f"min {min(savings):.3f}  max {max(savings):.3f}")
    print(f"time delta ms     mean {statistics.mean(deltas):+.4f}  stdev {statistics.pstdev(deltas):.4f}  "
          f"min {min(deltas):+.4f}  max {max(deltas):+.4f}")
    verdicts = sorted({r["verdict"] for r in rows})
    print(f"verdicts seen: {verdicts}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
