"""Equal-data and correlation reports on a small synthetic benchmark.

First the equal-data protocol: for each n, a PMDG arm trains on n source
images and an MDG arm on n images split over three real domains, with the
same number of optimizer steps. Then a 4-algorithm sweep in both modes feeds
the MDG vs PMDG correlation report. Everything lands in --out as CSV and
Markdown (plus PNG with --plot).

    python demos/03_reports.py --out demo_out/reports --plot
"""

import argparse
from pathlib import Path

from pmdg.harness import (
    ExperimentConfig,
    RecordSink,
    equal_data_protocol,
    load_sweep,
    render_report,
    run_sweep,
)

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo_out/reports")
    ap.add_argument("--plot", action="store_true")
    args = ap.parse_args()
    out = Path(args.out)
    sink = RecordSink(out / "records.jsonl")

    configs = load_sweep(ROOT / "configs" / "correlation_sweep.json")
    print(f"sweep: {len(configs)} cells")
    records = run_sweep(configs, sink)

    base = ExperimentConfig.from_dict({**configs[0].to_dict(), "trials": 2})
    for n in (60, 120, 180):
        pm, md = equal_data_protocol(base, "a", ["a", "b", "c"], n, sink)
        print(f"n={n}: pmdg {pm[0].sample_counts} mdg {md[0].sample_counts}")
        records += pm + md

    for kind in ("equal_data", "correlation"):
        for path in render_report(kind, records, out, plot=args.plot):
            print(path)
    print()
    print((out / "correlation.md").read_text())


if __name__ == "__main__":
    main()
