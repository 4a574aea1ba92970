#!/usr/bin/env python3
"""Desk-scale rerun of the four-way comparison on synthetic flows.

Generates the bundled two-cluster dataset, then trains ANN and SVM twice:
once on all 28 columns and once on the correlation-selected subset. The
four result columns (ANN, CFS-ANN, SVM, CFS-SVM) are merged into a single
comparison table, optionally alongside the published C4.5 baseline.

Usage:
    python scripts/run_synthetic_experiment.py [--seed 7] [--out-dir out/experiment]
"""

import argparse
import sys
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO_ROOT / "src"))

from flowsieve import metrics  # noqa: E402
from flowsieve.cli import main as flowsieve_main  # noqa: E402


def run_variant(out_dir: Path, seed: int, select: bool) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    config = out_dir / "config.ini"
    config.write_text(
        "[input]\nsynth = true\n"
        "[select]\n"
        f"enabled = {'true' if select else 'false'}\n"
        "[train]\nclassifier = both\n"
        "[mlp]\nmode = lm\nhidden = 6\nmax_epochs = 300\n")
    rc = flowsieve_main(["pipeline", "--config", str(config),
                         "--seed", str(seed), "--out-dir", str(out_dir)])
    if rc != 0:
        raise SystemExit(rc)
    return metrics.parse_report_csv((out_dir / "report.csv").read_text())


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out-dir", default="out/experiment")
    parser.add_argument("--reference", action="store_true",
                        help="append the published C4.5 column")
    args = parser.parse_args()

    out_dir = Path(args.out_dir)
    plain = run_variant(out_dir / "all_features", args.seed, select=False)
    selected = run_variant(out_dir / "selected_features", args.seed, select=True)

    columns = {
        "ANN": plain["ANN"],
        "CFS-ANN": selected["CFS-ANN"],
        "SVM": plain["SVM"],
        "CFS-SVM": selected["CFS-SVM"],
    }
    table = metrics.render_table(columns, include_reference=args.reference)
    (out_dir / "comparison.txt").write_text(table)
    (out_dir / "comparison.csv").write_text(
        metrics.render_csv(columns, include_reference=args.reference))
    print()
    print(table, end="")
    print(f"\nwrote {out_dir}/comparison.txt")
    return 0


if __name__ == "__main__":
    sys.exit(main())
