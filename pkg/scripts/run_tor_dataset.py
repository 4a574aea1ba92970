#!/usr/bin/env python3
"""Run the CFS-ANN pipeline on the published UNB-CIC Tor/nonTor flow CSV.

The dataset is not bundled; download the Tor/nonTor flow CSV from the
UNB-CIC dataset page and point this script at it. Rows with non-finite
rate cells (the published file contains Infinity byte rates for
zero-duration flows) are dropped.

Usage:
    python scripts/run_tor_dataset.py /path/to/tor_nontor_flows.csv \
        [--seed 7] [--classifier ann] [--out-dir out/tor]
"""

import argparse
import sys
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO_ROOT / "src"))

from flowsieve.cli import main as flowsieve_main  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("dataset_csv")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--classifier", choices=["ann", "svm", "both"],
                        default="ann")
    parser.add_argument("--hidden", type=int, default=6)
    parser.add_argument("--out-dir", default="out/tor")
    args = parser.parse_args()

    if not Path(args.dataset_csv).is_file():
        print(f"error: dataset file not found: {args.dataset_csv}",
              file=sys.stderr)
        return 2
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = out_dir / "config.ini"
    config.write_text(
        "[input]\n"
        f"flows = {args.dataset_csv}\n"
        "bad_value_policy = drop\n"
        "[select]\nenabled = true\n"
        "[train]\n"
        f"classifier = {args.classifier}\n"
        "[mlp]\n"
        f"mode = lm\nhidden = {args.hidden}\nmax_epochs = 200\n")
    return flowsieve_main(["pipeline", "--config", str(config),
                           "--seed", str(args.seed),
                           "--out-dir", str(out_dir), "--reference"])


if __name__ == "__main__":
    sys.exit(main())
