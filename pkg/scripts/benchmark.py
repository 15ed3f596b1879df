"""Estimator runtime versus grid size at G = 10, normalized to MM at P = 150."""

import argparse
import sys
from pathlib import Path

from _common import SCENARIOS

from misopos.cli import main

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--P", default="75,150,300,600")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--out", type=Path, required=True)
    args = p.parse_args()
    sys.exit(main(["bench", "--scenario", str(SCENARIOS / "default.yaml"), "--P", args.P,
                   "--repeats", str(args.repeats), "--out", str(args.out)]))
