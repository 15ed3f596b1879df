"""RMSE versus SNR = -10..30 dB with a single transmission (MM omitted)."""

import sys

from _common import SCENARIOS, common_flags, sweep_parser

from misopos.cli import main

if __name__ == "__main__":
    args = sweep_parser(__doc__).parse_args()
    sys.exit(main(["sweep", "--scenario", str(SCENARIOS / "single_transmission.yaml"),
                   "--axis", "SNR_dB", "--values=-10:30:5", "--estimators", "ml2d,uml",
                   *common_flags(args)]))
