"""RMSE of d, theta and position versus G = 1..20 at SNR = 5 dB."""

import sys

from _common import SCENARIOS, common_flags, sweep_parser

from misopos.cli import main

if __name__ == "__main__":
    args = sweep_parser(__doc__).parse_args()
    sys.exit(main(["sweep", "--scenario", str(SCENARIOS / "default.yaml"), "--axis", "G",
                   "--values", "1:20", "--estimators", "ml2d,uml,mm", *common_flags(args)]))
