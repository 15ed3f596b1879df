"""RMSE versus LMR = 0..20 dB at SNR = 15 dB, G = 10, two NLOS paths."""

import sys

from _common import SCENARIOS, common_flags, sweep_parser

from misopos.cli import main

if __name__ == "__main__":
    args = sweep_parser(__doc__).parse_args()
    sys.exit(main(["sweep", "--scenario", str(SCENARIOS / "multipath.yaml"), "--axis", "LMR_dB",
                   "--values", "0:20:5", "--estimators", "ml2d,uml,mm", *common_flags(args)]))
