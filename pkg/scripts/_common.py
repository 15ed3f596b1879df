"""Shared argument handling for the sweep scripts."""

import argparse
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


def sweep_parser(description: str, trials: int = 200) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--trials", type=int, default=trials)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    return p


def common_flags(args) -> list[str]:
    return ["--trials", str(args.trials), "--seed", str(args.seed),
            "--workers", str(args.workers), "--out", str(args.out)]
