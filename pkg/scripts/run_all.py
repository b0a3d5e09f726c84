#!/usr/bin/env python3
"""Run every shipped config through its pipelines.

    python scripts/run_all.py [--out-root out] [--only twin_lines]
"""
import argparse
import time
from pathlib import Path

from magkam.cli import execute
from magkam.config import ExperimentConfig

ROOT = Path(__file__).resolve().parents[1]

PLAN = {
    "kinetic_alpha.json": ["alpha"],
    "twin_lines.json": ["alpha", "sets", "perturb", "continuity"],
    "free_orbit.json": ["hyperbolic"],
    "free_orbit_weighted.json": ["hyperbolic"],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-root", default=None, help="write under this directory instead")
    ap.add_argument("--only", default=None, help="config stem to run")
    args = ap.parse_args()
    for name, commands in PLAN.items():
        if args.only and Path(name).stem != args.only:
            continue
        cfg = ExperimentConfig.load(ROOT / "configs" / name)
        out = Path(args.out_root) / Path(name).stem if args.out_root else cfg.out_dir()
        for cmd in commands:
            t = time.perf_counter()
            print(f"== {name} :: {cmd}")
            m = execute(cmd, cfg, out)
            print(f"   {len(m.outputs)} files in {out} ({time.perf_counter() - t:.1f}s)")


if __name__ == "__main__":
    main()
