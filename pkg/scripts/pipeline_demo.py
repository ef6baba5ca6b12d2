"""Run the full pipeline on configs/demo.toml and list the artifacts it wrote."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from clusterlogit.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(ROOT / "configs" / "demo.toml"))
    parser.add_argument("--out", default="demo_out")
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args(argv)
    code = main(["all", "--config", args.config, "--out", args.out, "--workers", str(args.workers)])
    if code == 0:
        for p in sorted(Path(args.out).iterdir()):
            print(p.name, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(run())
