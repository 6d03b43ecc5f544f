"""End-to-end example: simulate a trial, then write a nine-method report and curves.

    python3 scripts/example_analysis.py --out runs/example
"""

import argparse
from pathlib import Path

from switchiv.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="scripts/configs/confounded.toml")
    ap.add_argument("--out", default="runs/example")
    args = ap.parse_args()

    out = Path(args.out)
    steps = [
        ["simulate", "--config", args.config, "--out", str(out / "data")],
        ["report", "--input", str(out / "data" / "subjects.csv"), "--covariates", "x1,x2",
         "--truncate", "50", "--out", str(out / "report")],
        ["analyze", "--input", str(out / "data" / "subjects.csv"), "--method", "iv-onestep",
         "--covariates", "x1,x2", "--svg", "--out", str(out / "iv-onestep")],
    ]
    for argv in steps:
        code = cli(argv)
        if code:
            raise SystemExit(code)


if __name__ == "__main__":
    main()
