"""End-to-end demo: synthesize a dataset, run the 2x3 experiment matrix, show the summary.

Everything lands under --workdir:

    workdir/
      data/images/*.png     synthetic fundus-style inputs
      data/labels.csv       manifest
      matrix/<arch>_<filter>/   one run directory per cell
      matrix/summary.csv    aggregate table

Usage: python3 scripts/run_demo_matrix.py --workdir demo --epochs 3 --size 48
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from make_demo_dataset import generate

from fundusdl.cli import main as fundusdl


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", required=True)
    ap.add_argument("--count", type=int, default=60)
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--size", type=int, default=48, help="network input side length")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--parallel", action="store_true", help="one process per cell")
    args = ap.parse_args(argv)

    work = Path(args.workdir)
    data = work / "data"
    csv_path = data / "labels.csv"
    if not csv_path.exists():
        generate(data, args.count, max(args.size, 48), args.seed)
        print(f"dataset: {csv_path}")
    else:
        print(f"dataset: {csv_path} (reused)")

    matrix_args = [
        "matrix",
        "--csv", str(csv_path),
        "--images", str(data / "images"),
        "--out", str(work / "matrix"),
        "--epochs", str(args.epochs),
        "--size", str(args.size),
        "--batch", "16",
        "--seed", str(args.seed),
    ]
    if args.parallel:
        matrix_args.append("--parallel")
    code = fundusdl(matrix_args)
    if code != 0:
        return code

    print()
    print((work / "matrix" / "summary.csv").read_text(), end="")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
