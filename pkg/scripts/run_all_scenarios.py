#!/usr/bin/env python3
"""Run every shipped scenario config and print a one-line verdict summary.

Exits 0 only if every scenario run returned 0. Pass --configs to point at
a different directory of INI files, --out to redirect all outputs.
"""

import argparse
import glob
import os
import sys
import time

HERE = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, os.path.join(HERE, "..", "src"))

from peanobsde.cli import main as cli_main  # noqa: E402


def run_one(path, out_root):
    name = os.path.splitext(os.path.basename(path))[0]
    argv = ["run", "--config", path]
    if out_root:
        argv += ["--out", os.path.join(out_root, name)]
    started = time.perf_counter()
    code = cli_main(argv)
    return name, code, time.perf_counter() - started


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--configs",
                    default=os.path.join(HERE, "..", "configs"))
    ap.add_argument("--out", default=None,
                    help="root directory for all scenario outputs")
    args = ap.parse_args()

    paths = sorted(glob.glob(os.path.join(args.configs, "*.ini")))
    if not paths:
        print(f"no configs under {args.configs}", file=sys.stderr)
        return 2

    results = []
    for path in paths:
        print(f"=== {os.path.basename(path)}")
        results.append(run_one(path, args.out))
        print()

    width = max(len(name) for name, _, _ in results)
    print("summary:")
    for name, code, wall in results:
        tag = "ok" if code == 0 else f"exit {code}"
        print(f"  {name:<{width}}  {tag:>7}  {wall:6.1f}s")
    return 0 if all(code == 0 for _, code, _ in results) else 1


if __name__ == "__main__":
    sys.exit(main())
