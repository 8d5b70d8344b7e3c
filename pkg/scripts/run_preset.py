"""Run one or more shipped presets and print their summaries.

Usage:
    python3 scripts/run_preset.py gaussian-linear gmm-bsm --out runs
    python3 scripts/run_preset.py all --out runs --train.epochs=10
"""

import argparse
import os
import sys

from scorelab import experiments
from scorelab.cli import main as cli_main


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("presets", nargs="+", help="preset names, or 'all'")
    p.add_argument("--out", default="runs", help="parent output directory")
    args, extra = p.parse_known_args(argv)
    names = experiments.preset_names() if args.presets == ["all"] else args.presets
    status = 0
    for name in names:
        print(f"== {name}", flush=True)
        code = cli_main(["run", "--preset", name, "--out", os.path.join(args.out, name), *extra])
        status = status or code
    return status


if __name__ == "__main__":
    sys.exit(main())
