"""Run the acceptance suite and print one PASS/FAIL line per criterion.

Usage:
    python3 scripts/run_acceptance.py           # all 11 criteria
    python3 scripts/run_acceptance.py --fast    # skip the slow dimension sweep
"""

import argparse
import os
import sys

import pytest

HERE = os.path.dirname(os.path.abspath(__file__))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--fast", action="store_true", help="skip tests marked slow")
    args = p.parse_args(argv)
    target = os.path.join(HERE, os.pardir, "tests", "test_acceptance.py")
    opts = [target, "-q", "-p", "no:cacheprovider"]
    if args.fast:
        opts += ["-m", "not slow"]
    return pytest.main(opts)


if __name__ == "__main__":
    sys.exit(main())
