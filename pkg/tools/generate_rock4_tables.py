#!/usr/bin/env python3
"""Regenerate the embedded fourth-order coefficient table.

Writes src/stork/data/rock4_tables.npz.  Slow (minutes); run only when the
synthesis code changes, then commit the refreshed table.
"""

import pathlib
import sys

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from stork.rock4_synthesis import build_table  # noqa: E402


def main():
    table = build_table(verbose=True)
    out = ROOT / "src" / "stork" / "data" / "rock4_tables.npz"
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(out, **table)
    print(f"wrote {out} ({out.stat().st_size} bytes, "
          f"{table['degrees'].size} degrees)")


if __name__ == "__main__":
    main()
