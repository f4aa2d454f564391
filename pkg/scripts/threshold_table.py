"""Compute the class-separation threshold table across dimensions."""

import argparse
import math
import sys
import time

from meanfield2nn import piecewise_linear
from meanfield2nn.statics import delta_threshold_scan


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dims", type=int, nargs="*",
                        default=[5, 10, 20, 40, 80, 160])
    args = parser.parse_args()
    act = piecewise_linear()
    print(f"{'d':>6} {'delta_low':>10} {'delta_high':>11} {'interval':>9}")
    for d in args.dims:
        start = time.time()
        scan = delta_threshold_scan(act, d)
        bounds = scan.bounds()
        lo, hi = ("n/a", "n/a") if bounds is None else (f"{bounds[0]:.2f}",
                                                        f"{bounds[1]:.2f}")
        print(f"{d:>6} {lo:>10} {hi:>11} {str(scan.is_interval):>9}"
              f"   ({time.time() - start:.0f}s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
