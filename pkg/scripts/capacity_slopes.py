"""Capacity of l-inf balls against r^(d-2): prints cap(B(0, r)) and the
log-log slope between consecutive radii."""
import argparse
import math

from interlace.lattice import Box
from interlace.potential import equilibrium_box, green_table


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=3)
    ap.add_argument("--radii", type=int, nargs="+", default=[2, 4, 6, 8, 11, 16])
    args = ap.parse_args()
    prev = None
    for r in args.radii:
        box = Box.ball((0,) * args.d, r)
        cap = equilibrium_box(box, green_table(args.d, 2 * r)).capacity
        slope = "" if prev is None else f"{math.log(cap / prev[1]) / math.log(r / prev[0]):.4f}"
        print(f"r={r:3d} cap={cap:.6f} slope={slope}")
        prev = (r, cap)


if __name__ == "__main__":
    main()
