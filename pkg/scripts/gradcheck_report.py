#!/usr/bin/env python3
"""Sweep the analytic-vs-numeric gradient checks and print a table.

Covers the rasterizer backward pass (every parameter of every primitive
on small random scenes) and the attention fusion block (inputs and all
weights). Exits nonzero if any coordinate disagrees with central finite
differences beyond the tolerances.
"""

import argparse
import sys

import numpy as np

from semsplat.attention import AttentionBlockParams, TokenMatrix, attention_gradcheck
from semsplat.diagnostics import rasterizer_gradcheck


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=8)
    parser.add_argument("--count", type=int, default=6)
    parser.add_argument("--feature-dim", type=int, default=4)
    args = parser.parse_args(argv)

    failed = 0
    print(f"{'check':<28} {'coords':>7} {'max abs':>10} {'max rel':>10} verdict")
    for seed in range(args.seeds):
        degree = seed % 4
        rep = rasterizer_gradcheck(
            seed, count=args.count, feature_dim=args.feature_dim, sh_degree=degree
        )
        verdict = "ok" if rep.passed else f"FAIL ({len(rep.failures)} coords)"
        failed += not rep.passed
        print(f"{'rasterizer seed %d deg %d' % (seed, degree):<28} "
              f"{rep.coords_checked:>7} {rep.max_abs_err:>10.2e} "
              f"{rep.max_rel_err:>10.2e} {verdict}")

    rng = np.random.default_rng(0)
    for heads in (1, 2, 4):
        params = AttentionBlockParams.random(8, rng, heads=heads)
        p = TokenMatrix(rng.normal(size=(4, 8)), "point")
        f = TokenMatrix(rng.normal(size=(5, 8)), "image")
        rep = attention_gradcheck(params, p, f)
        verdict = "ok" if rep.passed else f"FAIL ({len(rep.failures)} coords)"
        failed += not rep.passed
        print(f"{'attention heads=%d' % heads:<28} "
              f"{rep.coords_checked:>7} {rep.max_abs_err:>10.2e} "
              f"{rep.max_rel_err:>10.2e} {verdict}")

    if failed:
        print(f"{failed} check(s) failed")
        return 1
    print("all gradients match finite differences")
    return 0


if __name__ == "__main__":
    sys.exit(main())
