"""Compare sampler visit frequencies with the exact posterior on a small matrix."""
import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
import oracles  # noqa: E402
from festgroups.irm import IRMConfig, IRMState  # noqa: E402
from festgroups.irm import _kernels as K  # noqa: E402


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rows", type=int, default=4)
    ap.add_argument("--cols", type=int, default=3)
    ap.add_argument("--alpha", type=float, default=0.5)
    ap.add_argument("--sweeps", type=int, default=1_000_000)
    ap.add_argument("--split-merge", type=int, default=0, help="moves per mode per sweep")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    X = rng.random((args.rows, args.cols)) < 0.5
    exact, _ = oracles.exact_posterior(X, args.alpha, args.alpha, 1.0)
    state = IRMState(X, np.zeros(args.rows, int), np.zeros(args.cols, int),
                     IRMConfig(alpha_row=args.alpha, alpha_col=args.alpha))
    hist = K.chain_histogram(state.X, state.Xt, state.z1.copy(), state.z2.copy(),
                             args.alpha, args.alpha, args.sweeps, True, args.split_merge, 3,
                             state.tb, state.tb2, state.tlog, state.ws1, state.ws2, args.seed)
    p = hist / hist.sum()
    q = np.zeros_like(p)
    for (z1, z2), w in exact.items():
        q[oracles.code(z1), oracles.code(z2)] = w
    print(X.astype(int))
    print(f"{len(exact)} partition pairs, total variation {0.5 * np.abs(p - q).sum():.4f}")


if __name__ == "__main__":
    main()
