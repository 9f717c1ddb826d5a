"""How the Gumbel trick picks a mapping module, and how temperature shapes the relaxed weights.

    python demos/gumbel_selection.py
"""

import numpy as np

from mmpms.selector import gumbel_softmax_sample


def main():
    pi = np.array([0.05, 0.1, 0.15, 0.2, 0.22, 0.28])
    n = 100_000
    res = gumbel_softmax_sample(np.tile(pi, (n, 1)), 0.67, np.random.default_rng(0))
    freq = np.bincount(res.z, minlength=pi.size) / n
    print("target pi      ", np.round(pi, 3))
    print("argmax freq    ", np.round(freq, 3))
    for tau in (5.0, 1.0, 0.67, 0.1, 0.01):
        r = gumbel_softmax_sample(np.tile(pi, (2000, 1)), tau, np.random.default_rng(1))
        print(f"tau={tau:<5} mean largest relaxed weight {r.soft.data.max(axis=-1).mean():.3f}")


if __name__ == "__main__":
    main()
