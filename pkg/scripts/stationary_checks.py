"""Stationary-flow identity on random coefficients and stationary-phase decay of a smooth amplitude."""

import numpy as np

from eulerci.cli import stationary_check
from eulerci.diagnose import stationary_phase_decay


def run():
    for d, nu in ((2, 5), (2, 25), (3, 6)):
        rec = stationary_check(d, nu, 64, 10, 0)
        print(f"d={d} nu={nu:3d}  residual {rec['residual']:.2e}  averaging {rec['averaging_error']:.2e}")
    n = 256
    x = np.arange(n) * 2 * np.pi / n
    amps = {
        "exp(cos x1)": np.exp(np.cos(x))[:, None] + 0 * x[None, :],
        "bump(x1)": np.exp(-8 * (1 - np.cos(x)))[:, None] + 0 * x[None, :],
    }
    for name, a in amps.items():
        tab = stationary_phase_decay(a, (1, 0), [2, 4, 6, 8, 12])
        vals = " ".join(f"{v:.2e}" for v in tab.values)
        print(f"{name:12s} {vals}  slope {tab.slope:.2f}")


if __name__ == "__main__":
    run()
