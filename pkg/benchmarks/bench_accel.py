"""Time the numba kernels against their numpy twins.

Run with ``python benchmarks/bench_accel.py``.  Both paths are called
directly, so the ``POLTRANS_DISABLE_NUMBA`` flag does not matter here.
"""
import argparse
import math
import time

import numpy as np

from poltrans import _kernels
from poltrans.grid import DirectionGrid
from poltrans.medium import SpectralMedium
from poltrans.transport import PairOperator


def _best(func, repeat: int) -> float:
    func()  # warm-up, includes JIT compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        func()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--spacing", type=float, default=0.02, help="Cartesian grid spacing")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    medium = SpectralMedium(gamma=2.0 * math.pi / 50.0, alpha=1.0)
    grid = DirectionGrid.cartesian(args.spacing, kappa_max=0.5)
    op = PairOperator.build(medium, grid, imag_q=np.zeros((grid.size, 2, 2)))
    rows = np.repeat(np.arange(grid.size), np.diff(op.indptr))
    cols = op.indices
    ax, ay = grid.nodes[rows, 0].copy(), grid.nodes[rows, 1].copy()
    bx, by = grid.nodes[cols, 0].copy(), grid.nodes[cols, 1].copy()
    rng = np.random.default_rng(0)
    p11, p22 = rng.random(grid.size), rng.random(grid.size)
    p12 = 0.1 * (rng.random(grid.size) + 1j * rng.random(grid.size))
    gain_args = (op.indptr, op.indices, op.weight, *op.g, p11, p22, p12)

    cases = {
        "pair_gamma": (lambda: _kernels._pair_gamma_numba_entry(ax, ay, bx, by),
                       lambda: _kernels.pair_gamma_numpy(ax, ay, bx, by)),
        "apply_gain": (lambda: _kernels.apply_gain_numba(*gain_args),
                       lambda: _kernels.apply_gain_numpy(*gain_args)),
    }
    print(f"grid nodes {grid.size}, pairs {op.n_pairs}")
    print(f"{'kernel':<12}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}{'max diff':>12}")
    for name, (fast, slow) in cases.items():
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(fast(), slow()))
        t_fast, t_slow = _best(fast, args.repeat), _best(slow, args.repeat)
        print(f"{name:<12}{1e3 * t_fast:>12.2f}{1e3 * t_slow:>12.2f}"
              f"{t_slow / t_fast:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
