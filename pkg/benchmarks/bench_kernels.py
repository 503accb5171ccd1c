"""Time the sparse kernels under the compiled and numpy backends.

Usage::

    python benchmarks/bench_kernels.py [--n 200] [--rank 5] [--nnz 20000 100000] [--repeat 5]

Prints one row per (kernel, |Omega|, backend) with the best wall time over
``--repeat`` runs, and the speedup of the compiled kernels where available.
"""
import argparse
import timeit

import numpy as np

from tuckercg import tensor_core
from tuckercg.data_bench import sample_indices
from tuckercg.manifold import rand_point, rand_tangent
from tuckercg.tensor_core import (
    SparseTensor3,
    sparse_core_contract,
    sparse_directional,
    sparse_eval_tucker,
    sparse_grad_pass,
    sparse_kron_contract,
)


def available_backends():
    names = []
    for name in ("cython", "python"):
        try:
            tensor_core.set_backend(name)
        except ImportError:
            continue
        names.append(name)
    return names


def kernels(x, xi, S):
    return {
        "eval_tucker": lambda: sparse_eval_tucker(x, S),
        "kron_contract_1": lambda: sparse_kron_contract(S, x, 1),
        "core_contract": lambda: sparse_core_contract(S, x),
        "grad_pass": lambda: sparse_grad_pass(S, x, 1.0),
        "directional": lambda: sparse_directional(x, xi, S.idx),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--rank", type=int, default=5)
    ap.add_argument("--nnz", type=int, nargs="+", default=[20000, 100000])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; timing the numpy fallback only")
    rng = np.random.default_rng(args.seed)
    dims, ranks = (args.n,) * 3, (args.rank,) * 3
    x = rand_point(dims, ranks, rng)
    xi = rand_tangent(x, rng)

    print(f"dims {dims}, ranks {ranks}, best of {args.repeat}")
    print(f"{'kernel':<16}{'|Omega|':>9}" + "".join(f"{b + ' [ms]':>16}" for b in backends)
          + (f"{'speedup':>10}" if len(backends) == 2 else ""))
    for m in args.nnz:
        lin = sample_indices(dims, m, rng)
        S = SparseTensor3.from_entries(dims, np.stack(np.unravel_index(lin, dims), axis=1),
                                       rng.standard_normal(m))
        for name in kernels(x, xi, S):
            times = []
            for b in backends:
                tensor_core.set_backend(b)
                fn = kernels(x, xi, S)[name]
                fn()  # warm up
                times.append(min(timeit.repeat(fn, number=1, repeat=args.repeat)))
            row = f"{name:<16}{m:>9}" + "".join(f"{1e3 * t:>16.3f}" for t in times)
            if len(times) == 2:
                row += f"{times[1] / times[0]:>9.1f}x"
            print(row)
    tensor_core.set_backend("auto")


if __name__ == "__main__":
    main()
