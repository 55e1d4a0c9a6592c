"""Compare the compiled and pure-Python nonce search kernels.

    python3 benchmarks/bench_pow.py [--difficulty 16] [--blocks 8]

Each kernel mines the same headers; nonces must agree. Prints hashes/s per backend.
"""

import argparse
import sys
import time

from swarmchain import pow
from swarmchain.blockchain import GENESIS, Transaction, header_split


def headers(n):
    out = []
    for i in range(n):
        tx = Transaction.create("bench", "counter", {"method": "increment"}, i, i)
        out.append((GENESIS.block_hash, [tx.tx_id], i))
    return out


def run(kernel, difficulty, work):
    nonces, hashes = [], 0
    t0 = time.perf_counter()
    for prev, txids, ts in work:
        prefix, suffix = header_split(1, prev, ts, "bench", difficulty, txids)
        nonce = kernel.search_nonce(prefix, suffix, difficulty, 0, 1 << 40)
        nonces.append(nonce)
        hashes += nonce + 1
    return nonces, hashes, time.perf_counter() - t0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--difficulty", type=int, default=16)
    ap.add_argument("--blocks", type=int, default=8)
    args = ap.parse_args(argv)
    work = headers(args.blocks)
    kernels = [("python", pow.python_kernel)]
    if pow.compiled_kernel is not None:
        kernels.insert(0, ("compiled", pow.compiled_kernel))
    else:
        print("compiled kernel not built; only the fallback is measured", file=sys.stderr)
    results, times = {}, {}
    for name, kernel in kernels:
        nonces, hashes, dt = run(kernel, args.difficulty, work)
        results[name], times[name] = nonces, dt
        print(f"{name:>8}: {hashes:>10} hashes in {dt:7.3f}s  {hashes / dt / 1e6:7.3f} MH/s")
    if len({tuple(v) for v in results.values()}) != 1:
        print("kernels disagree on nonces", file=sys.stderr)
        return 1
    if len(times) == 2:
        print(f"speedup: {times['python'] / times['compiled']:.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
