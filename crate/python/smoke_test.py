#!/usr/bin/env python3
"""Smoke test for the `dualfilter` Python extension.

Build the extension first (from the repository root):

    cargo build --release -p dualfilter-python
    cp target/release/libdualfilter.so python/dualfilter.so   # Linux
    # macOS: cp target/release/libdualfilter.dylib python/dualfilter.so

then run:

    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import dualfilter as df


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def main():
    # --- encoding and decomposition -------------------------------------
    assert df.e_encode(1, 1) == [1.0]
    assert df.e_encode(0, 1) == [-1.0]
    s_bar, s_tilde = df.decompose([1.0, 3.0])
    assert s_bar == 2.0 and s_tilde == [1.0]

    # --- linear Gaussian model: duality and oracle agreement ------------
    model = df.LinearGaussianModel.random_stable(2, 1, 2, 8, seed=5)
    xs, zs = model.simulate(seed=11)
    z = zs[: model.horizon]
    f = [1.0, -0.5]

    u = [[0.3] for _ in range(model.horizon)]
    j = model.dual_cost(u, f)
    mse = model.mse_exact(u, f)
    assert close(2.0 * j, mse, 1e-10), (j, mse)

    mean_k, var_k, _ = model.kalman_augmented(z, f)
    mean_d, var_d, weights = model.predict(f, z)
    assert close(mean_k, mean_d, 1e-8), (mean_k, mean_d)
    assert close(var_k, var_d, 1e-8), (var_k, var_d)
    assert len(weights) == model.horizon

    # --- HMM: filter, dual filter, weights ------------------------------
    hmm = df.Hmm.two_cycle(8, 2)
    x_path, z_path = hmm.simulate(40, seed=3)
    z_path = z_path[:40]
    pis, loglik = hmm.forward_filter(z_path)
    assert loglik <= 0.0
    rho, magnitudes, layers = hmm.dual_filter_path(z_path)
    gap = max(
        max(abs(a - b) for a, b in zip(r, p)) for r, p in zip(rho, pis)
    )
    assert gap < 1e-3, gap

    # Weights concentrate right after observed ones.
    for t, mag in enumerate(magnitudes):
        position = t + 1
        event = position == 1 or z_path[position - 2] == 1
        if not event:
            assert mag < 1e-6, (position, mag)

    # Next-token prediction at the branch split.
    pred = hmm.next_token(pis[0])
    assert close(pred[1], 0.5, 1e-9)

    # Tree oracle on a small instance.
    small = df.Hmm.two_cycle(4, 1)
    _, z_small = small.simulate(8, seed=1)
    const, u_path = small.oracle_weights(z_small[:8], [1.0, 0.0, 0.0, 1.0])
    assert len(u_path) == 8

    # Baum-Welch on uniform binary noise recovers the token frequency.
    paths = [[(s * 7 + i) % 2 for i in range(30)] for s in range(10)]
    fitted, trace = df.baum_welch(paths, d_hat=1, m=1, iterations=10, restarts=1, seed=0)
    assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))
    assert close(fitted.c[0][1], 0.5, 0.1)

    # Perturbation endpoints.
    flat = hmm.perturb(1.0, "transition")
    assert all(close(v, 1.0 / 8.0, 1e-12) for row in flat.a for v in row)

    # Cross-entropy of the exact filter stays near the analytic benchmark.
    loss = hmm.filter_loss(hmm, paths=100, length=64, burn_in=64, seed=9)
    benchmark = math.log(2.0) / (0.5 * 8 + 0.5 * 3)
    assert abs(loss - benchmark) / benchmark < 0.1, (loss, benchmark)

    print("smoke test passed")


if __name__ == "__main__":
    main()
