"""Smoke tests for the cedar_core Python module.

Usage: python smoke.py <directory containing the built module>

Checks that the bindings round-trip data faithfully against NumPy
references, that the privacy bounds reproduce frozen values, and that the
pipeline entry points are deterministic.
"""

import json
import math
import sys
import tempfile
from pathlib import Path

import numpy as np

sys.path.insert(0, sys.argv[1])
import cedar_core  # noqa: E402

CHECKS = 0


def check(condition, label):
    global CHECKS
    if not condition:
        raise AssertionError(f"smoke check failed: {label}")
    CHECKS += 1


def simulate(p, n, M, seed):
    out = cedar_core.simulate_sites(p=p, n=n, M=M, sigma0_sq=1.0, seed=seed)
    return np.asarray(out["beta0"]), [
        (np.asarray(X), np.asarray(y)) for X, y in out["sites"]
    ]


def main():
    beta0, sites = simulate(p=3, n=40, M=4, seed=11)
    check(beta0.shape == (3,), "beta0 shape")
    check(all(X.shape == (40, 3) and y.shape == (40,) for X, y in sites),
          "site shapes")

    # per-site fit against the NumPy least-squares reference
    X1, y1 = sites[0]
    local = cedar_core.local_fit(X1, y1)
    ref_beta = np.linalg.lstsq(X1, y1, rcond=None)[0]
    check(np.allclose(local["beta"], ref_beta, atol=1e-10), "local beta")
    resid = y1 - X1 @ ref_beta
    check(math.isclose(local["sigma_sq"], float(resid @ resid) / 40,
                       rel_tol=1e-10), "local sigma_sq uses the MLE divisor")
    check(np.allclose(local["S"], X1.T @ X1, atol=1e-10), "local Gram")

    # pooled fit equals stacked least squares
    stacked_X = np.vstack([X for X, _ in sites])
    stacked_y = np.concatenate([y for _, y in sites])
    pooled = cedar_core.opt(sites)
    check(np.allclose(pooled["beta"],
                      np.linalg.lstsq(stacked_X, stacked_y, rcond=None)[0],
                      atol=1e-10), "pooled beta equals stacked lstsq")
    check(pooled["N"] == 160, "pooled N")

    # naive average equals the NumPy mean of per-site fits
    betas = [np.asarray(cedar_core.local_fit(X, y)["beta"])
             for X, y in sites]
    check(np.allclose(cedar_core.avgm(betas), np.mean(betas, axis=0),
                      atol=1e-12), "avgm is the mean")

    # surrogate refinement matches its closed form
    anchor = betas[0]
    grads = [-(X.T @ (y - X @ anchor)) / len(y) for X, y in sites]
    gbar = np.mean(grads, axis=0)
    expected = anchor - 40 * np.linalg.solve(X1.T @ X1, gbar)
    check(np.allclose(cedar_core.csl(sites, avgm_init=False), expected,
                      atol=1e-10), "surrogate refinement closed form")

    # identical sites: the EM aggregate fixes the common estimate
    clone = [(X1, y1)] * 5
    agg = cedar_core.cedar_fit(clone, K=4, psi=100.0, seed=3)
    check(np.allclose(agg["beta"], ref_beta, atol=1e-9),
          "identical sites reproduce the common fit")
    check(agg["converged"], "EM converged on identical sites")

    # heterogeneous sites: finite objective, sane shapes
    fit = cedar_core.cedar_fit(sites, K=8, psi=100.0, seed=5)
    check(np.asarray(fit["beta"]).shape == (3,), "aggregate beta shape")
    check(fit["sigma_sq"] > 0, "aggregate variance positive")
    check(math.isfinite(fit["loglik"]), "objective finite")
    check(fit["N"] == 160, "aggregate N")

    # posterior draws have the advertised shapes
    draws = cedar_core.posterior_draws(X1, y1, K=6, psi=50.0, seed=2)
    check(np.asarray(draws["beta_tilde"]).shape == (3, 6), "draw matrix")
    check(np.asarray(draws["sigma_tilde_sq"]).shape == (6,),
          "variance draws")
    check(np.asarray(draws["norm_cols"]).shape == (3, 6),
          "normalized columns")

    # frozen privacy-bound values
    fwd, rev = cedar_core.epsilon_bound(K=4, c=0.25, xi2=0.01,
                                        lambda_priv=1.0, delta=1 / 16,
                                        psi=100.0)
    check(math.isclose(fwd, 2.2088869645324087, rel_tol=1e-12),
          "forward bound frozen value")
    check(math.isclose(rev, 0.46628710262841955, rel_tol=1e-12),
          "reverse bound frozen value")
    check(math.isclose(
        cedar_core.expected_epsilon_bound(4, 0.25, 100.0, 1 / 16),
        1.6250507206985791, rel_tol=1e-12), "expected bound frozen value")
    check(math.isclose(cedar_core.normal_quantile(0.975),
                       1.959963984540054, rel_tol=1e-12),
          "normal quantile")

    # Monte Carlo minimum epsilon: positive, finite, deterministic
    eps1 = cedar_core.mc_min_epsilon(n=16, p=4, K=4, psi=100.0, c=0.25,
                                     reps=2000, redraws=2, seed=7)
    eps2 = cedar_core.mc_min_epsilon(n=16, p=4, K=4, psi=100.0, c=0.25,
                                     reps=2000, redraws=2, seed=7)
    check(0 < eps1 < 5 and eps1 == eps2, "mc_min_epsilon deterministic")

    # file pipeline over CSVs via the file-drop protocol
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        files = []
        rng = np.random.default_rng(99)
        true_beta = np.array([1.0, -0.5])
        for site in range(3):
            X = rng.standard_normal((30, 2))
            y = X @ true_beta + rng.standard_normal(30)
            path = tmp / f"site{site}.csv"
            np.savetxt(path, np.column_stack([X, y]), delimiter=",")
            files.append(str(path))
        drop = str(tmp / "drop")
        report1 = cedar_core.analyze_files(files, method="cedar", K=2,
                                           psi=100.0, alpha=0.05,
                                           alternative="two_sided", seed=4,
                                           drop_root=drop)
        report2 = cedar_core.analyze_files(files, method="cedar", K=2,
                                           psi=100.0, alpha=0.05,
                                           alternative="two_sided", seed=4,
                                           drop_root=drop)
        check(report1 == report2, "analysis is deterministic")
        doc = json.loads(report1)
        check(doc["method"] == "cedar" and doc["sites"] == 3
              and doc["p"] == 2 and doc["N"] == 90, "analysis header fields")
        check(len(doc["beta"]) == 2 and len(doc["tests"]) == 2
              and len(doc["intervals"]) == 2, "analysis outputs")
        check(np.allclose(doc["beta"], true_beta, atol=0.5),
              "analysis recovers the signal")
        check(doc["communication"]["rounds"] == 1, "one exchange round")
        check((Path(drop) / "round1" / "request.json").exists(),
              "file-drop layout on disk")
        try:
            cedar_core.analyze_files(files, method="ols")
            check(False, "unknown method must raise")
        except Exception as exc:  # noqa: BLE001
            check("unknown method" in str(exc), "unknown method message")

    # experiment harness: deterministic long-form CSV
    config = json.dumps({
        "p": 2, "n_grid": [12], "M_grid": [2], "K_list": [0],
        "methods": ["avgm", "opt"], "replicates": 2, "master_seed": 3,
    })
    csv1 = cedar_core.run_experiment_csv(config)
    csv2 = cedar_core.run_experiment_csv(config)
    check(csv1 == csv2, "experiment CSV is byte-stable")
    lines = csv1.strip().split("\n")
    check(lines[0] == "method,p,n,M,K,replicate,l2_error,power,"
                      "specificity,coverage,comm_rounds,failed",
          "results CSV header")
    check(len(lines) == 5, "two methods x two replicates")

    print(f"python smoke: {CHECKS} checks passed")


if __name__ == "__main__":
    main()
