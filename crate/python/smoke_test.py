"""Smoke test for the eki_py extension.

Build and install first:
    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o dist && pip install dist/eki_py-*.whl
"""

import json
import math
import random
import sys
import tempfile

import eki_py


def check(cond, msg):
    if not cond:
        sys.exit(f"FAIL: {msg}")
    print(f"ok: {msg}")


def main():
    alpha, t_next = eki_py.select_alpha_dmc([10.0, 12.0, 14.0], 5, 0.0)
    check(alpha > 1.0 and math.isclose(t_next, 1.0 / alpha), "DMC step")
    alpha, t_next = eki_py.select_alpha_dmc([0.1, 0.2], 30, 0.9)
    check(t_next == 1.0 and math.isclose(alpha, 10.0), "DMC clamps to t = 1")

    obs = eki_py.ObservationModel([1.0, 2.0], [0.5, 0.5])
    check(math.isclose(obs.misfit([0.0, 0.0]), 0.5 * (1 + 4) / 0.5), "misfit")

    r = 0.7
    c = eki_py.matern_covariance([0.0, 0.0], [r, 0.0], 1.0, [1.0, 1.0], 0.5)
    check(abs(c - math.exp(-r)) < 1e-12, "Matern nu = 1/2 is exponential")
    check(abs(eki_py.localisation_entry(1.0, 0.6) - 0.209302) < 1e-6, "localisation entry")
    check(math.isclose(eki_py.transform_uniform(0.0, 2.0, 4.0), 3.0), "uniform transform median")
    v = eki_py.transform_truncated_normal(3.0, 0.0, 1.0, -1.0, 1.0)
    check(-1.0 <= v <= 1.0, "truncated normal stays in support")

    rng = random.Random(0)
    n, q = 4, 3
    a = [[rng.gauss(0, 1) for _ in range(n)] for _ in range(q)]
    y = [sum(row) * 0.5 for row in a]
    obs = eki_py.ObservationModel(y, [0.1] * q)
    mean, cov = eki_py.linear_posterior(a, obs)
    run = eki_py.run_linear_eki(a, obs, 2000, 3, workers=2, failure_rate=0.1)
    check(run.converged and run.times[-1] == 1.0, f"linear EKI {run!r}")
    check(abs(sum(1 / x for x in run.alphas) - 1.0) < 1e-12, "schedule telescopes")
    ens_mean = [sum(row) / len(row) for row in run.final_ensemble]
    err = math.dist(ens_mean, mean) / math.hypot(*mean)
    check(err < 0.1, f"ensemble mean near analytic posterior (rel err {err:.3f})")

    theta = eki_py.sample_prior(3, seed=1)
    check(len(theta) == 3 and len(theta[0]) == 1910, "prior draws")

    with tempfile.TemporaryDirectory() as out:
        run = eki_py.run_slice(out, workers=2)
        check(run.converged, f"slice run {run!r}")
        summary = json.loads(eki_py.diagnose(out, f"{out}/truth.json"))
        check(summary["coverage_fraction"] >= 0.8, "slice coverage")

    print("smoke test passed")


if __name__ == "__main__":
    main()
