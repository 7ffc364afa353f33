#!/usr/bin/env python3
"""Smoke test for the sdm_py extension module.

Builds the cdylib with cargo, stages it as an importable module and checks
the main entry points against known fixture values. Run from the repo root:

    python3 python/smoke_test.py
"""

import json
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_and_import():
    subprocess.run(
        ["cargo", "build", "-p", "sdm-py", "--release"], cwd=ROOT, check=True
    )
    built = ROOT / "target" / "release" / "libsdm_py.so"
    if not built.exists():  # e.g. macOS
        built = ROOT / "target" / "release" / "libsdm_py.dylib"
    stage = Path(tempfile.mkdtemp(prefix="sdm_py_"))
    shutil.copy(built, stage / "sdm_py.so")
    sys.path.insert(0, str(stage))
    import sdm_py

    return sdm_py


def approx(a, b, tol=1e-7):
    assert math.isfinite(a) and abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    sdm_py = build_and_import()
    m1 = (ROOT / "crates/core/fixtures/m1.json").read_text()
    m1_risk = (ROOT / "crates/core/fixtures/m1_risk.json").read_text()

    # Validation.
    assert sdm_py.validate_instance(m1) == []
    broken = json.loads(m1)
    broken["generators"][0]["r_u"] = 0.0
    broken["generators"][0]["r_v"] = 0.0
    assert any("inflexible" in v for v in sdm_py.validate_instance(json.dumps(broken)))

    # Stochastic dispatch: x* = 40, expected cost 318.
    sol = json.loads(sdm_py.solve_sdm(m1))
    approx(sol["precommit"][0], 40.0)
    approx(sol["objective"], 318.0, 1e-6)

    # Recourse at x = 40 in the high-demand scenario: lambda = 13, rho = -3.
    sd = json.loads(sdm_py.solve_recourse(m1, [40.0], "w5"))
    approx(sd["prices"][0], 13.0)
    approx(sd["nonant_duals"][0], -3.0)

    # Risk trading at kappa = 1, beta = 0.5 moves the setpoint to 50 and
    # prices securities inside every risk set.
    ras = json.loads(sdm_py.solve_raslp(m1_risk))
    approx(ras["precommit"][0], 50.0, 1e-6)
    approx(sum(ras["pi"]), 1.0, 1e-8)
    assert all(p >= -1e-9 for p in ras["pi"])
    for s in range(5):
        book = sum(w[s] for w in ras["securities"].values())
        assert abs(book) < 1e-8

    # No-trading equilibrium at the same risk aversion sits at 30.
    eq = json.loads(sdm_py.iterate_equilibrium(m1_risk))
    assert eq["converged"]
    approx(eq["candidate"]["precommit"][0], 30.0)

    # Quantile primitives.
    support = [10.0, 20.0, 30.0, 40.0, 50.0]
    probs = [0.2] * 5
    approx(sdm_py.pseudoinverse_cdf(support, probs, 0.75), 40.0)
    approx(sdm_py.precommit_quantile(3.0, 1.0, 0.0, 0.5, "no-trading"), 0.75)
    approx(sdm_py.precommit_quantile(3.0, 1.0, 1.0, 0.5, "no-trading"), 0.5)
    approx(sdm_py.precommit_quantile(3.0, 1.0, 1.0, 0.5, "with-trading"), 5.0 / 6.0)
    approx(sdm_py.brute_force_precommit(support, probs, 3.0, 1.0, 1.0, 0.5, "no-trading"), 30.0)
    approx(sdm_py.brute_force_precommit(support, probs, 3.0, 1.0, 1.0, 0.5, "with-trading"), 50.0)

    # Risk primitives: q_beta({0,10}, 0.5) = 2.5 and the dual certificate.
    approx(sdm_py.q_beta([0.0, 10.0], [0.5, 0.5], 0.5), 2.5)
    approx(sdm_py.lower_tail_mean([2.0, 10.0], [0.5, 0.5], 0.5), 2.0)
    z = [4.0, -3.0, 8.0, 1.0]
    pz = [0.4, 0.2, 0.3, 0.1]
    rho = sdm_py.rho_disutility(z, pz, 0.7, [(0.4, 1.0)])
    mu = sdm_py.worst_case_measure(z, pz, 0.7, [(0.4, 1.0)])
    approx(sum(mu), 1.0, 1e-10)
    approx(-sum(m * v for m, v in zip(mu, z)), rho, 1e-10)

    # Profit floor arithmetic: alpha = 2/3 at kappa = 1, beta_bar = 0.5.
    approx(sdm_py.profit_lower_bound(3.0, 1.0, 30.0, 1.0, 0.5, "no-trading"), 30.0)
    approx(sdm_py.profit_lower_bound(3.0, 1.0, 50.0, 1.0, 0.5, "with-trading"), -50.0 / 3.0)

    # Domain errors surface as ValueError.
    try:
        sdm_py.precommit_quantile(3.0, 1.0, 3.0, 0.5, "no-trading")
    except ValueError:
        pass
    else:
        raise AssertionError("kappa out of range should raise")

    print("smoke test: all checks passed")


if __name__ == "__main__":
    main()
