"""Smoke test for the arco_py extension.

Build and install first, e.g.

    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/arco_py-*.whl
    python python/smoke_test.py
"""

import math
import os
import sys
import tempfile

import arco_py


def check(cond, label):
    print(("PASS" if cond else "FAIL"), label)
    if not cond:
        sys.exit(1)


def main():
    check(arco_py.soft_threshold(3.0, 1.0) == 2.0, "soft_threshold")
    check(arco_py.soft_threshold(-0.5, 1.0) == 0.0, "soft_threshold zero band")

    x1 = [float(i) for i in range(1, 21)]
    x2 = [math.sin(i) for i in range(20)]
    y = [1.5 + 2.0 * a for a in x1]
    fit = arco_py.fit_at_lambda([x1, x2], y, 1e-10)
    check(abs(fit.omega[0] - 2.0) < 1e-6 and abs(fit.intercept - 1.5) < 1e-5, "exact linear fit")

    kappa = arco_py.penalty_weights([x1, x2])
    check(abs(kappa[0] - 20.0) < 1e-12, "penalty weights use the last row")

    best, lam_max = arco_py.fit_bic([x1, x2], y)
    check(0 < best.lam <= lam_max and 0 in best.support(), "BIC selection")

    spec = arco_py.default_synthetic_spec()
    spec["seed"] = 3
    panel, treated, controls, true_ratio = arco_py.synthetic_panel(spec)
    check(len(panel) == len(controls) + 1, "synthetic panel size")
    check(true_ratio == 1.0, "no effect means a unit true ratio")
    cases = panel.cases(treated, 10, 36)
    check(len(cases) == 27 and min(cases) >= 1, "case counts")

    growth, level = arco_py.growth_path(panel, treated, 36)
    check(growth > 0 and len(level) == 22, "growth extrapolation")

    with tempfile.TemporaryDirectory() as tmp:
        cfg = os.path.join(tmp, "sim.toml")
        with open(cfg, "w") as f:
            f.write("[params]\nbootstrap_b = 200\n[simulate]\nreps = 200\n")
        code = arco_py.cli(["--config", cfg, "--out-dir", os.path.join(tmp, "out"), "simulate"])
        check(code == 0, "cli simulate")
        sim = os.path.join(tmp, "out", "simulate")
        loaded = arco_py.Panel.from_csv(os.path.join(sim, "panel.csv"))
        check(len(loaded) == len(panel), "panel round trip")
        est = arco_py.fit_treated(
            loaded, "T1", meta_csv=os.path.join(sim, "meta.csv"), bootstrap_b=200, seed=7
        )
        lo, pt, hi = est["log_lower"], est["log_point"], est["log_upper"]
        check(all(a <= b <= c for a, b, c in zip(lo, pt, hi)), "band brackets the point")
        check(est["days"][0] == 37 and est["days"][-1] == 58, "out-of-sample days")
        plac = arco_py.placebo(
            loaded, controls[0], meta_csv=os.path.join(sim, "meta.csv"), bootstrap_b=200
        )
        check(plac["last_in_sample"] == 36, "placebo window")

    try:
        arco_py.coverage(reps=10)
        check(False, "coverage rejects too few reps")
    except arco_py.ArcoError:
        check(True, "coverage rejects too few reps")

    print("smoke test ok")


if __name__ == "__main__":
    main()
