"""Smoke test for the dphase extension module.

Build and copy the extension first:

    cargo build -p dphase-python --release
    cp target/release/libdphase_py.so python/dphase.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import dphase  # noqa: E402

SMALL = """
seed = 7

[grid]
dim = 3
extents = [[-1.0, 1.0], [-1.0, 1.0], [-1.0, 1.0]]
nodes = 9

[exponents]
p = "1.5"
q = "1.8"
beta = "2.2"
mu = "1"

[problem]
lambda_fraction = 0.5
alpha = 0.3
"""


def check(cond, msg):
    if not cond:
        raise SystemExit(f"FAIL: {msg}")
    print(f"ok   {msg}")


def main():
    print("dphase", dphase.__version__)
    prob = dphase.Problem(SMALL)
    check(prob.num_nodes == 9**3, "grid size")
    check(len(prob.coords()) == prob.num_nodes, "coordinates per node")

    zero = [0.0] * prob.num_nodes
    e0 = prob.energy(zero, 1.0)
    check(e0["total"] == 0.0, "zero function has zero energy")

    u = prob.sample(1, seed=3)[0]
    two = [2.0] * prob.num_nodes
    from_norm = None
    for kind in ("gradient", "musielak", "p"):
        n = prob.luxemburg_norm(u, kind)
        scaled = [v / n for v in u]
        rho = prob.modular(scaled, kind)
        check(abs(rho - 1.0) < 1e-8, f"unit level of the {kind} modular")
        from_norm = n

    rels = prob.modular_relations(u)
    check(all(r["slack"] >= -1e-8 for r in rels if r["applicable"]), "modular relations hold")

    # directional derivative against a central difference
    phi = prob.sine_bump()
    g = prob.gradient(u, 2.0)
    w = prob.weights()
    an = sum(wi * gi * pi for wi, gi, pi in zip(w, g, phi))
    h = 1e-5
    plus = prob.energy([a + h * b for a, b in zip(u, phi)], 2.0)["total"]
    minus = prob.energy([a - h * b for a, b in zip(u, phi)], 2.0)["total"]
    fd = (plus - minus) / (2 * h)
    check(abs(fd - an) <= 1e-4 * max(abs(fd), abs(an)), "gradient matches finite difference")

    rep = prob.hardy_report(u, c_hat=1.0)
    check(rep["lower_passed"], "Hardy lower bound")
    check(abs(rep["lhs_inner"] + rep["lhs_outer"] - rep["lhs"]) <= 1e-12 * max(1.0, rep["lhs"]), "Hardy split")

    rows = prob.verify(samples=5)
    check(all(r["passed"] for r in rows), f"{len(rows)} property suites pass")

    res = prob.solve()
    check(res["converged"], "solver converges on the small grid")
    check(res["residual_norm"] <= 1e-6, "residual below tolerance")
    check(min(res["solution"]) >= -1e-10, "solution is nonnegative")
    check(res["energy"]["total"] >= res["eta"] > 0, "energy above the mountain-pass level bound")
    check(res["ps_monitor"]["holds"], "coercivity monitor holds along the trace")

    try:
        dphase.Problem(SMALL.replace('q = "1.8"', 'q = "1.4"'))
    except ValueError as exc:
        check("hypothesis" in str(exc), "invalid exponents raise ValueError")
    else:
        raise SystemExit("FAIL: invalid exponents accepted")

    check(math.isfinite(from_norm), "norms are finite")
    print("smoke test passed")


if __name__ == "__main__":
    main()
