"""Smoke test for the fkpath Python extension.

Build and install with `maturin build --release` in crates/py, then run
`python python/smoke.py` from the repository root.
"""

import math
import pathlib
import sys
import tempfile

import fkpath

ROOT = pathlib.Path(__file__).resolve().parent.parent


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    failures = []

    def check(name, ok, detail=""):
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip())
        if not ok:
            failures.append(name)

    m2 = fkpath.Model.m2()
    check("model", m2.size == 2 and m2.potential_sup == 1.0, repr(m2))

    gamma, eta, z = fkpath.solve_gamma(m2, [1.0, 0.0], 1.0)
    check("oracle-gamma", close(gamma[0], 0.6083542936415302, 1e-7) and close(gamma[1], 0.21390913026027935, 1e-7))
    check("oracle-eta", close(sum(eta), 1.0, 1e-12) and close(z, sum(gamma), 1e-12))

    free = fkpath.Model.finite([[-1.0, 1.0], [2.0, -2.0]], [0.0, 0.0])
    q = fkpath.semigroup_matrix(free, 0.0, 1.0)
    check("markov-rows", all(close(sum(r), 1.0, 1e-9) for r in q))

    path = fkpath.sample_free_motion(m2, 0, 1.0, 7)
    check("path", path.t0 == 0.0 and path.t1 == 1.0 and path.x0 == 0, repr(path))
    rebuilt = fkpath.Path(path.t0, path.t1, path.x0, path.events)
    check("path-roundtrip", rebuilt.events == path.events and rebuilt.to_json() == path.to_json())

    sys_ = fkpath.simulate_mean_field(m2, 10, 1.0, 3, x0=0)
    check("mean-field", len(sys_.lines) == 10 and 0.0 < sys_.weight <= 1.0)

    lines, (frozen, peer) = fkpath.simulate_conditional(m2, 5, path, 11, x0=0)
    check("conditional", lines[0].events == path.events and frozen + peer >= 0)

    nxt = fkpath.gibbs_step(m2, 5, path, 13, x0=0)
    check("gibbs-step", nxt.t1 == 1.0)
    trace = fkpath.gibbs_chain(m2, 5, path, 200, 20, 17, x0=0)
    check("gibbs-chain", len(trace) == 200 and all(0.0 <= occ <= 1.0 for _, occ in trace))

    mean, se = fkpath.estimate_gamma(m2, 1, 5, 1.0, 4000, 19, x0=0)
    check("estimate-gamma", abs(mean - 0.21390913026027935) <= 4.0 * se, f"{mean:.5f} +/- {se:.5f}")

    rows = fkpath.duality_check(m2, 3, 1.0, 4000, 23, x0=0)
    check("duality", sum(1 for r in rows if abs(r[3]) > 3.0) <= 1 and all(math.isfinite(r[3]) for r in rows))

    check("h0", fkpath.check_h0_doeblin(m2, 0.0, 1.0) > 0.0)
    check("h2", fkpath.check_h2_q(m2, 0.0, 1.0) >= 0.0)

    names = [entry[0] for entry in fkpath.builtin_models()]
    check("catalog", names == ["m2", "ring4", "jarzynski2", "torus"], str(names))

    with tempfile.TemporaryDirectory() as out:
        code, lines = fkpath.run_config(str(ROOT / "configs" / "oracle_m2.toml"), out)
        check("run-config", code == 0 and all(l.startswith("PASS") for l in lines))

    try:
        fkpath.Model.finite([[-1.0, 1.0]], [0.0])
        check("bad-model-rejected", False)
    except ValueError:
        check("bad-model-rejected", True)

    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
