"""Smoke test for the gmaslov_py extension.

Build first:  pip install maturin && maturin develop -m crates/python/Cargo.toml --release
"""

import math

import gmaslov_py as gm


def main() -> None:
    assert "example1" in gm.catalog_names()
    assert gm.normalize_expression("1+x*2") == "(1+(x*2))"
    assert abs(gm.eval_expression(".2*cos(10*x) - .5*cos(x/10)", 0.0) + 0.3) < 1e-15

    v = gm.omega_pair([[1.0], [0.0]], [[0.0], [1.0]], [[0.0, 1.0], [0.0, 0.0]], [[0.0, 1.0], [-1.0, 0.0]])
    assert set(v) >= {"omega1", "omega2", "psi1", "psi2", "rho"}
    assert abs(v["omega1"] - 1.0) < 1e-15

    p = gm.Problem.catalog("example1")
    assert (p.n, p.m) == (3, 1)
    report = p.compute_box()
    assert report["lower_bound"] == 1 and report["m_frak"] == 0
    (lam,) = report["eigenvalues"]
    assert abs(lam + 0.513) < 0.005, lam
    count, xs = p.renormalized_count()
    assert count == 1 and abs(xs[0] - 0.535) < 0.01
    inv = p.invariance()
    assert inv["certified"] and abs(inv["margin"] - 0.0136) < 0.002

    h = gm.Problem.catalog("harmonic-dirichlet").with_options(lambda1=0.0, lambda2=50.0)
    eig = h.eigenvalues()
    assert all(abs(a - b) < 1e-6 for a, b in zip(eig, [math.pi**2, 4 * math.pi**2])), eig

    try:
        gm.Problem.from_json('{"kind": "nope"}')
    except ValueError:
        pass
    else:
        raise AssertionError("bad config accepted")
    print("python smoke test: ok")


if __name__ == "__main__":
    main()
