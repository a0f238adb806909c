"""Smoke test for the pygramflow extension module.

Build and install with `maturin develop -m crates/python/Cargo.toml`, or copy
`target/release/libpygramflow.so` next to this file as `pygramflow.so`.
"""

import math

import pygramflow as gf


def main():
    op = gf.TransferOperator.analytic(
        "linear-sink", (-1.0, -1.0, 1.0, 1.0), (24, 24), dt=0.1, samples=25, seed=1
    )
    n = op.n_cells
    assert op.shape == (24, 24)

    rho = [1.0] * n
    g = [float(i % 7) for i in range(n)]
    lhs = sum(a * b for a, b in zip(op.pf(rho), g))
    rhs = sum(a * b for a, b in zip(rho, op.koopman(g)))
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs)), (lhs, rhs)

    b = op.cells_in((0.5, 0.5, 1.0, 1.0))
    wc = op.gramian(b, steps=10)
    assert all(v >= 0.0 for v in wc) and max(wc) > 0.0

    ranked = op.rank([b, op.cells_in((-1.0, -1.0, -0.5, -0.5))], steps=10)
    assert [r["rank"] for r in ranked] == [1, 2]

    target = op.pf(op.pf([0.0] * n))
    res = op.steer([0.0] * n, target, b, steps=2)
    assert res["energy"] == 0.0

    far = [0.0] * n
    far[0] = 1.0
    try:
        op.steer([0.0] * n, far, b, steps=1)
    except gf.Infeasible:
        pass
    else:
        raise AssertionError("expected Infeasible")

    centre = op.cells_in((-0.3, -0.3, 0.3, 0.3))
    v0 = [0.0 if i in centre else 1.0 for i in range(n)]
    rep = op.stability(v0, centre)
    assert rep["certified"], rep["reason"]

    rot = gf.TransferOperator.analytic(
        "rotation", (-1.0, -1.0, 1.0, 1.0), (16, 16), dt=0.1, samples=16
    )
    assert not rot.stability([1.0] * 256, [])["certified"]
    assert math.isfinite(rot.cell_measure)
    print("pygramflow smoke test passed:", op)


if __name__ == "__main__":
    main()
