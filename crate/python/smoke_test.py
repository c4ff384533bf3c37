"""Smoke test for the ratput extension module.

Build and run from the repository root:

    cargo build --release -p ratput-python
    cp target/release/libratput.so python/ratput.so
    python3 python/smoke_test.py
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import ratput


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b} (tol {tol})"


def main():
    market = ratput.MarketParams()
    grid = ratput.GridSpec(401, 1000, 1.6, 100.0)
    print(market, grid)

    euro = ratput.european_put(market, 100.0)
    zero = ratput.solve_exogenous(market, grid, 0.0)
    close(zero.anchor_value(), euro, 2e-3 * euro)

    # A callable intensity must give the same answer as the constant.
    flat = ratput.solve_exogenous(market, grid, 1.0).anchor_value()
    called = ratput.solve_exogenous(market, grid, lambda t, s: 1.0).anchor_value()
    close(called, flat, 1e-12)
    close(flat, ratput.constant_intensity_quadrature(market, 1.0, 100.0), 2e-3 * flat)

    try:
        ratput.solve_exogenous(market, grid, lambda t, s: 1 / 0)
    except ZeroDivisionError:
        pass
    else:
        raise AssertionError("callable errors should propagate")

    american = ratput.psor_american(market, grid)
    tree = ratput.binomial_american(market, 100.0, steps=2000)
    close(american.surface.anchor_value(), tree, 0.2)
    assert len(american.boundary) == grid.n_time + 1

    family = ratput.IntensityFamily.exponential(10.0)
    sol = ratput.solve_rational(market, grid, family)
    p = sol.surface.anchor_value()
    assert euro < p < american.surface.anchor_value() + 1e-9
    print(f"european {euro:.6f}  rational(theta=10) {p:.6f}  american {american.surface.anchor_value():.6f}")

    est = ratput.mc_price(market, sol.surface, family, 100.0, n_paths=20000, n_steps=200)
    assert abs(est.price - p) < 4 * est.std_error, (est.price, est.std_error, p)

    report = ratput.check_conditions(ratput.IntensityFamily.exponential(1.0), [1, 5, 25, 125, 625])
    assert report.passes
    assert not ratput.check_conditions(ratput.IntensityFamily.constant(1.0), [1, 5, 25]).passes

    config = {"grid": {"n_space": 201, "n_time": 400}, "theta_ladder": [1, 10, 100], "tree_steps": 500}
    rows = ratput.run_sweep(json.dumps(config))
    errors = [r["abs_error"] for r in rows]
    assert all(b < a for a, b in zip(errors, errors[1:])), errors
    assert rows[0]["max_abs_error_grid"] is None

    try:
        ratput.MarketParams(sigma=-1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative volatility should be rejected")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
