"""Smoke test for the `pnp` extension module.

Build and install first, e.g. `pip install --no-build-isolation ./crates/python`
(needs maturin), then run `python python/smoke_test.py`.
"""

import math
import sys

import pnp


def main():
    assert abs(pnp.gamma(2, 1.0 / 12.0) - 37.0 / 12.0) < 1e-12
    assert abs(pnp.gamma(1, 0.25) - 1.0) < 1e-12

    sim = pnp.Simulation("manufactured-1d", method="ddg", k=2, n=10, end_time=0.01)
    report = sim.step()
    assert report["iterations"] >= 1
    sim.run()
    assert sim.finished and math.isclose(sim.t, 0.01)
    errors = {(v, norm): e for v, norm, e in sim.errors()}
    assert errors[("c1", "l2")] < 1e-5, errors[("c1", "l2")]
    c = sim.concentrations()
    assert len(c) == 2 and len(c[0]) == len(sim.points())
    assert min(min(ci) for ci in c) > 0.0

    relax = pnp.Simulation("relaxation-2d", method="fem", k=1, n=8, dt=1e-3, end_time=0.01)
    relax.run()
    m = relax.monitors()
    assert max(m["max_mass_drift"]) < 1e-11
    assert m["max_energy_increase"] <= 1e-12
    assert min(m["min_node"]) > 0.0

    table = pnp.sweep("manufactured-1d", [10, 20], method="fem", k=1, dt_exponent=2.0)
    col = table["metrics"].index("phi_l2")
    rate = table["rates"][1][col]
    assert abs(rate - 2.0) < 0.2, rate

    cfg = 'problem = "manufactured-1d"\nmethod = "fem"\nk = 1\nn = 4\nend_time = 0.001\n'
    pnp.Simulation.from_toml(cfg).run()
    try:
        pnp.Simulation.from_toml(cfg + "bogus = 1\n")
    except ValueError as e:
        assert "bogus" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    print("python smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
