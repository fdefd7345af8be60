"""Smoke test for the mfkill extension module."""

import math

import mfkill


def main():
    model = mfkill.Model("lq_killing")
    grid = mfkill.Grid(-4.0, 4.0, 81, 2.0, 5, 40)

    sol = mfkill.solve_mfc(model, grid)
    assert sol.converged, sol.status
    assert all(b <= a + 1e-12 for a, b in zip(sol.masses(), sol.masses()[1:]))
    print(f"solve: {sol.iterations} iterations, cost {sol.cost:.6f}")

    joint = mfkill.solve_mfc(model, mfkill.Grid(-4.0, 4.0, 41, 3.0, 11, 40), route="joint")
    assert joint.converged
    assert joint.smp_residual(model) <= 1e-6
    print(f"joint: intensity independence {joint.control.intensity_independence():.2e}")

    kappa = 0.5
    passive = mfkill.Model("constant_intensity", intensity={"kind": "constant", "rate": kappa})
    zero = mfkill.Feedback.constant(grid, 0.0)
    nu = mfkill.solve_forward(passive, grid, zero)
    assert abs(nu[-1].mass() - math.exp(-kappa)) < 1e-6
    u = mfkill.solve_backward(model, grid, sol.control)
    assert len(u) == grid.nt + 1 and len(u[0]) == grid.nx

    sim = mfkill.simulate_particles(passive, grid, zero, 20000, seed=3)
    assert abs(sim["mean_weight"][-1] - math.exp(-kappa)) < 1e-9
    d1 = mfkill.metric_dp(sim["nu"], nu[-1], 1)
    print(f"particles: d1 to the forward solve {d1:.3e}")
    assert d1 < 0.1

    a = mfkill.SubProb(-1.0, 0.5, [0.0, 2.0, 0.0, 0.0, 0.0])
    b = mfkill.SubProb(-1.0, 0.5, [0.0, 0.0, 0.0, 2.0, 0.0])
    assert abs(mfkill.metric_dp(a, b) - 1.0) < 1e-12
    assert mfkill.metric_d0(a, b) <= 1.0 + 1e-12

    g = [i / 10 - 1 for i in range(21)]
    env = mfkill.inf_convolution(g, [abs(x) for x in g], 2.0)
    assert all(e <= abs(x) for e, x in zip(env, g))

    try:
        mfkill.solve_mfc(model, grid, route="sideways")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown route accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
