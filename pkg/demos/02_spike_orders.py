"""Order-of-epsilon study: spike the reference control on shrinking windows
under common random numbers and fit log-log slopes of the difference norms.

On the z-coupled benchmark the spike moves the diffusion, so the first-order
norms decay at order beta/2 (slope 1 for beta = 2, slope 2 for beta = 4) and
the remainder after subtracting the first-order state decays one order faster.
"""

import fbscontrol as fc

bench = fc.benchmark_coupled_z(0.1)
grid = fc.TimeGrid(1.0, 128)
bundle = fc.sample_brownian(grid, 3000, fc.SeedSpec(7))

report = fc.run_order_experiment(
    bench.spec, bench.optimal_control, bundle,
    eps_ladder=[1 / 8, 1 / 16, 1 / 32, 1 / 64], betas=(2.0, 4.0), spike_value=1.0,
)

print(f"{'norm':>10} {'slope':>8} {'+-':>6}   estimates along the ladder")
for name in ("xi1_b2", "eta1_b2", "zeta1_b2", "X1_b2", "xi2_b2", "xi1_b4", "X1_b4"):
    s = report.slopes[name]
    vals = "  ".join(f"{v:.2e}" for v in report.norms[name]["values"])
    print(f"{name:>10} {s.slope:8.3f} {s.half_width:6.3f}   {vals}")

print()
print("expansion data per rung (J difference vs second-order value):")
for eps, (jd, se), (y2, _), d in zip(report.eps, report.jdiff, report.y2_0, report.defect):
    print(f"  eps = {eps:.5f}:  J(u^eps) - J = {jd:.5f} (+- {se:.5f}),  "
          f"Y2(0) = {y2:.5f},  defect = {d:.2e}")
