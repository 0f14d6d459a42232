import numpy as np
import pytest

import fbscontrol as fc
from fbscontrol.hamiltonian import build_context, eval_script_H, hamiltonian_gap

from conftest import SEED


def test_self_gap_exactly_zero(lq_small):
    bench, _, sol, adj1, adj2 = lq_small
    for node in (0, 10, 40):
        ctx = build_context(bench.spec, sol, adj1, adj2, node)
        u_ref = adj1.frame.U[:, node]
        gap = hamiltonian_gap(ctx, u_ref)
        assert np.all(gap == 0.0)


def test_classical_reduction_when_P_zero(lq_small):
    # with sigma z-free and P forced to 0, the generalized gap reduces to the
    # classical Hamiltonian difference <p, db> + <q, ds> + dg
    bench, _, sol, adj1, adj2 = lq_small
    node = 16
    ctx = build_context(bench.spec, sol, adj1, adj2, node)
    ctx.P = np.zeros_like(ctx.P)
    t, x, y, z, u_ref = adj1.frame.state(node)
    for u in (1.0, -0.5):
        gap = hamiltonian_gap(ctx, u)
        u_arr = np.full((x.shape[0], 1), u)
        db = bench.spec.b.value(t, x, y, z, u_arr) - bench.spec.b.value(t, x, y, z, u_ref)
        dg = bench.spec.g.value(t, x, y, z, u_arr) - bench.spec.g.value(t, x, y, z, u_ref)
        classical = np.einsum("mi,mi->m", ctx.p, db) + dg
        assert np.abs(gap - classical).max() <= 1e-12


def test_lq_script_H_quadratic_minimizer(lq_small):
    # script H on LQ is the strict quadratic u^2/2 + p u + const: the dense-grid
    # minimizer sits at -p to grid resolution
    bench, _, sol, adj1, adj2 = lq_small
    node = 20
    ctx = build_context(bench.spec, sol, adj1, adj2, node)
    grid_u = np.linspace(-3.0, 3.0, 601)
    values = np.stack([eval_script_H(ctx, u) for u in grid_u])  # (601, M)
    arg = grid_u[np.argmin(values, axis=0)]
    assert np.abs(arg + ctx.p[:, 0]).max() <= 0.011  # grid spacing 0.01
    # quadratic coefficients recovered exactly: H(u) - H(0) = u^2/2 + p u
    h0 = eval_script_H(ctx, 0.0)
    h1 = eval_script_H(ctx, 1.0)
    hm1 = eval_script_H(ctx, -1.0)
    assert np.abs((h1 + hm1 - 2 * h0) - 1.0).max() <= 1e-12
    assert np.abs((h1 - hm1) / 2 - ctx.p[:, 0]).max() <= 1e-12


def test_mp_pass_at_lq_optimum(lq_small):
    bench, _, sol, adj1, adj2 = lq_small
    rep = fc.check_maximum_principle(bench.spec, bench.optimal_control, sol, adj1, adj2,
                                     fc.MpOpts(n_nodes=16))
    assert rep.passed
    assert rep.min_z >= -3.0
    assert rep.refined  # continuous control set triggers local refinement


def test_mp_fail_for_zero_control_deterministic():
    bench = fc.benchmark_lq(x0=1.0, sigma0=0.0)
    zero = fc.constant_control(0.0)
    grid = fc.TimeGrid(1.0, 64)
    bundle = fc.sample_brownian(grid, 32, fc.SeedSpec(SEED))
    sol = fc.solve_coupled_picard(bench.spec, zero, bundle, fc.PicardOpts())
    adj1 = fc.solve_first_order_adjoint(bench.spec, sol, zero)
    adj2 = fc.solve_second_order_adjoint(bench.spec, sol, adj1)
    rep = fc.check_maximum_principle(bench.spec, zero, sol, adj1, adj2, fc.MpOpts(n_nodes=16))
    assert not rep.passed
    assert rep.worst_gap < 0
    assert rep.min_z == -np.inf  # deterministic violation, zero spread
    # early nodes show the most negative gap (p = 1 + (T - t) is largest there)
    assert rep.worst_location["t"] < 0.2


def test_mp_single_point_control_set(cz_small):
    bench, bundle, sol, adj1, adj2 = cz_small
    spec = bench.spec
    spec_single = fc.ProblemSpec(
        n=1, horizon_T=1.0, x0=spec.x0, b=spec.b, sigma=spec.sigma, g=spec.g,
        phi=spec.phi, growth_L=spec.growth_L,
        control_set=fc.FiniteControlSet(np.array([[-1.0]])),
        sigma_form=spec.sigma_form, A_eval=spec.A_eval, sigma1_eval=spec.sigma1_eval)
    rep = fc.check_maximum_principle(spec_single, bench.optimal_control, sol, adj1, adj2,
                                     fc.MpOpts(n_nodes=8))
    assert rep.passed
    assert rep.worst_gap == 0.0


def test_mp_pass_coupled_z(cz_small):
    bench, _, sol, adj1, adj2 = cz_small
    rep = fc.check_maximum_principle(bench.spec, bench.optimal_control, sol, adj1, adj2,
                                     fc.MpOpts(n_nodes=16))
    assert rep.passed
    # known gaps at the reference control: u=0 -> 1/2, u=1 -> 2
    gaps = {u[0]: mg for (_, u, mg, _, _) in rep.table}
    assert gaps[0.0] == pytest.approx(0.5, abs=1e-6)
    assert gaps[1.0] == pytest.approx(2.0, abs=1e-6)


def test_mp_report_serialization(tmp_path, cz_small):
    bench, _, sol, adj1, adj2 = cz_small
    rep = fc.check_maximum_principle(bench.spec, bench.optimal_control, sol, adj1, adj2,
                                     fc.MpOpts(n_nodes=4))
    d = rep.to_dict()
    assert d["verdict"] == "PASS"
    rep.table_csv(tmp_path / "gaps.csv")
    lines = (tmp_path / "gaps.csv").read_text().strip().splitlines()
    assert lines[0] == "t,u,mean_gap,stderr,z"
    assert len(lines) == 1 + rep.n_pairs


def test_expansion_null_spike(cz_small):
    bench, bundle, sol, adj1, adj2 = cz_small
    rep = fc.expansion_consistency(bench.spec, bench.optimal_control, bundle,
                                   eps_ladder=[0.25, 0.125], spike_value=-1.0,
                                   reference=sol, adjoints=(adj1, adj2))
    assert all(j[0] == 0.0 for j in rep.jdiff)
    assert all(y[0] == 0.0 for y in rep.y2_0)
    assert all(d == 0.0 for d in rep.defect)


def test_expansion_lq_spike_positive_jdiff(lq_small):
    bench, bundle, sol, adj1, adj2 = lq_small
    rep = fc.expansion_consistency(bench.spec, bench.optimal_control, bundle,
                                   eps_ladder=[0.25, 0.125, 0.0625], spike_value=1.0,
                                   reference=sol, adjoints=(adj1, adj2))
    # reference control optimal: every spike strictly increases the cost
    assert all(j[0] > 0 for j in rep.jdiff)
    assert np.isfinite(rep.max_defect_over_eps)
    # defect/eps decreases along the ladder (the higher-order claim)
    assert rep.defect_over_eps[0] > rep.defect_over_eps[-1]
