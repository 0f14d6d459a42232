import numpy as np
import pytest

import fbscontrol as fc
from fbscontrol.errors import NonFiniteError

# frozen brute-force oracles (10^6 paths, Philox key [998877, 0]):
#   E[sup_{t<=1} |B_t|^2] on the N=256 grid  = 1.742380 +- 0.001569
#   same quantity on the finer N=1024 grid   = 1.786990 +- 0.001588
SUP_B2_N256 = 1.742380
SUP_B2_N256_SE = 0.001569
SUP_B2_FINE = 1.786990


def test_grid_nodes():
    g = fc.TimeGrid(2.0, 8)
    assert g.dt == 0.25
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 2.0
    assert g.node_of(0.5) == 2
    with pytest.raises(ValueError):
        g.node_of(0.3)
    with pytest.raises(ValueError):
        fc.TimeGrid(1.0, 1)


def test_sampling_deterministic():
    g = fc.TimeGrid(1.0, 16)
    a = fc.sample_brownian(g, 40, fc.SeedSpec(7))
    b = fc.sample_brownian(g, 40, fc.SeedSpec(7))
    assert np.array_equal(a.dB, b.dB)
    c = fc.sample_brownian(g, 40, fc.SeedSpec(8))
    assert not np.array_equal(a.dB, c.dB)


def test_smallest_case_reproducible():
    g = fc.TimeGrid(1.0, 2)
    a = fc.sample_brownian(g, 1, fc.SeedSpec(123))
    b = fc.sample_brownian(g, 1, fc.SeedSpec(123))
    assert a.dB.shape == (1, 2)
    assert np.array_equal(a.dB, b.dB)


def test_path_streams_independent_of_batch():
    # path m's increments depend only on (root, m), not on how many paths exist
    g = fc.TimeGrid(1.0, 8)
    big = fc.sample_brownian(g, 30, fc.SeedSpec(5))
    small = fc.sample_brownian(g, 10, fc.SeedSpec(5))
    assert np.array_equal(big.dB[:10], small.dB)


def test_clt_mean_bound():
    g = fc.TimeGrid(1.0, 100)
    M = 100_000
    bundle = fc.sample_brownian(g, M, fc.SeedSpec(2024))
    bound = 5.0 * np.sqrt(g.dt) / np.sqrt(M * g.N)
    assert abs(bundle.dB.mean()) <= bound


def test_coarsen_sums_pairs():
    g = fc.TimeGrid(1.0, 8)
    fine = fc.sample_brownian(g, 12, fc.SeedSpec(1))
    coarse = fine.coarsen(2)
    assert coarse.grid.N == 4
    assert np.allclose(coarse.dB[:, 0], fine.dB[:, 0] + fine.dB[:, 1])
    assert np.allclose(coarse.levels()[:, -1], fine.levels()[:, -1])


def test_panel_rejects_nonfinite():
    g = fc.TimeGrid(1.0, 4)
    vals = np.zeros((3, 5))
    vals[1, 2] = np.nan
    with pytest.raises(NonFiniteError) as err:
        fc.ProcessPanel(vals, g, "bad")
    assert err.value.path == 1 and err.value.node == 2


def test_panel_shape_check():
    g = fc.TimeGrid(1.0, 4)
    with pytest.raises(ValueError):
        fc.ProcessPanel(np.zeros((3, 6)), g)


def test_moment_norm_zero_and_constant():
    g = fc.TimeGrid(1.0, 4)
    zero = fc.ProcessPanel(np.zeros((10, 5)), g)
    val, se = fc.moment_norm(zero, fc.MomentSpec(2.0, fc.SUP))
    assert val == 0.0 and se == 0.0
    const = fc.ProcessPanel(np.full((10, 5), 3.0), g)
    val, se = fc.moment_norm(const, fc.MomentSpec(2.0, fc.SUP))
    assert val == 9.0 and se == 0.0
    val_int, _ = fc.moment_norm(const, fc.MomentSpec(2.0, fc.INT2))
    assert np.isclose(val_int, 9.0)  # (sum 3^2 dt)^(1) over [0,1]


@pytest.mark.parametrize("beta,kind", [(2.0, fc.SUP), (4.0, fc.SUP), (3.0, fc.INT2)])
def test_moment_norm_homogeneous(beta, kind):
    g = fc.TimeGrid(1.0, 16)
    rng = np.random.Generator(np.random.Philox(key=[1, 2]))
    vals = rng.normal(size=(50, 17))
    base = fc.ProcessPanel(vals, g)
    scaled = fc.ProcessPanel(2.0 * vals, g)
    v0, _ = fc.moment_norm(base, fc.MomentSpec(beta, kind))
    v1, _ = fc.moment_norm(scaled, fc.MomentSpec(beta, kind))
    assert v1 == pytest.approx(2.0 ** beta * v0, rel=1e-13)


def test_moment_spec_range():
    with pytest.raises(ValueError):
        fc.MomentSpec(1.0, fc.SUP)
    with pytest.raises(ValueError):
        fc.MomentSpec(2.0, "L7")


def test_brownian_sup_moment_against_bruteforce_oracle():
    g = fc.TimeGrid(1.0, 256)
    M = 10_000
    bundle = fc.sample_brownian(g, M, fc.SeedSpec(31))
    panel = fc.ProcessPanel(bundle.levels(), g, "B")
    est, se = fc.moment_norm(panel, fc.MomentSpec(2.0, fc.SUP))
    assert abs(est - SUP_B2_N256) <= 3.0 * (se + SUP_B2_N256_SE)
    assert est < SUP_B2_FINE + 3.0 * se  # coarse-grid sup sits below the fine-grid value


def test_panel_csv_and_dump_roundtrip(tmp_path):
    g = fc.TimeGrid(1.0, 4)
    vals = np.arange(30, dtype=float).reshape(3, 5, 2)
    panel = fc.ProcessPanel(vals, g, "demo")
    panel.to_csv(tmp_path / "p.csv")
    text = (tmp_path / "p.csv").read_text().strip().splitlines()
    assert text[0] == "path,t,v0,v1"
    assert len(text) == 1 + 3 * 5
    panel.dump(tmp_path / "p.npz")
    back = fc.ProcessPanel.load(tmp_path / "p.npz")
    assert np.array_equal(back.values, vals)
    assert back.label == "demo"
