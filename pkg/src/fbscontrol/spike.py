"""Spike (needle) variations: the algebraic Delta equation, the first- and
second-order variational systems simulated through their decoupling relations,
cross-method consistency residuals, and order-of-epsilon experiments over a
ladder of window widths under common random numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import linregress

from ._frame import RefFrame
from .adjoint import (AdjointOpts, FirstOrderAdjoint, SecondOrderAdjoint, YhatSolution,
                      hamiltonian_hessian, solve_first_order_adjoint,
                      solve_second_order_adjoint, solve_yhat)
from .errors import InvertibilityError, NoConvergenceError
from .fbsde import FbsdeSolution, PicardOpts, solve_coupled_picard
from .model import LINEAR_IN_Z, OpenLoopControl, ProblemSpec, tabulate_control
from .paths import SUP, INT2, BrownianBundle, MomentSpec, ProcessPanel, moment_norm
from .regression import NodeBasis

CLOSED_FORM_SZ0 = "CLOSED_FORM_SZ0"
CLOSED_FORM_LINEAR = "CLOSED_FORM_LINEAR"
FIXED_POINT = "FIXED_POINT"


@dataclass
class SpikeSpec:
    """A grid-aligned perturbation window [t0, t0 + eps) and the control applied
    on it. ``u_value`` is a point of the control set (constant spike) or an
    open-loop panel; ``eps`` must be a multiple of the grid spacing (0 allowed:
    the null spike)."""

    t0: float
    eps: float
    u_value: object

    def window_nodes(self, grid) -> np.ndarray:
        i0 = grid.node_of(self.t0)
        width = int(round(self.eps / grid.dt))
        if not np.isclose(width * grid.dt, self.eps, rtol=0, atol=1e-9 * max(grid.T, 1.0)):
            raise ValueError(f"eps={self.eps} is not a multiple of dt={grid.dt}")
        if i0 + width > grid.N:
            raise ValueError("spike window extends past the horizon")
        return np.arange(i0, i0 + width)

    def window_mask(self, grid) -> np.ndarray:
        mask = np.zeros(grid.N + 1, dtype=bool)
        mask[self.window_nodes(grid)] = True
        return mask

    def perturb_values(self, M, i) -> np.ndarray:
        """Perturbing control values at node i, shape (M, k)."""
        if isinstance(self.u_value, OpenLoopControl):
            return self.u_value.values[:, i, :]
        vec = np.atleast_1d(np.asarray(self.u_value, dtype=float))
        return np.broadcast_to(vec, (M, len(vec)))

    def spiked_control(self, frozen: OpenLoopControl, grid) -> OpenLoopControl:
        """u^eps: the frozen reference panel with the window values replaced."""
        values = frozen.values.copy()
        M = values.shape[0]
        for i in self.window_nodes(grid):
            values[:, i, :] = self.perturb_values(M, i)
        return OpenLoopControl(values)


@dataclass
class DeltaProcess:
    panel: ProcessPanel
    residual: ProcessPanel
    method: str
    max_iterations: int = 0


def _dot(a, b):
    return np.einsum("mi,mi->m", a, b)


def delta_at_node(spec: ProblemSpec, frame: RefFrame, p_node: np.ndarray, i: int,
                  u_vals: np.ndarray, c_min: float = 0.1, tol: float = 1e-12,
                  cap: int = 50, force_fixed_point: bool = False):
    """Solve Delta = <p, sigma(t, X, Y, Z + Delta, u) - sigma(t, X, Y, Z, u_ref)>
    at one node, vectorized over paths. Returns (delta, residual, method, iters).

    Route: z-free sigma -> one-step closed form; declared linear-in-z -> exact
    inverse; otherwise damped fixed point with a Newton fallback on stall.
    """
    t, x, y, z, u_ref = frame.state(i)
    sig_ref = spec.sigma.value(t, x, y, z, u_ref)
    M = x.shape[0]

    def residual_of(delta):
        return delta - _dot(p_node, frame.sigma_at_z(i, u_vals, delta) - sig_ref)

    sz_here = spec.sigma.first("dz", t, x, y, z, u_vals)
    if not force_fixed_point and float(np.abs(sz_here).max()) == 0.0 \
            and float(np.abs(spec.sigma.first("dz", t, x, y, z, u_ref)).max()) == 0.0:
        delta = _dot(p_node, spec.sigma.value(t, x, y, z, u_vals) - sig_ref)
        return delta, residual_of(delta), CLOSED_FORM_SZ0, 1

    if not force_fixed_point and spec.sigma_form == LINEAR_IN_Z:
        A = np.broadcast_to(spec.A_at(t), (M, spec.n))
        mbar = 1.0 - _dot(p_node, A)
        mm = float(np.abs(mbar).min())
        if mm < c_min:
            raise InvertibilityError(mm, c_min, where=f"delta node {i}")
        s1_new = np.asarray(spec.sigma1_eval(t, x, y, u_vals), dtype=float).reshape(M, spec.n)
        s1_ref = np.asarray(spec.sigma1_eval(t, x, y, u_ref), dtype=float).reshape(M, spec.n)
        delta = _dot(p_node, s1_new - s1_ref) / mbar
        return delta, residual_of(delta), CLOSED_FORM_LINEAR, 1

    # damped fixed point, Newton fallback on stall
    delta = np.zeros(M)
    theta = 0.8
    iters = 0
    for iters in range(1, cap // 2 + 1):
        rhs = _dot(p_node, frame.sigma_at_z(i, u_vals, delta) - sig_ref)
        new = (1.0 - theta) * delta + theta * rhs
        if np.max(np.abs(new - delta)) <= tol * (1.0 + np.max(np.abs(new))):
            return new, residual_of(new), FIXED_POINT, iters
        delta = new
    for j in range(cap - cap // 2):
        iters += 1
        res = residual_of(delta)
        slope = 1.0 - _dot(p_node, frame.sigma_z_at(i, u_vals, delta))
        mm = float(np.abs(slope).min())
        if mm < c_min:
            raise InvertibilityError(mm, c_min, where=f"delta Newton node {i}")
        new = delta - res / slope
        if np.max(np.abs(new - delta)) <= tol * (1.0 + np.max(np.abs(new))):
            return new, residual_of(new), FIXED_POINT, iters
        delta = new
    worst = int(np.argmax(np.abs(residual_of(delta))))
    raise NoConvergenceError("delta fixed point", float(np.abs(residual_of(delta)).max()),
                             detail=f"node {i}, worst path {worst}")


def solve_delta(spec: ProblemSpec, sol: FbsdeSolution, adj1: FirstOrderAdjoint,
                spike: SpikeSpec, c_min: float = 0.1, tol: float = 1e-12,
                cap: int = 50, force_fixed_point: bool = False) -> DeltaProcess:
    """Delta panel on the spike window (exactly zero off it)."""
    frame = adj1.frame
    grid = sol.X.grid
    M = frame.M
    delta = np.zeros((M, grid.N + 1))
    resid = np.zeros((M, grid.N + 1))
    method = CLOSED_FORM_SZ0
    max_iters = 0
    for i in spike.window_nodes(grid):
        u_vals = spike.perturb_values(M, i)
        d, r, method, iters = delta_at_node(spec, frame, adj1.p_values[:, i], i, u_vals,
                                            c_min=c_min, tol=tol, cap=cap,
                                            force_fixed_point=force_fixed_point)
        delta[:, i] = d
        resid[:, i] = r
        max_iters = max(max_iters, iters)
    return DeltaProcess(ProcessPanel(delta, grid, "delta"),
                        ProcessPanel(resid, grid, "delta_residual"), method, max_iters)


@dataclass
class VariationBundle:
    X1: ProcessPanel
    Y1: ProcessPanel
    Z1: ProcessPanel
    X2: ProcessPanel
    Y2: ProcessPanel
    Z2: ProcessPanel
    I_panel: ProcessPanel
    yhat: YhatSolution
    res_y1: ProcessPanel
    res_y2: ProcessPanel
    res_z1: ProcessPanel
    res_z2: ProcessPanel

    @property
    def y2_0_samples(self) -> np.ndarray:
        return self.Y2.scalar()[:, 0]

    @property
    def y2_0(self) -> float:
        return float(self.y2_0_samples.mean())


def simulate_variations(spec: ProblemSpec, sol: FbsdeSolution, adj1: FirstOrderAdjoint,
                        adj2: SecondOrderAdjoint, spike: SpikeSpec, delta: DeltaProcess,
                        opts: AdjointOpts = None) -> VariationBundle:
    """Simulate the first- and second-order variational states forward through
    their decoupling relations, reconstruct the backward components, and attach
    cross-method residuals from independent backward regression solves.
    """
    if opts is None:
        opts = AdjointOpts()
    frame = adj1.frame
    grid = sol.X.grid
    M, N, n = frame.M, grid.N, spec.n
    dt, dB = grid.dt, sol.bundle.dB
    mask = spike.window_mask(grid)
    dvals = delta.panel.scalar()
    p, q, K1 = adj1.p_values, adj1.q_values, adj1.k1_values
    P, K2 = adj2.P_values, adj2.K2_values

    # first-order state: dX1 = [bx X1 + by <p,X1> + bz <K1,X1>] dt
    #                        + [sx X1 + sy <p,X1> + sz <K1,X1> + dsig(t,Delta) 1_E] dB
    X1 = np.zeros((M, N + 1, n))
    dsig_window = np.zeros((M, N + 1, n))
    for i in np.flatnonzero(mask):
        u_sp = spike.perturb_values(M, i)
        dsig_window[:, i] = (frame.shifted_values(i, u_sp, dvals[:, i])["s"]
                             - frame.values(i)["s"])
    for i in range(N):
        parts = frame.first(i)
        x1 = X1[:, i]
        y1 = _dot(p[:, i], x1)
        k1x = _dot(K1[:, i], x1)
        drift = (np.einsum("mij,mj->mi", parts["bx"], x1)
                 + parts["by"] * y1[:, None] + parts["bz"] * k1x[:, None])
        diff = (np.einsum("mij,mj->mi", parts["sx"], x1)
                + parts["sy"] * y1[:, None] + parts["sz"] * k1x[:, None]
                + dsig_window[:, i])
        X1[:, i + 1] = x1 + drift * dt + diff * dB[:, i, None]
    Y1 = np.einsum("mti,mti->mt", p, X1)
    Z1 = np.einsum("mti,mti->mt", K1, X1) + dvals * mask[None, :]

    yhat = solve_yhat(spec, sol, adj1, adj2, spike, delta, opts)
    yh, zh = yhat.yhat.scalar(), yhat.zhat.scalar()

    # second-order state with Y2 = <p,X2> + <P X1, X1>/2 + yhat and Z2 = I + zhat
    X2 = np.zeros((M, N + 1, n))
    I_panel = np.zeros((M, N + 1))
    Y2 = np.zeros((M, N + 1))
    Z2 = np.zeros((M, N + 1))

    def relation_values(i, x2):
        y2 = _dot(p[:, i], x2) + 0.5 * np.einsum("mi,mij,mj->m", X1[:, i], P[:, i], X1[:, i]) + yh[:, i]
        parts = frame.first(i)
        mbar = 1.0 - _dot(p[:, i], parts["sz"])
        Ival = (_dot(K1[:, i], x2)
                + 0.5 * np.einsum("mi,mij,mj->m", X1[:, i], K2[:, i], X1[:, i])
                + _dot(p[:, i], parts["sy"] * yh[:, i, None] + parts["sz"] * zh[:, i, None]) / mbar)
        if mask[i]:
            u_sp = spike.perturb_values(M, i)
            sh1 = frame.shifted_sigma_first(i, u_sp, dvals[:, i])
            dsx = sh1["sx"] - parts["sx"]
            dsy = sh1["sy"] - parts["sy"]
            dsz = sh1["sz"] - parts["sz"]
            # all window terms carry the inverse: matching the dB coefficient of
            # d(<p,X2> + <P X1,X1>/2 + yhat) puts P dsig X1 inside it as well
            Pds = np.einsum("mij,mj->mi", P[:, i], dsig_window[:, i])
            Ival = Ival + _dot(Pds, X1[:, i]) / mbar
            Ival = Ival + _dot(p[:, i], np.einsum("mij,mj->mi", dsx, X1[:, i])) / mbar
            Ival = Ival + (_dot(p[:, i], dsy) * Y1[:, i] + _dot(p[:, i], dsz) * _dot(K1[:, i], X1[:, i])) / mbar
        z2 = Ival + zh[:, i]
        return y2, z2, Ival

    for i in range(N):
        parts = frame.first(i)
        sec = frame.second(i)
        x2 = X2[:, i]
        y2, z2, Ival = relation_values(i, x2)
        Y2[:, i], Z2[:, i], I_panel[:, i] = y2, z2, Ival
        v = np.concatenate([X1[:, i], Y1[:, i, None], _dot(K1[:, i], X1[:, i])[:, None]], axis=1)
        quad_b = _quad_vector(sec, "b", v, n)
        quad_s = _quad_vector(sec, "s", v, n)
        drift = (np.einsum("mij,mj->mi", parts["bx"], x2)
                 + parts["by"] * y2[:, None] + parts["bz"] * z2[:, None] + 0.5 * quad_b)
        diff = (np.einsum("mij,mj->mi", parts["sx"], x2)
                + parts["sy"] * y2[:, None] + parts["sz"] * z2[:, None] + 0.5 * quad_s)
        if mask[i]:
            u_sp = spike.perturb_values(M, i)
            sh = frame.shifted_values(i, u_sp, dvals[:, i])
            ref = frame.values(i)
            drift = drift + (sh["b"] - ref["b"])
            sh1 = frame.shifted_sigma_first(i, u_sp, dvals[:, i])
            diff = diff + (np.einsum("mij,mj->mi", sh1["sx"] - parts["sx"], X1[:, i])
                           + (sh1["sy"] - parts["sy"]) * Y1[:, i, None]
                           + (sh1["sz"] - parts["sz"]) * _dot(K1[:, i], X1[:, i])[:, None])
        X2[:, i + 1] = x2 + drift * dt + diff * dB[:, i, None]
    y2, z2, Ival = relation_values(N, X2[:, N])
    Y2[:, N], Z2[:, N], I_panel[:, N] = y2, z2, Ival

    res_y1, res_z1 = _residual_backward_y1(spec, frame, sol, adj1, spike, dvals, X1, Y1, Z1, mask, opts)
    res_y2, res_z2 = _residual_backward_y2(spec, frame, sol, adj1, spike, dvals, X1, Y1, X2, Y2, Z2, mask, opts)

    return VariationBundle(
        ProcessPanel(X1, grid, "X1"), ProcessPanel(Y1, grid, "Y1"), ProcessPanel(Z1, grid, "Z1"),
        ProcessPanel(X2, grid, "X2"), ProcessPanel(Y2, grid, "Y2"), ProcessPanel(Z2, grid, "Z2"),
        ProcessPanel(I_panel, grid, "I"), yhat,
        ProcessPanel(res_y1, grid, "res_y1"), ProcessPanel(res_y2, grid, "res_y2"),
        ProcessPanel(res_z1, grid, "res_z1"), ProcessPanel(res_z2, grid, "res_z2"),
    )


def _quad_vector(sec, tag, v, n):
    """Components <v, D^2 psi^i v> for a vector coefficient, shape (M, n)."""
    out = np.empty((v.shape[0], n))
    for comp in range(n):
        H = _hess_block(sec, tag, n, comp)
        out[:, comp] = np.einsum("ma,mab,mb->m", v, H, v)
    return out


def _hess_block(sec, tag, n, comp):
    M = sec[tag + "yy"].shape[0]
    H = np.zeros((M, n + 2, n + 2))
    H[:, :n, :n] = sec[tag + "xx"][:, comp]
    H[:, :n, n] = sec[tag + "xy"][:, comp]
    H[:, n, :n] = sec[tag + "xy"][:, comp]
    H[:, :n, n + 1] = sec[tag + "xz"][:, comp]
    H[:, n + 1, :n] = sec[tag + "xz"][:, comp]
    H[:, n, n] = sec[tag + "yy"][:, comp]
    H[:, n, n + 1] = sec[tag + "yz"][:, comp]
    H[:, n + 1, n] = sec[tag + "yz"][:, comp]
    H[:, n + 1, n + 1] = sec[tag + "zz"][:, comp]
    return H


def _quad_scalar(sec, v, n):
    """<v, D^2 g v> for the scalar driver."""
    M = sec["gyy"].shape[0]
    H = np.zeros((M, n + 2, n + 2))
    H[:, :n, :n] = sec["gxx"]
    H[:, :n, n] = sec["gxy"]
    H[:, n, :n] = sec["gxy"]
    H[:, :n, n + 1] = sec["gxz"]
    H[:, n + 1, :n] = sec["gxz"]
    H[:, n, n] = sec["gyy"]
    H[:, n, n + 1] = sec["gyz"]
    H[:, n + 1, n] = sec["gyz"]
    H[:, n + 1, n + 1] = sec["gzz"]
    return np.einsum("ma,mab,mb->m", v, H, v)


def _residual_backward_y1(spec, frame, sol, adj1, spike, dvals, X1, Y1, Z1, mask, opts):
    """Independently solve the first-order backward equation by regression on
    (X, X1) and difference against the relation values Y1 = <p, X1> and
    Z1 = <K1, X1> + Delta 1_E."""
    grid = sol.X.grid
    M, N = frame.M, grid.N
    dt, dB = grid.dt, sol.bundle.dB
    q = adj1.q_values
    y = np.empty((M, N + 1))
    zres = np.zeros((M, N + 1))
    y[:, N] = _dot(spec.phi.dx(frame.X[:, N]), X1[:, N])
    for i in range(N - 1, -1, -1):
        parts = frame.first(i)
        state = np.concatenate([frame.X[:, i], X1[:, i]], axis=1)
        nb = NodeBasis(state, opts.basis_degree)
        m_next = nb.fit(y[:, i + 1])
        zv = nb.fit((y[:, i + 1] - m_next) * dB[:, i] / dt)
        forcing = np.zeros(M)
        if mask[i]:
            u_sp = spike.perturb_values(M, i)
            ds = frame.shifted_values(i, u_sp, dvals[:, i])["s"] - frame.values(i)["s"]
            forcing = -_dot(q[:, i], ds)
        drv0 = _dot(parts["gx"], X1[:, i]) + parts["gz"] * (zv - dvals[:, i] * mask[i]) + forcing
        y[:, i] = (m_next + drv0 * dt) / (1.0 - parts["gy"] * dt)
        zres[:, i] = zv - Z1[:, i]
    return y - Y1, zres


def _residual_backward_y2(spec, frame, sol, adj1, spike, dvals, X1, Y1, X2, Y2, Z2, mask, opts):
    """Same cross-check for the second-order backward equation."""
    grid = sol.X.grid
    M, N = frame.M, grid.N
    dt, dB = grid.dt, sol.bundle.dB
    q, K1 = adj1.q_values, adj1.k1_values
    n = spec.n
    y = np.empty((M, N + 1))
    zres = np.zeros((M, N + 1))
    y[:, N] = (_dot(spec.phi.dx(frame.X[:, N]), X2[:, N])
               + 0.5 * np.einsum("mi,mij,mj->m", X1[:, N], spec.phi.dxx(frame.X[:, N]), X1[:, N]))
    for i in range(N - 1, -1, -1):
        parts = frame.first(i)
        sec = frame.second(i)
        state = np.concatenate([frame.X[:, i], X1[:, i], X2[:, i]], axis=1)
        nb = NodeBasis(state, opts.basis_degree)
        m_next = nb.fit(y[:, i + 1])
        zv = nb.fit((y[:, i + 1] - m_next) * dB[:, i] / dt)
        v = np.concatenate([X1[:, i], Y1[:, i, None], _dot(K1[:, i], X1[:, i])[:, None]], axis=1)
        forcing = 0.5 * _quad_scalar(sec, v, n)
        if mask[i]:
            u_sp = spike.perturb_values(M, i)
            sh = frame.shifted_values(i, u_sp, dvals[:, i])
            ref = frame.values(i)
            forcing = forcing + _dot(q[:, i], sh["s"] - ref["s"]) + (sh["g"] - ref["g"])
        drv0 = _dot(parts["gx"], X2[:, i]) + parts["gz"] * zv + forcing
        y[:, i] = (m_next + drv0 * dt) / (1.0 - parts["gy"] * dt)
        zres[:, i] = zv - Z2[:, i]
    return y - Y2, zres


@dataclass
class SpikeDiffs:
    """Differences between the spiked and reference solutions, peeled order by
    order; the chain identities xi2 = xi1 - X1 and xi3 = xi2 - X2 hold by
    construction."""

    xi1: ProcessPanel
    eta1: ProcessPanel
    zeta1: ProcessPanel
    xi2: ProcessPanel
    eta2: ProcessPanel
    zeta2: ProcessPanel
    xi3: ProcessPanel
    eta3: ProcessPanel
    zeta3: ProcessPanel


def compute_spike_diffs(sol_ref: FbsdeSolution, sol_eps: FbsdeSolution,
                        var: VariationBundle) -> SpikeDiffs:
    grid = sol_ref.X.grid
    xi1 = sol_eps.X.values - sol_ref.X.values
    eta1 = sol_eps.Y.scalar() - sol_ref.Y.scalar()
    zeta1 = sol_eps.Z.scalar() - sol_ref.Z.scalar()
    xi2 = xi1 - var.X1.values
    eta2 = eta1 - var.Y1.scalar()
    zeta2 = zeta1 - var.Z1.scalar()
    xi3 = xi2 - var.X2.values
    eta3 = eta2 - var.Y2.scalar()
    zeta3 = zeta2 - var.Z2.scalar()
    mk = lambda v, name: ProcessPanel(v, grid, name)
    return SpikeDiffs(mk(xi1, "xi1"), mk(eta1, "eta1"), mk(zeta1, "zeta1"),
                      mk(xi2, "xi2"), mk(eta2, "eta2"), mk(zeta2, "zeta2"),
                      mk(xi3, "xi3"), mk(eta3, "eta3"), mk(zeta3, "zeta3"))


# ---------------------------------------------------------------------------
# order-of-epsilon experiments
# ---------------------------------------------------------------------------

@dataclass
class SlopeFit:
    slope: float
    half_width: float
    n_points: int
    degenerate: bool = False


def fit_loglog_slope(eps, values, excluded=()):
    """Least-squares slope of log(value) vs log(eps); 95% half-width from the
    regression standard error. Degenerate (non-positive) values flag the fit."""
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = np.array([j not in excluded for j in range(len(eps))])
    keep &= values > 0
    if keep.sum() < 2:
        return SlopeFit(float("nan"), float("nan"), int(keep.sum()), degenerate=True)
    res = linregress(np.log(eps[keep]), np.log(values[keep]))
    hw = 1.96 * res.stderr if np.isfinite(res.stderr) else float("nan")
    return SlopeFit(float(res.slope), float(hw), int(keep.sum()))


@dataclass
class OrderReport:
    eps: list
    betas: list
    norms: dict                 # name -> {"beta": b, "values": [...], "stderrs": [...]}
    slopes: dict                # name -> SlopeFit
    jdiff: list                 # per-eps (value, stderr) of J(u_eps) - J(u_ref)
    y2_0: list                  # per-eps (value, stderr)
    yhat_pairs: list            # per-eps (bsde, bsde_se, rep, rep_se)
    defect: list                # per-eps |J(u_eps) - J(u_ref) - Y2(0)|
    flags: dict = field(default_factory=dict)

    def table_rows(self):
        rows = []
        for name, rec in self.norms.items():
            for j, e in enumerate(self.eps):
                rows.append((e, name, rec["beta"], rec["values"][j], rec["stderrs"][j]))
        for j, e in enumerate(self.eps):
            rows.append((e, "expansion_defect", 1.0, self.defect[j], self.jdiff[j][1]))
        return rows

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("eps,norm,beta,estimate,stderr\n")
            for e, name, beta, val, se in self.table_rows():
                fh.write(f"{e!r},{name},{beta!r},{val!r},{se!r}\n")

    def slopes_csv(self, path):
        with open(path, "w") as fh:
            fh.write("norm,slope,half_width,n_points,degenerate\n")
            for name, sf in self.slopes.items():
                fh.write(f"{name},{sf.slope!r},{sf.half_width!r},{sf.n_points},{sf.degenerate}\n")

    def to_dict(self):
        return {
            "eps": list(self.eps),
            "betas": list(self.betas),
            "norms": {k: {"beta": v["beta"], "values": list(v["values"]),
                          "stderrs": list(v["stderrs"])} for k, v in self.norms.items()},
            "slopes": {k: {"slope": s.slope, "half_width": s.half_width,
                           "n_points": s.n_points, "degenerate": s.degenerate}
                       for k, s in self.slopes.items()},
            "jdiff": [list(x) for x in self.jdiff],
            "y2_0": [list(x) for x in self.y2_0],
            "yhat_pairs": [list(x) for x in self.yhat_pairs],
            "defect": list(self.defect),
            "flags": {str(k): v for k, v in self.flags.items()},
        }


def default_epsilon_ladder(T: float) -> list:
    return [T * 2.0 ** (-j) for j in range(4, 9)]


def run_order_experiment(spec: ProblemSpec, control, bundle: BrownianBundle,
                         eps_ladder=None, betas=(2.0, 4.0), spike_at: float = None,
                         spike_value=1.0, picard: PicardOpts = None,
                         adjoint_opts: AdjointOpts = None,
                         reference: FbsdeSolution = None,
                         adjoints=None) -> OrderReport:
    """Solve the spiked system over an epsilon ladder under common random
    numbers and fit log-log slopes of the spike-difference and variational
    norms, together with the scalar expansion defect |J(u^eps) - J(u) - Y2(0)|.

    Precomputed reference solutions/adjoints may be passed to share work across
    experiments; epsilon entries whose spiked solve fails (or needed Picard
    damping) are flagged and excluded from the slope fits.
    """
    grid = bundle.grid
    if eps_ladder is None:
        eps_ladder = default_epsilon_ladder(grid.T)
    if spike_at is None:
        spike_at = grid.T / 4.0
    if picard is None:
        picard = PicardOpts()
    if adjoint_opts is None:
        adjoint_opts = AdjointOpts(basis_degree=picard.basis.degree)

    sol = reference if reference is not None else solve_coupled_picard(spec, control, bundle, picard)
    if adjoints is not None:
        adj1, adj2 = adjoints
    else:
        adj1 = solve_first_order_adjoint(spec, sol, control, adjoint_opts)
        adj2 = solve_second_order_adjoint(spec, sol, adj1, adjoint_opts)
    frozen = tabulate_control(control, sol.X.values, grid)

    norm_specs = []
    for beta in betas:
        b = float(beta)
        for nm, kind in (("xi1", SUP), ("eta1", SUP), ("zeta1", INT2),
                         ("X1", SUP), ("Y1", SUP), ("Z1", INT2),
                         ("xi2", SUP), ("eta2", SUP), ("zeta2", INT2),
                         ("xi3", SUP), ("eta3", SUP), ("zeta3", INT2)):
            norm_specs.append((f"{nm}_b{b:g}", nm, MomentSpec(b, kind)))

    norms = {name: {"beta": ms.beta, "values": [], "stderrs": []} for name, _, ms in norm_specs}
    jdiff, y2_0, yhat_pairs, defect = [], [], [], []
    flags = {}

    for j, eps in enumerate(eps_ladder):
        spike = SpikeSpec(spike_at, eps, spike_value)
        try:
            delta = solve_delta(spec, sol, adj1, spike, c_min=adjoint_opts.c_min)
            var = simulate_variations(spec, sol, adj1, adj2, spike, delta, adjoint_opts)
            u_eps = spike.spiked_control(frozen, grid)
            sol_eps = solve_coupled_picard(spec, u_eps, bundle, picard)
        except (NoConvergenceError, InvertibilityError) as exc:
            flags[j] = f"solve failed: {exc}"
            for name, _, _ in norm_specs:
                norms[name]["values"].append(float("nan"))
                norms[name]["stderrs"].append(float("nan"))
            jdiff.append((float("nan"), float("nan")))
            y2_0.append((float("nan"), float("nan")))
            yhat_pairs.append((float("nan"),) * 4)
            defect.append(float("nan"))
            continue
        if sol_eps.damped or sol.damped:
            flags[j] = "picard damping engaged"
        diffs = compute_spike_diffs(sol, sol_eps, var)
        panels = {
            "xi1": diffs.xi1, "eta1": diffs.eta1, "zeta1": diffs.zeta1,
            "X1": var.X1, "Y1": var.Y1, "Z1": var.Z1,
            "xi2": diffs.xi2, "eta2": diffs.eta2, "zeta2": diffs.zeta2,
            "xi3": diffs.xi3, "eta3": diffs.eta3, "zeta3": diffs.zeta3,
        }
        for name, nm, ms in norm_specs:
            val, se = moment_norm(panels[nm], ms)
            norms[name]["values"].append(val)
            norms[name]["stderrs"].append(se)
        jd_samples = sol_eps.y0_samples - sol.y0_samples
        jd = float(jd_samples.mean())
        jd_se = float(jd_samples.std(ddof=1) / np.sqrt(len(jd_samples)))
        y2s = var.y2_0_samples
        y2v = float(y2s.mean())
        y2se = float(y2s.std(ddof=1) / np.sqrt(len(y2s)))
        jdiff.append((jd, jd_se))
        y2_0.append((y2v, y2se))
        yhat_pairs.append((var.yhat.y0_bsde, var.yhat.y0_bsde_se,
                           var.yhat.y0_rep, var.yhat.y0_rep_se))
        defect.append(abs(jd - y2v))
        del var, sol_eps, diffs, panels

    excluded = tuple(flags.keys())
    slopes = {}
    for name in norms:
        slopes[name] = fit_loglog_slope(eps_ladder, norms[name]["values"], excluded)
    slopes["expansion_defect"] = fit_loglog_slope(eps_ladder, defect, excluded)

    return OrderReport(list(eps_ladder), [float(b) for b in betas], norms, slopes,
                       jdiff, y2_0, yhat_pairs, defect, flags)
