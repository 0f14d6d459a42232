"""First- and second-order adjoint processes along a reference trajectory,
the positive exponential weight process, and the auxiliary scalar backward
equation driven by the spiked Hamiltonian increment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._frame import RefFrame
from .errors import InvertibilityError, NoConvergenceError
from .fbsde import FbsdeSolution
from .paths import ProcessPanel
from .regression import NodeBasis


@dataclass
class AdjointOpts:
    basis_degree: int = 2
    c_min: float = 0.1
    fp_tol: float = 1e-12
    fp_max: int = 20


@dataclass
class FirstOrderAdjoint:
    p: ProcessPanel
    q: ProcessPanel
    K1: ProcessPanel
    margin: float
    c_min: float
    max_abs_q: float
    max_inner_iterations: int
    ridge_nodes: list
    frame: RefFrame

    @property
    def p_values(self):
        return self.p.values  # (M, N+1, n)

    @property
    def q_values(self):
        return self.q.values

    @property
    def k1_values(self):
        return self.K1.values


@dataclass
class SecondOrderAdjoint:
    P: ProcessPanel            # (M, N+1, n, n)
    Q: ProcessPanel
    K2: ProcessPanel
    H_y: np.ndarray            # (M, N+1)
    H_z: np.ndarray
    max_inner_iterations: int
    ridge_nodes: list

    @property
    def P_values(self):
        return self.P.values

    @property
    def K2_values(self):
        return self.K2.values


@dataclass
class GammaProcess:
    gamma: ProcessPanel
    drift_coeff: np.ndarray    # (M, N+1)
    diff_coeff: np.ndarray


@dataclass
class YhatSolution:
    yhat: ProcessPanel
    zhat: ProcessPanel
    forcing: np.ndarray        # (M, N+1)
    y0_bsde: float
    y0_bsde_se: float
    y0_rep: float
    y0_rep_se: float
    gamma: GammaProcess


def _dot(a, b):
    return np.einsum("mi,mi->m", a, b)


def _k1_formula(parts, p, q, c_min, where):
    mbar = 1.0 - _dot(p, parts["sz"])
    mm = float(np.abs(mbar).min())
    if mm < c_min:
        raise InvertibilityError(mm, c_min, where=where)
    k1 = (np.einsum("mji,mj->mi", parts["sx"], p)
          + _dot(p, parts["sy"])[:, None] * p + q) / mbar[:, None]
    return k1, mbar, mm


def _p_driver(parts, p, q, k1):
    """Generator of the first-order adjoint backward equation."""
    return (parts["gx"] + parts["gy"][:, None] * p + parts["gz"][:, None] * k1
            + np.einsum("mji,mj->mi", parts["bx"], p)
            + _dot(p, parts["by"])[:, None] * p
            + _dot(p, parts["bz"])[:, None] * k1
            + np.einsum("mji,mj->mi", parts["sx"], q)
            + _dot(q, parts["sy"])[:, None] * p
            + _dot(q, parts["sz"])[:, None] * k1)


def solve_first_order_adjoint(spec, sol: FbsdeSolution, control,
                              opts: AdjointOpts = None) -> FirstOrderAdjoint:
    """Backward regression solve of the (p, q) pair with terminal phi_x(X_T).

    At each node q is the centered martingale projection and p solves
    p = E_i[p_{i+1}] + G(p, q, K1(p, q)) dt. When sigma has no z-dependence at
    the node the K1 formula is explicit and a single evaluation at the
    regressed mean is used; otherwise p and K1 are resolved jointly by a fixed
    point (tolerance opts.fp_tol, cap opts.fp_max).
    """
    if opts is None:
        opts = AdjointOpts()
    frame = RefFrame.along(spec, sol, control)
    grid = sol.X.grid
    M, N, n = frame.M, grid.N, spec.n
    dt = grid.dt
    dB = sol.bundle.dB

    p = np.empty((M, N + 1, n))
    q = np.zeros((M, N + 1, n))
    p[:, N] = spec.phi.dx(frame.X[:, N])
    margin = np.inf
    max_iters = 0
    ridge_nodes = []

    for i in range(N - 1, -1, -1):
        parts = frame.first(i)
        nb = NodeBasis(frame.X[:, i], opts.basis_degree)
        if nb.ridge_used:
            ridge_nodes.append(i)
        m_next = nb.fit(p[:, i + 1])
        qv = nb.fit((p[:, i + 1] - m_next) * (dB[:, i] / dt)[:, None])
        sz_free = float(np.abs(parts["sz"]).max()) == 0.0
        if sz_free:
            k1, _, mm = _k1_formula(parts, m_next, qv, opts.c_min, f"adjoint node {i}")
            pv = m_next + _p_driver(parts, m_next, qv, k1) * dt
            iters = 1
        else:
            pv = m_next
            for iters in range(1, opts.fp_max + 1):
                k1, _, mm = _k1_formula(parts, pv, qv, opts.c_min, f"adjoint node {i}")
                p_new = m_next + _p_driver(parts, pv, qv, k1) * dt
                if np.max(np.abs(p_new - pv)) <= opts.fp_tol * (1.0 + np.max(np.abs(p_new))):
                    pv = p_new
                    break
                pv = p_new
            else:
                raise NoConvergenceError("first-order adjoint fixed point",
                                         np.max(np.abs(p_new - pv)), detail=f"node {i}")
        margin = min(margin, mm)
        max_iters = max(max_iters, iters)
        p[:, i], q[:, i] = pv, qv
    q[:, N] = q[:, N - 1]

    K1 = np.empty_like(p)
    for i in range(N + 1):
        parts = frame.first(i)
        K1[:, i], _, mm = _k1_formula(parts, p[:, i], q[:, i], opts.c_min, f"adjoint node {i}")
        margin = min(margin, mm)

    return FirstOrderAdjoint(
        ProcessPanel(p, grid, "p"), ProcessPanel(q, grid, "q"), ProcessPanel(K1, grid, "K1"),
        float(margin), opts.c_min, float(np.abs(q).max()), max_iters, ridge_nodes, frame,
    )


def _assemble_hessian(n, hxx, hxy, hxz, hyy, hyz, hzz):
    """Pack (x, y, z) second partials into the symmetric (n+2) x (n+2) matrix."""
    M = hyy.shape[0]
    H = np.zeros((M, n + 2, n + 2))
    H[:, :n, :n] = hxx
    H[:, :n, n] = hxy
    H[:, n, :n] = hxy
    H[:, :n, n + 1] = hxz
    H[:, n + 1, :n] = hxz
    H[:, n, n] = hyy
    H[:, n, n + 1] = hyz
    H[:, n + 1, n] = hyz
    H[:, n + 1, n + 1] = hzz
    return H


def _weighted_hessian(sec, tag, weights, n):
    """sum_i w_i D^2 psi^i for a vector coefficient psi (weights (M, n))."""
    w = weights
    return _assemble_hessian(
        n,
        np.einsum("mi,mijl->mjl", w, sec[tag + "xx"]),
        np.einsum("mi,mij->mj", w, sec[tag + "xy"]),
        np.einsum("mi,mij->mj", w, sec[tag + "xz"]),
        _dot(w, sec[tag + "yy"]),
        _dot(w, sec[tag + "yz"]),
        _dot(w, sec[tag + "zz"]),
    )


def hamiltonian_hessian(sec, p, q, n):
    """D^2 H = D^2 g + sum_i p_i D^2 b^i + sum_i q_i D^2 sigma^i over (x, y, z)."""
    Hg = _assemble_hessian(n, sec["gxx"], sec["gxy"], sec["gxz"],
                           sec["gyy"], sec["gyz"], sec["gzz"])
    return Hg + _weighted_hessian(sec, "b", p, n) + _weighted_hessian(sec, "s", q, n)


def h_partials(frame: RefFrame, p, q):
    """Panels of H_y and H_z along the reference trajectory, H = g + <p,b> + <q,sigma>."""
    M, n_nodes = frame.M, frame.grid.N + 1
    Hy = np.empty((M, n_nodes))
    Hz = np.empty((M, n_nodes))
    for i in range(n_nodes):
        parts = frame.first(i)
        Hy[:, i] = parts["gy"] + _dot(p[:, i], parts["by"]) + _dot(q[:, i], parts["sy"])
        Hz[:, i] = parts["gz"] + _dot(p[:, i], parts["bz"]) + _dot(q[:, i], parts["sz"])
    return Hy, Hz


def solve_second_order_adjoint(spec, sol: FbsdeSolution, adj1: FirstOrderAdjoint,
                               opts: AdjointOpts = None) -> SecondOrderAdjoint:
    """Backward regression solve of the matrix-valued second-order adjoint.

    The generator combines the linearized drift/diffusion maps contracted with
    (I, p, K1), the full Hamiltonian Hessian, and the K2 closure; P is
    symmetrized after every update.
    """
    if opts is None:
        opts = AdjointOpts()
    frame = adj1.frame
    grid = sol.X.grid
    M, N, n = frame.M, grid.N, spec.n
    dt = grid.dt
    dB = sol.bundle.dB

    pv_all, qv_all, k1_all = adj1.p_values, adj1.q_values, adj1.k1_values
    Hy, Hz = h_partials(frame, pv_all, qv_all)

    P = np.empty((M, N + 1, n, n))
    Q = np.zeros((M, N + 1, n, n))
    P[:, N] = spec.phi.dxx(frame.X[:, N])
    K2 = np.zeros((M, N + 1, n, n))
    max_iters = 0
    ridge_nodes = []

    def node_pieces(i):
        parts = frame.first(i)
        sec = frame.second(i)
        p, q, k1 = pv_all[:, i], qv_all[:, i], k1_all[:, i]
        S = parts["sx"] + np.einsum("mi,mj->mij", parts["sy"], p) + np.einsum("mi,mj->mij", parts["sz"], k1)
        Bm = parts["bx"] + np.einsum("mi,mj->mij", parts["by"], p) + np.einsum("mi,mj->mij", parts["bz"], k1)
        G = np.concatenate([np.broadcast_to(np.eye(n), (M, n, n)), p[:, :, None], k1[:, :, None]], axis=2)
        D2H = hamiltonian_hessian(sec, p, q, n)
        quad = np.einsum("mia,mab,mjb->mij", G, D2H, G)
        pD2s = np.einsum("mia,mab,mjb->mij", G, _weighted_hessian(sec, "s", p, n), G)
        mbar = 1.0 - _dot(p, parts["sz"])
        mm = float(np.abs(mbar).min())
        if mm < opts.c_min:
            raise InvertibilityError(mm, opts.c_min, where=f"second-order adjoint node {i}")
        syp = np.einsum("mi,mj->mij", parts["sy"], p)
        return parts, p, S, Bm, quad, pD2s, mbar, syp

    def k2_of(Pv, Qv, pieces):
        _, p, S, _, _, pD2s, mbar, syp = pieces
        num = (np.einsum("mij,mjk->mik", syp, Pv)
               + np.einsum("mji,mjk->mik", S, Pv)
               + np.einsum("mij,mjk->mik", Pv, S)
               + Qv + pD2s)
        return num / mbar[:, None, None]

    def driver(Pv, Qv, pieces, i):
        _, _, S, Bm, quad, _, _, _ = pieces
        k2 = k2_of(Pv, Qv, pieces)
        return (np.einsum("mji,mjk,mkl->mil", S, Pv, S)
                + np.einsum("mij,mjk->mik", Pv, Bm)
                + np.einsum("mji,mjk->mik", Bm, Pv)
                + Pv * Hy[:, i, None, None]
                + np.einsum("mij,mjk->mik", Qv, S)
                + np.einsum("mji,mjk->mik", S, Qv)
                + quad + Hz[:, i, None, None] * k2), k2

    for i in range(N - 1, -1, -1):
        nb = NodeBasis(frame.X[:, i], opts.basis_degree)
        if nb.ridge_used:
            ridge_nodes.append(i)
        flat_next = P[:, i + 1].reshape(M, n * n)
        m_next = nb.fit(flat_next)
        Qv = nb.fit((flat_next - m_next) * (dB[:, i] / dt)[:, None]).reshape(M, n, n)
        m_next = m_next.reshape(M, n, n)
        pieces = node_pieces(i)
        Pv = m_next
        for iters in range(1, opts.fp_max + 1):
            drv, k2 = driver(Pv, Qv, pieces, i)
            P_new = m_next + drv * dt
            P_new = 0.5 * (P_new + P_new.transpose(0, 2, 1))
            if np.max(np.abs(P_new - Pv)) <= opts.fp_tol * (1.0 + np.max(np.abs(P_new))):
                Pv = P_new
                break
            Pv = P_new
        else:
            raise NoConvergenceError("second-order adjoint fixed point",
                                     np.max(np.abs(P_new - Pv)), detail=f"node {i}")
        max_iters = max(max_iters, iters)
        P[:, i], Q[:, i] = Pv, Qv
        K2[:, i] = k2
    Q[:, N] = Q[:, N - 1]
    K2[:, N] = k2_of(P[:, N], Q[:, N], node_pieces(N))

    return SecondOrderAdjoint(
        ProcessPanel(P, grid, "P"), ProcessPanel(Q, grid, "Q"), ProcessPanel(K2, grid, "K2"),
        Hy, Hz, max_iters, ridge_nodes,
    )


def aux_coefficients(frame: RefFrame, adj1: FirstOrderAdjoint, Hy, Hz):
    """Drift/diffusion coefficients shared by the exponential weight process and
    the auxiliary backward equation:

        a_y = H_y + g_z <p, sigma_y> / (1 - <p, sigma_z>)
        a_z = H_z + g_z <p, sigma_z> / (1 - <p, sigma_z>)
    """
    M, n_nodes = frame.M, frame.grid.N + 1
    p = adj1.p_values
    a_y = np.empty((M, n_nodes))
    a_z = np.empty((M, n_nodes))
    for i in range(n_nodes):
        parts = frame.first(i)
        mbar = 1.0 - _dot(p[:, i], parts["sz"])
        a_y[:, i] = Hy[:, i] + parts["gz"] * _dot(p[:, i], parts["sy"]) / mbar
        a_z[:, i] = Hz[:, i] + parts["gz"] * _dot(p[:, i], parts["sz"]) / mbar
    return a_y, a_z


def solve_gamma(spec, sol: FbsdeSolution, adj1: FirstOrderAdjoint) -> GammaProcess:
    """Forward log-space Euler integration of the linear exponential-weight SDE;
    positivity is structural because the log is integrated."""
    frame = adj1.frame
    grid = sol.X.grid
    dt, dB = grid.dt, sol.bundle.dB
    Hy, Hz = h_partials(frame, adj1.p_values, adj1.q_values)
    a, c = aux_coefficients(frame, adj1, Hy, Hz)
    M, N = frame.M, grid.N
    logg = np.zeros((M, N + 1))
    for i in range(N):
        logg[:, i + 1] = logg[:, i] + (a[:, i] - 0.5 * c[:, i] ** 2) * dt + c[:, i] * dB[:, i]
    return GammaProcess(ProcessPanel(np.exp(logg), grid, "gamma"), a, c)


def spiked_forcing(frame: RefFrame, adj1: FirstOrderAdjoint, adj2: SecondOrderAdjoint,
                   spike, delta_values: np.ndarray):
    """Forcing [dH(t, Delta) + 0.5 dsig' P dsig] 1_E along the window."""
    grid = frame.grid
    M = frame.M
    F = np.zeros((M, grid.N + 1))
    mask = spike.window_mask(grid)
    p, q, P = adj1.p_values, adj1.q_values, adj2.P_values
    for i in np.flatnonzero(mask):
        u_sp = spike.perturb_values(M, i)
        ref = frame.values(i)
        sh = frame.shifted_values(i, u_sp, delta_values[:, i])
        db = sh["b"] - ref["b"]
        ds = sh["s"] - ref["s"]
        dg = sh["g"] - ref["g"]
        dH = _dot(p[:, i], db) + _dot(q[:, i], ds) + dg
        quad = 0.5 * np.einsum("mi,mij,mj->m", ds, P[:, i], ds)
        F[:, i] = dH + quad
    return F


def solve_yhat(spec, sol: FbsdeSolution, adj1: FirstOrderAdjoint,
               adj2: SecondOrderAdjoint, spike, delta,
               opts: AdjointOpts = None) -> YhatSolution:
    """Backward solve of the auxiliary scalar equation with terminal 0 and the
    spiked-Hamiltonian forcing, plus the exponential-weight representation of
    its initial value (two independent estimators of the same number)."""
    if opts is None:
        opts = AdjointOpts()
    frame = adj1.frame
    grid = sol.X.grid
    M, N = frame.M, grid.N
    dt, dB = grid.dt, sol.bundle.dB

    Hy, Hz = adj2.H_y, adj2.H_z
    a_y, a_z = aux_coefficients(frame, adj1, Hy, Hz)
    delta_values = delta.panel.scalar() if hasattr(delta, "panel") else np.asarray(delta)
    F = spiked_forcing(frame, adj1, adj2, spike, delta_values)

    yhat = np.zeros((M, N + 1))
    zhat = np.zeros((M, N + 1))
    y0_samples = None
    for i in range(N - 1, -1, -1):
        nb = NodeBasis(frame.X[:, i], opts.basis_degree)
        m_next = nb.fit(yhat[:, i + 1])
        zv = nb.fit((yhat[:, i + 1] - m_next) * dB[:, i] / dt)
        # affine in yhat_i: solve exactly
        yv = (m_next + (a_z[:, i] * zv + F[:, i]) * dt) / (1.0 - a_y[:, i] * dt)
        yhat[:, i], zhat[:, i] = yv, zv
        if i == 0:
            y0_samples = yhat[:, 1] + (a_y[:, 0] * yv + a_z[:, 0] * zv + F[:, 0]) * dt
    zhat[:, N] = zhat[:, N - 1]

    gamma = solve_gamma(spec, sol, adj1)
    rep_samples = (gamma.gamma.scalar()[:, :-1] * F[:, :-1]).sum(axis=1) * dt
    y0_b = float(y0_samples.mean())
    y0_b_se = float(y0_samples.std(ddof=1) / np.sqrt(M)) if M > 1 else 0.0
    y0_r = float(rep_samples.mean())
    y0_r_se = float(rep_samples.std(ddof=1) / np.sqrt(M)) if M > 1 else 0.0

    return YhatSolution(ProcessPanel(yhat, grid, "yhat"), ProcessPanel(zhat, grid, "zhat"),
                        F, y0_b, y0_b_se, y0_r, y0_r_se, gamma)
