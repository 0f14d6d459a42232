"""Solvers for the coupled forward-backward system: Euler-Maruyama forward
simulation, regression Monte Carlo backward recursion, Picard iteration for
the fully coupled problem, and the explicit decoupled solver for linear
forward-backward systems (with its L^beta estimate check).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvertibilityError, NoConvergenceError, NonFiniteError
from .model import ControlLaw, ProblemSpec
from .paths import SUP, INT2, BrownianBundle, MomentSpec, ProcessPanel, TimeGrid, moment_norm
from .regression import NodeBasis, NodeFit, blend_fits


@dataclass
class BasisSpec:
    """Polynomial regression basis: total degree over the conditioning state."""

    degree: int = 2


@dataclass
class PicardOpts:
    max_sweeps: int = 50
    tol: float = 1e-6
    damping: float = 1.0
    basis: BasisSpec = field(default_factory=BasisSpec)
    inner_tol: float = 1e-10
    inner_max: int = 10


class Closures:
    """Per-node regression estimates of (Y, Z) as functions of the state."""

    def __init__(self, y_fits, z_fits):
        self.y_fits = y_fits
        self.z_fits = z_fits

    def y_at(self, i, x):
        return self.y_fits[i](x)

    def z_at(self, i, x):
        return self.z_fits[i](x)

    def blended_with(self, old: Optional["Closures"], theta: float) -> "Closures":
        if old is None or theta >= 1.0:
            return self
        y = [blend_fits(f, g, theta) for f, g in zip(self.y_fits, old.y_fits)]
        z = [blend_fits(f, g, theta) for f, g in zip(self.z_fits, old.z_fits)]
        return Closures(y, z)


@dataclass
class FbsdeSolution:
    X: ProcessPanel
    Y: ProcessPanel
    Z: ProcessPanel
    control: ControlLaw
    bundle: BrownianBundle
    residual_trace: list
    converged: bool
    sweeps: int
    y0_samples: np.ndarray
    ridge_nodes: list
    closures: Optional[Closures] = None
    damped: bool = False

    @property
    def value(self) -> float:
        """J = Y(0)."""
        return float(self.y0_samples.mean())

    @property
    def value_stderr(self) -> float:
        m = len(self.y0_samples)
        return float(self.y0_samples.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0


def simulate_forward(spec: ProblemSpec, control: ControlLaw,
                     closures: Optional[Closures], bundle: BrownianBundle,
                     label: str = "X") -> ProcessPanel:
    """Euler-Maruyama forward panel X_{i+1} = X_i + b dt + sigma dB_i.

    When the drift/diffusion read (y, z), per-node closures supply those values
    from the current state; ``closures=None`` feeds zeros (the Picard cold
    start, also correct for decoupled problems).
    """
    grid, dB = bundle.grid, bundle.dB
    M, N = bundle.M, grid.N
    dt = grid.dt
    nodes = grid.nodes
    X = np.empty((M, N + 1, spec.n))
    X[:, 0, :] = spec.x0
    zeros = np.zeros(M)
    for i in range(N):
        x = X[:, i, :]
        y = closures.y_at(i, x) if closures is not None else zeros
        z = closures.z_at(i, x) if closures is not None else zeros
        u = control.values_at(i, nodes[i], x)
        bv = spec.b.value(nodes[i], x, y, z, u)
        sv = spec.sigma.value(nodes[i], x, y, z, u)
        nxt = x + bv * dt + sv * dB[:, i, None]
        if not np.all(np.isfinite(nxt)):
            bad = np.argwhere(~np.isfinite(nxt).all(axis=1))[0, 0]
            raise NonFiniteError(label, bad, i + 1)
        X[:, i + 1, :] = nxt
    return ProcessPanel(X, grid, label=label)


def solve_bsde_regression(spec: ProblemSpec, control: ControlLaw, X: ProcessPanel,
                          bundle: BrownianBundle, basis: BasisSpec = None,
                          inner_tol: float = 1e-10, inner_max: int = 10):
    """Backward regression solve of the Y/Z pair along a given forward panel.

    Y_N is pinned to phi(X_N) node-exactly. At each earlier node, Z comes from
    projecting the centered martingale increment (Y_{i+1} - E_i[Y_{i+1}]) dB / dt
    onto the basis, and Y from regressing Y_{i+1} + g(t_i, X_i, ., Z_i, u_i) dt,
    iterating the y-argument to a fixed point when the driver reads it.

    Returns (Y panel, Z panel, Closures, report dict).
    """
    if basis is None:
        basis = BasisSpec()
    grid, dB = bundle.grid, bundle.dB
    M, N = bundle.M, grid.N
    dt = grid.dt
    nodes = grid.nodes
    Xv = X.values

    Y = np.empty((M, N + 1))
    Z = np.zeros((M, N + 1))
    Y[:, N] = spec.phi.value(Xv[:, N, :])
    # pathwise value accumulator: same driver evaluations, no intermediate
    # refitting, so Y(0) samples keep an honest cross-path spread
    y_path = Y[:, N].copy()

    y_fits, z_fits = [None] * N, [None] * N
    ridge_nodes = []

    for i in range(N - 1, -1, -1):
        nb = NodeBasis(Xv[:, i, :], basis.degree)
        if nb.ridge_used:
            ridge_nodes.append(i)
        y_next = Y[:, i + 1]
        m_coef = nb.coefficients(y_next)
        m = nb.phi @ m_coef
        z_coef = nb.coefficients((y_next - m) * dB[:, i] / dt)
        z = nb.phi @ z_coef
        u = control.values_at(i, nodes[i], Xv[:, i, :])

        ya = y_next
        y = None
        for _ in range(inner_max):
            gval = spec.g.value(nodes[i], Xv[:, i, :], ya, z, u)
            rhs = y_next + gval * dt
            y_coef = nb.coefficients(rhs)
            y_new = nb.phi @ y_coef
            if y is not None and np.max(np.abs(y_new - y)) <= inner_tol * (1.0 + np.max(np.abs(y_new))):
                y = y_new
                break
            y = y_new
            ya = y
        Y[:, i] = y
        Z[:, i] = z
        y_path += spec.g.value(nodes[i], Xv[:, i, :], y, z, u) * dt
        y_fits[i] = NodeFit(nb.transform, y_coef, nb.state_lo, nb.state_hi)
        z_fits[i] = NodeFit(nb.transform, z_coef, nb.state_lo, nb.state_hi)
    Z[:, N] = Z[:, N - 1]

    report = {"ridge_nodes": ridge_nodes, "y0_samples": y_path}
    return (ProcessPanel(Y, grid, label="Y"), ProcessPanel(Z, grid, label="Z"),
            Closures(y_fits, z_fits), report)


def solve_coupled_picard(spec: ProblemSpec, control: ControlLaw,
                         bundle: BrownianBundle, opts: PicardOpts = None) -> FbsdeSolution:
    """Alternate forward simulation (with current Y/Z closures) and backward
    regression until the panels stop changing.

    The residual per sweep is the max over (X, Y, Z) of the sup-over-nodes root
    mean square path change; decoupled problems converge at sweep 2 with a
    residual at the regression-noise floor (exactly zero when b and sigma
    ignore y and z).
    """
    if opts is None:
        opts = PicardOpts()
    closures = None
    prev = None
    trace = []
    damped = opts.damping < 1.0
    sweeps = 0
    for sweep in range(1, opts.max_sweeps + 1):
        sweeps = sweep
        X = simulate_forward(spec, control, closures, bundle)
        Y, Z, fits, rep = solve_bsde_regression(
            spec, control, X, bundle, opts.basis, opts.inner_tol, opts.inner_max
        )
        if prev is not None:
            res = max(
                _panel_change(X.values, prev[0]),
                _panel_change(Y.values, prev[1]),
                _panel_change(Z.values, prev[2]),
            )
            trace.append(res)
            if res <= opts.tol:
                return FbsdeSolution(X, Y, Z, control, bundle, trace, True, sweep,
                                     rep["y0_samples"], rep["ridge_nodes"], fits, damped)
        prev = (X.values, Y.values, Z.values)
        closures = fits.blended_with(closures, opts.damping)
    err = NoConvergenceError("picard", trace[-1] if trace else np.inf,
                             detail=f"{sweeps} sweeps")
    err.trace = trace
    raise err


def _panel_change(new, old):
    d = new.reshape(new.shape[0], new.shape[1], -1) - old.reshape(new.shape[0], new.shape[1], -1)
    return float(np.sqrt((d * d).sum(axis=2).mean(axis=0)).max())


# ---------------------------------------------------------------------------
# linear forward-backward systems (explicit decoupled solver)
# ---------------------------------------------------------------------------

def _panelize(arr, M, n_nodes, shape):
    """Broadcast a constant / deterministic / adapted coefficient to a full panel view."""
    a = np.asarray(arr, dtype=float)
    target = (M, n_nodes) + tuple(shape)
    if a.shape == target:
        return a
    if a.ndim == len(shape):            # constant
        return np.broadcast_to(a, target)
    if a.shape == (n_nodes,) + tuple(shape):  # deterministic in time
        return np.broadcast_to(a[None], target)
    return np.broadcast_to(a, target)


@dataclass
class LinearFbsdeSpec:
    """Linear FBSDE with bounded coefficient panels and exogenous forcings.

        dX = [a1 X + b1 Y + c1 Z + L1] dt + [a2 X + b2 Y + c2 Z + L2] dB
        dY = -[<a3, X> + b3 Y + c3 Z + L3] dt + Z dB
        X(0) = x0,  Y(T) = <kappa, X(T)> + varsigma

    Coefficients may be constants, deterministic (N+1,...) arrays, or adapted
    (M, N+1, ...) panels; ``cond`` is the conditioning panel for the backward
    regressions (Brownian levels are a good default for B-adapted data).
    """

    grid: TimeGrid
    M: int
    n: int
    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    L3: np.ndarray
    kappa: np.ndarray
    varsigma: np.ndarray
    x0: np.ndarray
    cond: np.ndarray
    coeff_max: dict = field(default_factory=dict)

    def __post_init__(self):
        Mn, nn, n = self.M, self.grid.N + 1, self.n
        self.a1 = _panelize(self.a1, Mn, nn, (n, n))
        self.a2 = _panelize(self.a2, Mn, nn, (n, n))
        self.a3 = _panelize(self.a3, Mn, nn, (n,))
        self.b1 = _panelize(self.b1, Mn, nn, (n,))
        self.b2 = _panelize(self.b2, Mn, nn, (n,))
        self.c1 = _panelize(self.c1, Mn, nn, (n,))
        self.c2 = _panelize(self.c2, Mn, nn, (n,))
        self.b3 = _panelize(self.b3, Mn, nn, ())
        self.c3 = _panelize(self.c3, Mn, nn, ())
        self.L1 = _panelize(self.L1, Mn, nn, (n,))
        self.L2 = _panelize(self.L2, Mn, nn, (n,))
        self.L3 = _panelize(self.L3, Mn, nn, ())
        self.kappa = np.broadcast_to(np.asarray(self.kappa, dtype=float), (Mn, n))
        self.varsigma = np.broadcast_to(np.asarray(self.varsigma, dtype=float), (Mn,))
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        for name in ("a1", "a2", "a3", "b1", "b2", "b3", "c1", "c2", "c3"):
            v = getattr(self, name)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"coefficient {name} has non-finite entries")
            self.coeff_max[name] = float(np.abs(v).max())


@dataclass
class DecouplingData:
    """Solution of the backward pair (p, q) and scalar pair (phi, nu) that
    decouples a linear FBSDE, with the K1 panel and the invertibility margin."""

    p: np.ndarray      # (M, N+1, n)
    q: np.ndarray
    K1: np.ndarray
    phi: np.ndarray    # (M, N+1)
    nu: np.ndarray
    margin: float
    c_min: float
    ridge_nodes: list


def _dot(a, b):
    return np.einsum("mi,mi->m", a, b)


def solve_decoupling(lspec: LinearFbsdeSpec, bundle: BrownianBundle,
                     degree: int = 2, c_min: float = 0.1,
                     fp_tol: float = 1e-12, fp_max: int = 20) -> DecouplingData:
    """Solve the (p, q) backward pair (nonlinear in p through K1) and then the
    scalar (phi, nu) pair, whose affine per-node equation is solved exactly so
    the map from forcings to (phi, nu) stays linear."""
    grid, dB = bundle.grid, bundle.dB
    M, N, n = lspec.M, grid.N, lspec.n
    dt = grid.dt

    p = np.empty((M, N + 1, n))
    q = np.zeros((M, N + 1, n))
    p[:, N] = lspec.kappa
    margin = np.inf
    ridge_nodes = []

    def k1_of(pv, qv, i):
        mbar = 1.0 - _dot(pv, lspec.c2[:, i])
        mm = float(np.abs(mbar).min())
        if mm < c_min:
            raise InvertibilityError(mm, c_min, where=f"decoupling node {i}")
        k1 = (np.einsum("mij,mi->mj", lspec.a2[:, i], pv)
              + _dot(pv, lspec.b2[:, i])[:, None] * pv + qv) / mbar[:, None]
        return k1, mbar, mm

    for i in range(N - 1, -1, -1):
        nb = NodeBasis(lspec.cond[:, i], degree)
        if nb.ridge_used:
            ridge_nodes.append(i)
        m_next = nb.fit(p[:, i + 1])
        qv = nb.fit((p[:, i + 1] - m_next) * (dB[:, i] / dt)[:, None])
        pv = m_next
        for it in range(fp_max):
            k1, mbar, mm = k1_of(pv, qv, i)
            drv = (lspec.a3[:, i] + lspec.b3[:, i, None] * pv + lspec.c3[:, i, None] * k1
                   + np.einsum("mij,mi->mj", lspec.a1[:, i], pv)
                   + _dot(pv, lspec.b1[:, i])[:, None] * pv
                   + _dot(pv, lspec.c1[:, i])[:, None] * k1
                   + np.einsum("mij,mi->mj", lspec.a2[:, i], qv)
                   + _dot(qv, lspec.b2[:, i])[:, None] * pv
                   + _dot(qv, lspec.c2[:, i])[:, None] * k1)
            p_new = m_next + drv * dt
            if np.max(np.abs(p_new - pv)) <= fp_tol * (1.0 + np.max(np.abs(p_new))):
                pv = p_new
                break
            pv = p_new
        else:
            raise NoConvergenceError("decoupling p fixed point", np.max(np.abs(p_new - pv)),
                                     detail=f"node {i}")
        margin = min(margin, mm)
        p[:, i], q[:, i] = pv, qv
    q[:, N] = q[:, N - 1]

    K1 = np.empty_like(p)
    for i in range(N + 1):
        K1[:, i], _, mm = k1_of(p[:, i], q[:, i], i)
        margin = min(margin, mm)

    # scalar pair: per-node equation phi = m + (c0 + c1 phi) dt solved exactly
    phi = np.empty((M, N + 1))
    nu = np.zeros((M, N + 1))
    phi[:, N] = lspec.varsigma
    for i in range(N - 1, -1, -1):
        nb = NodeBasis(lspec.cond[:, i], degree)
        m_next = nb.fit(phi[:, i + 1])
        nv = nb.fit((phi[:, i + 1] - m_next) * dB[:, i] / dt)
        mbar = 1.0 - _dot(p[:, i], lspec.c2[:, i])
        gsum = (lspec.c3[:, i] + _dot(p[:, i], lspec.c1[:, i]) + _dot(q[:, i], lspec.c2[:, i])) / mbar
        c1 = (lspec.b3[:, i] + _dot(p[:, i], lspec.b1[:, i]) + _dot(q[:, i], lspec.b2[:, i])
              + gsum * _dot(p[:, i], lspec.b2[:, i]))
        c0 = (lspec.L3[:, i] + _dot(p[:, i], lspec.L1[:, i]) + _dot(q[:, i], lspec.L2[:, i])
              + gsum * (_dot(p[:, i], lspec.L2[:, i]) + nv))
        phi[:, i] = (m_next + c0 * dt) / (1.0 - c1 * dt)
        nu[:, i] = nv
    nu[:, N] = nu[:, N - 1]

    return DecouplingData(p, q, K1, phi, nu, float(margin), c_min, ridge_nodes)


def solve_linear_fbsde(lspec: LinearFbsdeSpec, bundle: BrownianBundle,
                       dec: DecouplingData):
    """Simulate the decoupled forward equation and recover (Y, Z) from the
    affine relations Y = <p, X> + phi and Z = <K1, X> + W, where W collects the
    phi/forcing part of the martingale integrand.

    Everything downstream of the decoupling data is affine in
    (L1, L2, L3, varsigma, x0), so superposition holds to rounding under
    common random numbers.
    """
    if dec.margin < dec.c_min:
        raise InvertibilityError(dec.margin, dec.c_min, where="solve_linear_fbsde")
    grid, dB = bundle.grid, bundle.dB
    M, N, n = lspec.M, grid.N, lspec.n
    dt = grid.dt

    mbar = 1.0 - np.einsum("mti,mti->mt", dec.p, lspec.c2)
    W = (np.einsum("mti,mti->mt", dec.p, lspec.b2) * dec.phi
         + np.einsum("mti,mti->mt", dec.p, lspec.L2) + dec.nu) / mbar

    X = np.empty((M, N + 1, n))
    X[:, 0] = lspec.x0
    for i in range(N):
        x = X[:, i]
        px = _dot(dec.p[:, i], x)
        kx = _dot(dec.K1[:, i], x)
        drift = (np.einsum("mij,mj->mi", lspec.a1[:, i], x)
                 + lspec.b1[:, i] * px[:, None] + lspec.c1[:, i] * kx[:, None]
                 + lspec.b1[:, i] * dec.phi[:, i, None] + lspec.L1[:, i]
                 + lspec.c1[:, i] * W[:, i, None])
        diff = (np.einsum("mij,mj->mi", lspec.a2[:, i], x)
                + lspec.b2[:, i] * px[:, None] + lspec.c2[:, i] * kx[:, None]
                + lspec.b2[:, i] * dec.phi[:, i, None] + lspec.L2[:, i]
                + lspec.c2[:, i] * W[:, i, None])
        X[:, i + 1] = x + drift * dt + diff * dB[:, i, None]
        if not np.all(np.isfinite(X[:, i + 1])):
            bad = np.argwhere(~np.isfinite(X[:, i + 1]).all(axis=1))[0, 0]
            raise NonFiniteError("linear X", bad, i + 1)

    Y = np.einsum("mti,mti->mt", dec.p, X) + dec.phi
    Z = np.einsum("mti,mti->mt", dec.K1, X) + W
    return (ProcessPanel(X, grid, "X_lin"), ProcessPanel(Y, grid, "Y_lin"),
            ProcessPanel(Z, grid, "Z_lin"))


@dataclass
class EstimateReport:
    lhs: float
    rhs: float
    ratio: float
    beta: float


def check_lbeta_estimate(lspec: LinearFbsdeSpec, X: ProcessPanel, Y: ProcessPanel,
                         Z: ProcessPanel, beta: float = 2.0) -> EstimateReport:
    """Empirical two-sided data for the linear-system a priori bound: solution
    norms on the left, forcing/terminal/initial norms on the right, and their
    ratio C_emp (defined as 0 when both sides vanish)."""
    lhs = (moment_norm(X, MomentSpec(beta, SUP))[0]
           + moment_norm(Y, MomentSpec(beta, SUP))[0]
           + moment_norm(Z, MomentSpec(beta, INT2))[0])
    dt = lspec.grid.dt
    l1 = np.sqrt((lspec.L1 ** 2).sum(axis=2))
    l2sq = (lspec.L2 ** 2).sum(axis=2)
    drift_part = ((l1[:, :-1] + np.abs(lspec.L3[:, :-1])).sum(axis=1) * dt) ** beta
    diff_part = (l2sq[:, :-1].sum(axis=1) * dt) ** (beta / 2.0)
    x0_norm = float(np.sqrt((lspec.x0 ** 2).sum()))
    rhs = float(np.mean(x0_norm ** beta + np.abs(lspec.varsigma) ** beta + drift_part + diff_part))
    ratio = lhs / rhs if rhs > 0 else 0.0
    return EstimateReport(float(lhs), rhs, float(ratio), beta)
