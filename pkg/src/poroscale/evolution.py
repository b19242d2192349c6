"""Time evolution: implicit Euler with Picard linearization, the porosity
ODE, and the contraction (linearize-and-solve) window iteration.

The coupled quasilinear system is advanced by freezing the macro state v
inside the coefficients, solving one two-scale backward-Euler system per
Picard cycle and iterating until successive Y0 differences fall below
picard_tol.  The porosity ODE dM/dt = -G(U, M) advances by explicit
Euler with the converged cell field.

The contraction solver re-poses one window [0, T] as a fixed-point of the
map gamma: given an input trajectory (u_vec, M), solve the linear
problem with the operator frozen at the initial state,

    v' + A(u0) v = [A(u0) - A(u(t))] u_vec(t) + f~(t, u_vec(t), M(t)),
    N' = -G(U(t), M(t)),

starting from the baseline pair (w, M~) that solves the frozen-operator,
frozen-source problem.  Ratios of successive Sigma-norm differences must
stay below contraction_target (3/4); otherwise the window is halved.
On a backward-Euler slice [t_k, t_k+1] the porosity argument of f~ is
the left value M_k: with that convention the fixed point of gamma is
exactly the implicit-Euler Picard trajectory.

A sorption prefactor (1+K) on the time derivatives is applied as a
uniform time rescale: each reported step of tau integrates the canonical
system over tau / (1 + K).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .coefficients import (
    LawSet,
    cell_average,
    check_porosity_range,
    g_eval,
)
from .errors import (
    BoundaryViolation,
    PicardDivergence,
    PorosityRangeViolation,
    SmallnessViolation,
    TraceMismatch,
    WindowCollapse,
)
from .geometry import CellMap, TOL_TRACE
from .meshes import (
    MacroField,
    NormSuite,
    TwoScaleField,
    norm_e1t,
    norm_e2,
    norm_y0,
    norm_yt,
)
from .operators import CoupledOperator, apply_coupled, assemble_coupled, coupled_resolvent

Forcing = Optional[tuple]  # (g1(coords, t) -> (N,), g2(coords, micro, t) -> (N, m))


@dataclass
class SystemState:
    t: float
    u: MacroField
    U: TwoScaleField
    M: MacroField

    def copy(self) -> "SystemState":
        return SystemState(self.t, self.u.copy(), self.U.copy(), self.M.copy())


@dataclass
class SolverConfig:
    tau: float
    picard_tol: float = 1e-10
    picard_max: int = 50
    tol_lin: float = 1e-10
    contraction_target: float = 0.75
    window_shrink: float = 0.5
    gamma_max: int = 200

    def __post_init__(self):
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if not (0.0 < self.window_shrink < 1.0):
            raise ValueError("window_shrink must lie in (0, 1)")


@dataclass
class StepReport:
    iterations: int
    diffs: list
    last_ratio: float


@dataclass
class SmallnessReport:
    f2_sup: float
    f2_threshold: float
    u0_norm: float
    u0_threshold: float
    extra_sup: float
    extra_threshold: float
    extra_ok: bool

    @property
    def f2_ok(self) -> bool:
        return self.f2_sup <= self.f2_threshold

    @property
    def u0_ok(self) -> bool:
        return self.u0_norm <= self.u0_threshold

    @property
    def passed(self) -> bool:
        return self.f2_ok and self.u0_ok


@dataclass
class WindowReport:
    accepted_T: float
    windows_tried: int
    gamma_iterations: int
    ratios: list
    rho_ball: float
    first_correction: float
    smallness: SmallnessReport


def effective_tau(tau: float, laws: LawSet) -> float:
    return tau / (1.0 + laws.porosity.k_sorption)


# ---------------------------------------------------------------------------
# validation and hypothesis checks
# ---------------------------------------------------------------------------

def validate_initial_data(
    u0: MacroField,
    U0: TwoScaleField,
    M0: MacroField,
    laws: LawSet,
    tol_trace: float = TOL_TRACE,
) -> SystemState:
    """Admissibility of (u0, U0, M0); returns the t=0 state.

    The macro field must satisfy the homogeneous Dirichlet data, the cell
    field must match it at the trace nodes (then snapped exactly so every
    evolved state is trace-exact), and the porosity must start strictly
    inside [M_min, M_max].
    """
    scale = 1.0 + np.abs(u0.values).max()
    if np.abs(u0.values[u0.mesh.boundary_mask]).max(initial=0.0) > tol_trace * scale:
        raise BoundaryViolation("u0 must vanish on the Dirichlet boundary")
    bidx = list(U0.micro_mesh.boundary_idx)
    gap = np.abs(U0.values[:, bidx] - u0.values[:, None]).max()
    if gap > tol_trace * scale:
        raise TraceMismatch(f"tr U0 deviates from u0 by {gap:.3e}")
    plaw = laws.porosity
    if np.min(M0.values) <= plaw.m_min or np.max(M0.values) >= plaw.m_max:
        raise PorosityRangeViolation(
            "M0 must start strictly inside "
            f"({plaw.m_min}, {plaw.m_max})"
        )
    U = U0.copy()
    U.values[:, bidx] = u0.values[:, None]
    U.trace_compatible = True
    return SystemState(t=0.0, u=u0.copy(), U=U, M=M0.copy())


def check_smallness(
    state: SystemState,
    laws: LawSet,
    geom: CellMap,
    suite: NormSuite,
    t_window: float,
    forcing: Forcing = None,
    n_samples: int = 33,
) -> SmallnessReport:
    """Smallness hypotheses that gate the contraction solver.

    Gated: sup_t ||f2(t, u0, U0)||_E2 <= M_min^2 / 4 over the window and
    ||U0||_E2 <= M_min^2 / (4 c_g).  Additionally reported (not gated):
    sup_t ||U0 * G(U0, M~(t))||_E2 <= M_min^2 / 4 along the frozen-field
    porosity trajectory.
    """
    plaw, slaw = laws.porosity, laws.source
    m_min, c_g = plaw.m_min, plaw.c_g
    thresh = m_min ** 2 / 4.0
    coords = state.u.mesh.coords
    micro = state.U.micro_mesh

    times = np.linspace(0.0, t_window, n_samples)
    f2_sup = 0.0
    for t in times:
        f2 = slaw.f2(t, state.u.values, state.U.values)
        if forcing is not None and forcing[1] is not None:
            f2 = f2 + forcing[1](coords, micro, t)
        f2_sup = max(f2_sup, norm_e2(TwoScaleField(f2, state.u.mesh, micro), suite))

    u0_norm = norm_e2(state.U, suite)

    m_tilde = state.M.copy()
    dt = t_window / (n_samples - 1)
    extra_sup = norm_e2(
        TwoScaleField(
            state.U.values * g_eval(plaw, state.U, m_tilde, geom)[:, None],
            state.u.mesh,
            micro,
        ),
        suite,
    )
    for _ in range(n_samples - 1):
        m_tilde = step_porosity(m_tilde, state.U, dt, laws, geom)
        extra_sup = max(
            extra_sup,
            norm_e2(
                TwoScaleField(
                    state.U.values * g_eval(plaw, state.U, m_tilde, geom)[:, None],
                    state.u.mesh,
                    micro,
                ),
                suite,
            ),
        )
    return SmallnessReport(
        f2_sup=f2_sup,
        f2_threshold=thresh,
        u0_norm=u0_norm,
        u0_threshold=m_min ** 2 / (4.0 * c_g),
        extra_sup=extra_sup,
        extra_threshold=thresh,
        extra_ok=extra_sup <= thresh,
    )


# ---------------------------------------------------------------------------
# sources and porosity
# ---------------------------------------------------------------------------

def f_tilde_eval(
    t: float,
    u: MacroField,
    U: TwoScaleField,
    M: MacroField,
    rate: np.ndarray,
    laws: LawSet,
    forcing: Forcing = None,
):
    """Porosity-weighted sources (f1, f2/M - dM/dt * U/M) with dM/dt = -rate."""
    slaw = laws.source
    f1 = slaw.f1(t, u.values, cell_average(U))
    f2 = slaw.f2(t, u.values, U.values)
    if forcing is not None:
        if forcing[0] is not None:
            f1 = f1 + forcing[0](u.mesh.coords, t)
        if forcing[1] is not None:
            f2 = f2 + forcing[1](u.mesh.coords, U.micro_mesh, t)
    inv_m = 1.0 / M.values
    F2 = f2 * inv_m[:, None] + (rate * inv_m)[:, None] * U.values
    return f1, F2


def step_porosity(
    M: MacroField,
    U: TwoScaleField,
    tau: float,
    laws: LawSet,
    geom: CellMap,
) -> MacroField:
    """Explicit Euler step of dM/dt = -G(U, M); range-guarded, no clamping."""
    rate = g_eval(laws.porosity, U, M, geom)
    out = MacroField(M.values - tau * rate, M.mesh)
    check_porosity_range(laws.porosity, out.values)
    return out


# ---------------------------------------------------------------------------
# implicit Euler with Picard linearization
# ---------------------------------------------------------------------------

def implicit_euler_step(
    state: SystemState,
    cfg: SolverConfig,
    laws: LawSet,
    geom: CellMap,
    suite: NormSuite,
    forcing: Forcing = None,
    dm_from_ode: bool = True,
    m_prev: Optional[MacroField] = None,
):
    """One backward-Euler step of the coupled system.

    Per Picard cycle the coefficients freeze at the current iterate, one
    two-scale resolvent solve with lam = 1/tau advances the pair, and the
    cycle count is the number of successive-difference evaluations (a
    linear problem reports 1).  dm_from_ode selects whether the porosity
    rate inside the sources is -G at the iterate (default) or a backward
    difference of the porosity history.
    """
    tau = effective_tau(cfg.tau, laws)
    t_next = state.t + cfg.tau
    mesh, micro = state.u.mesh, state.U.micro_mesh
    lam = 1.0 / tau

    def solve_from(u_k: MacroField, U_k: TwoScaleField):
        if dm_from_ode:
            rate = g_eval(laws.porosity, U_k, state.M, geom)
        else:
            if m_prev is None:
                rate = g_eval(laws.porosity, U_k, state.M, geom)
            else:
                rate = -(state.M.values - m_prev.values) / tau
        F1, F2 = f_tilde_eval(t_next, u_k, U_k, state.M, rate, laws, forcing)
        op = assemble_coupled(u_k, laws.diffusivity, geom, micro, p=suite.p)
        f = MacroField(state.u.values * lam + F1, mesh)
        g = TwoScaleField(state.U.values * lam + F2, mesh, micro)
        return coupled_resolvent(op, lam, f, g, tol_lin=cfg.tol_lin)

    u_k, U_k = solve_from(state.u, state.U)
    diffs = []
    for k in range(1, cfg.picard_max + 1):
        u_n, U_n = solve_from(u_k, U_k)
        du = MacroField(u_n.values - u_k.values, mesh)
        dU = TwoScaleField(U_n.values - U_k.values, mesh, micro)
        diffs.append(norm_y0(du, dU, suite))
        u_k, U_k = u_n, U_n
        if diffs[-1] <= cfg.picard_tol:
            break
    else:
        growing = len(diffs) > 1 and diffs[-1] > diffs[0]
        raise PicardDivergence(
            f"picard cap {cfg.picard_max} reached, last diff {diffs[-1]:.3e}"
            + (" and growing; halve tau" if growing else "")
        )

    M_next = step_porosity(state.M, U_k, tau, laws, geom)
    ratio = diffs[-1] / diffs[-2] if len(diffs) > 1 and diffs[-2] > 0 else 0.0
    report = StepReport(iterations=len(diffs), diffs=diffs, last_ratio=ratio)
    return SystemState(t=t_next, u=u_k, U=U_k, M=M_next), report


def total_mass(state: SystemState, suite: NormSuite) -> float:
    """Signed mass: integral of u plus the transformed-cell integral of U."""
    wx, wy = suite.macro_weights, suite.micro_weights
    return float(wx @ state.u.values + wx @ (suite.sqrt_g * (state.U.values @ wy)))


@dataclass
class SimulationResult:
    states: list
    reports: list

    @property
    def final(self) -> SystemState:
        return self.states[-1]


def simulate(
    state0: SystemState,
    n_steps: int,
    cfg: SolverConfig,
    laws: LawSet,
    geom: CellMap,
    suite: NormSuite,
    forcing: Forcing = None,
    dm_from_ode: bool = True,
    keep_states: bool = True,
) -> SimulationResult:
    """March n_steps of implicit Euler from a validated initial state."""
    states = [state0]
    reports = []
    cur = state0
    m_prev = None
    for _ in range(n_steps):
        nxt, rep = implicit_euler_step(
            cur, cfg, laws, geom, suite, forcing, dm_from_ode, m_prev
        )
        m_prev = cur.M
        reports.append(rep)
        if keep_states:
            states.append(nxt)
        else:
            states[-1] = nxt
        cur = nxt
    return SimulationResult(states=states, reports=reports)


# ---------------------------------------------------------------------------
# contraction machinery
# ---------------------------------------------------------------------------

def baseline_w(
    state0: SystemState,
    n_slices: int,
    cfg: SolverConfig,
    laws: LawSet,
    geom: CellMap,
    suite: NormSuite,
    forcing: Forcing = None,
):
    """Frozen-operator, frozen-source trajectory (w, M~) on one window.

    Operator frozen at A(u0); sources evaluated at (u0, U0) along the
    frozen-field porosity M~; slice 0 is the initial pair exactly.
    """
    tau = effective_tau(cfg.tau, laws)
    mesh, micro = state0.u.mesh, state0.U.micro_mesh
    lam = 1.0 / tau
    base_op = assemble_coupled(state0.u, laws.diffusivity, geom, micro, p=suite.p)
    pairs = [(state0.u.copy(), state0.U.copy())]
    m_traj = [state0.M.copy()]
    for k in range(n_slices):
        t_next = state0.t + (k + 1) * cfg.tau
        m_left = m_traj[-1]
        rate = g_eval(laws.porosity, state0.U, m_left, geom)
        F1, F2 = f_tilde_eval(t_next, state0.u, state0.U, m_left, rate, laws, forcing)
        u_k, U_k = pairs[-1]
        f = MacroField(u_k.values * lam + F1, mesh)
        g = TwoScaleField(U_k.values * lam + F2, mesh, micro)
        pairs.append(coupled_resolvent(base_op, lam, f, g, tol_lin=cfg.tol_lin))
        m_traj.append(MacroField(m_left.values - tau * rate, mesh))
        check_porosity_range(laws.porosity, m_traj[-1].values)
    return pairs, m_traj, base_op


def gamma_map(
    pairs: Sequence[tuple],
    m_traj: Sequence[MacroField],
    state0: SystemState,
    base_op: CoupledOperator,
    cfg: SolverConfig,
    laws: LawSet,
    geom: CellMap,
    suite: NormSuite,
    forcing: Forcing = None,
):
    """One application of the contraction map gamma to an input trajectory.

    Output fields solve the frozen-operator problem driven by the
    commutator [A(u0) - A(u(t))] u_vec(t) plus the sources along the
    input; the output porosity integrates -G along the input.  Feeding
    the constant trajectory (u0_vec, M~) reproduces the baseline exactly.
    """
    tau = effective_tau(cfg.tau, laws)
    mesh, micro = state0.u.mesh, state0.U.micro_mesh
    lam = 1.0 / tau
    n_slices = len(pairs) - 1
    out_pairs = [(state0.u.copy(), state0.U.copy())]
    n_traj = [state0.M.copy()]
    for k in range(n_slices):
        t_next = state0.t + (k + 1) * cfg.tau
        u_in, U_in = pairs[k + 1]
        m_left = m_traj[k]
        rate = g_eval(laws.porosity, U_in, m_left, geom)
        F1, F2 = f_tilde_eval(t_next, u_in, U_in, m_left, rate, laws, forcing)
        # commutator term [A(u0) - A(u_in)] applied to the input pair
        f0, g0 = apply_coupled(base_op, u_in, U_in)
        op_in = assemble_coupled(u_in, laws.diffusivity, geom, micro, p=suite.p)
        f1, g1 = apply_coupled(op_in, u_in, U_in)
        u_k, U_k = out_pairs[-1]
        f = MacroField(u_k.values * lam + (f0.values - f1.values) + F1, mesh)
        g = TwoScaleField(
            U_k.values * lam + (g0.values - g1.values) + F2, mesh, micro
        )
        out_pairs.append(coupled_resolvent(base_op, lam, f, g, tol_lin=cfg.tol_lin))
        n_traj.append(MacroField(n_traj[-1].values - tau * rate, mesh))
        check_porosity_range(laws.porosity, n_traj[-1].values)
    return out_pairs, n_traj


def sigma_distance(
    pairs_a: Sequence[tuple],
    m_a: Sequence[MacroField],
    pairs_b: Sequence[tuple],
    m_b: Sequence[MacroField],
    suite: NormSuite,
    tau: float,
) -> float:
    """Sigma-norm of a trajectory difference: max(Y^T part, E1^T part)."""
    mesh = pairs_a[0][0].mesh
    micro = pairs_a[0][1].micro_mesh
    diff_pairs = [
        (
            MacroField(ua.values - ub.values, mesh),
            TwoScaleField(Ua.values - Ub.values, mesh, micro),
        )
        for (ua, Ua), (ub, Ub) in zip(pairs_a, pairs_b)
    ]
    diff_m = [MacroField(a.values - b.values, mesh) for a, b in zip(m_a, m_b)]
    return max(
        norm_yt(diff_pairs, suite, tau),
        norm_e1t(diff_m, suite, tau),
    )


def contraction_solve(
    state0: SystemState,
    t_window: float,
    cfg: SolverConfig,
    laws: LawSet,
    geom: CellMap,
    suite: NormSuite,
    rho_ball: Optional[float] = None,
    forcing: Forcing = None,
):
    """Window iteration of gamma with halving on contraction failure.

    Refuses to start (SmallnessViolation) unless the gated hypotheses of
    check_smallness hold.  A window is accepted when successive
    Sigma-differences contract with every measured ratio below
    contraction_target and all iterates stay in the rho-ball around the
    baseline; rho defaults to 10x the first correction.  Windows below
    four steps raise WindowCollapse.
    """
    small = check_smallness(state0, laws, geom, suite, t_window)
    if not small.passed:
        parts = []
        if not small.f2_ok:
            parts.append(
                f"sup ||f2|| = {small.f2_sup:.6g} > {small.f2_threshold:.6g}"
            )
        if not small.u0_ok:
            parts.append(
                f"||U0||_E2 = {small.u0_norm:.6g} > {small.u0_threshold:.6g}"
            )
        raise SmallnessViolation("; ".join(parts))

    T = t_window
    windows = 0
    while True:
        n_slices = int(round(T / cfg.tau))
        if T < 4.0 * cfg.tau or n_slices < 4:
            raise WindowCollapse(
                f"window {T:.3e} fell below four steps of tau = {cfg.tau}"
            )
        windows += 1
        tau = effective_tau(cfg.tau, laws)
        base_pairs, base_m, base_op = baseline_w(
            state0, n_slices, cfg, laws, geom, suite, forcing
        )
        cur_pairs, cur_m = gamma_map(
            base_pairs, base_m, state0, base_op, cfg, laws, geom, suite, forcing
        )
        d_prev = sigma_distance(cur_pairs, cur_m, base_pairs, base_m, suite, tau)
        first_correction = d_prev
        ball = rho_ball if rho_ball is not None else 10.0 * first_correction
        ratios = []
        accepted = d_prev <= cfg.picard_tol
        failed = False
        iterations = 1
        while not accepted and not failed:
            if iterations >= cfg.gamma_max:
                raise PicardDivergence(
                    f"gamma iteration cap {cfg.gamma_max} reached on window {T:.3e}"
                )
            nxt_pairs, nxt_m = gamma_map(
                cur_pairs, cur_m, state0, base_op, cfg, laws, geom, suite, forcing
            )
            iterations += 1
            d = sigma_distance(nxt_pairs, nxt_m, cur_pairs, cur_m, suite, tau)
            if d <= cfg.picard_tol:
                accepted = True
            else:
                ratios.append(d / d_prev)
                if ratios[-1] > cfg.contraction_target:
                    failed = True
                dist0 = sigma_distance(
                    nxt_pairs, nxt_m, base_pairs, base_m, suite, tau
                )
                if dist0 > ball:
                    failed = True
            cur_pairs, cur_m = nxt_pairs, nxt_m
            d_prev = d
        if accepted:
            report = WindowReport(
                accepted_T=n_slices * cfg.tau,
                windows_tried=windows,
                gamma_iterations=iterations,
                ratios=ratios,
                rho_ball=ball,
                first_correction=first_correction,
                smallness=small,
            )
            return cur_pairs, cur_m, report
        T *= cfg.window_shrink
