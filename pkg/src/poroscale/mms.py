"""Manufactured solutions: forcing terms that make a chosen analytic
pair (u*, U*, M*) an exact solution, plus convergence ladders.

Cases pick profiles whose micro dependence is polynomial or trigonometric
in the reference coordinate so every source below is hand-derivable:

* ``decay_sine``      linear laws, u* = e^-t sin(pi x), U* = u* (2 - z^2);
                      the quadratic micro profile is differenced exactly,
                      so the spatial error is the macro one (order 2).
* ``quasilinear_sine`` same fields, state-dependent macro diffusivity
                      a(u) = a0 + a1 u^2/(1+u^2); exercises the Picard
                      freeze-and-solve path (order 2 / order 1).
* ``porosity_decay``  adds an evolving porosity M* = M_min + (M0 - M_min) e^-t
                      through a custom consumption rate G = M - M_min.
* ``micro_profile``   macro part x(1-x) is differenced exactly; the cell
                      profile cos(pi r / 2) isolates the micro error.
* ``zero``            everything vanishes; errors must be exactly zero.

Temporal ladders measure against a fine-step run on the same grid, which
cancels the spatial error and isolates the order-1 march; spatial ladders
measure against the analytic solution with tau shrunk like h^2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .coefficients import DiffusivityLaw, LawSet, PorosityLaw, SourceLaw, StateLaw
from .errors import TooFewLevels, UnknownExperiment
from .evolution import SolverConfig, SystemState, simulate, validate_initial_data
from .geometry import CellMap, MacroExpr
from .meshes import MacroField, MacroMesh, MicroMesh, TwoScaleField, make_norm_suite

MMS_CASE_NAMES = (
    "zero",
    "decay_sine",
    "quasilinear_sine",
    "porosity_decay",
    "micro_profile",
)

_EXACT_FLOOR = 1e-12  # below this an error ladder is flagged exact


@dataclass
class MMSCase:
    """Analytic solution triple with the forcing that manufactures it."""

    name: str
    laws: LawSet
    geom: CellMap
    micro_dim: int
    u_exact: Callable[[float, np.ndarray], np.ndarray]
    U_exact: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    m_exact: Callable[[float, np.ndarray], np.ndarray]
    g1: Callable[[np.ndarray, float], np.ndarray]
    g2: Callable[[np.ndarray, "MicroMesh", float], np.ndarray]

    def initial_state(self, macro: MacroMesh, micro: MicroMesh) -> SystemState:
        u0 = MacroField(self.u_exact(0.0, macro.coords), macro)
        U0 = TwoScaleField(self.U_exact(0.0, macro.coords, micro.nodes), macro, micro)
        M0 = MacroField(self.m_exact(0.0, macro.coords), macro)
        return validate_initial_data(u0, U0, M0, self.laws)


def _g_inv_of(geom: CellMap, coords: np.ndarray) -> np.ndarray:
    return geom.rho_at(coords) ** -2.0


def make_case(name: str) -> MMSCase:
    if name not in MMS_CASE_NAMES:
        raise UnknownExperiment(
            f"unknown manufactured case {name!r}; choose from {MMS_CASE_NAMES}"
        )
    if name == "zero":
        laws = LawSet(
            diffusivity=DiffusivityLaw(
                StateLaw("constant", (1.0,)), StateLaw("constant", (1.0,)), 1e-8
            ),
            source=SourceLaw("zero"),
            porosity=PorosityLaw("zero", (), 0.5, 1.0, c_g=0.5, cap=0.0),
        )
        geom = CellMap(micro_dim=1, radius=MacroExpr("constant", (1.0,)))
        zero_u = lambda t, c: np.zeros(c.shape[0])
        return MMSCase(
            name=name,
            laws=laws,
            geom=geom,
            micro_dim=1,
            u_exact=zero_u,
            U_exact=lambda t, c, z: np.zeros((c.shape[0], len(z))),
            m_exact=lambda t, c: np.full(c.shape[0], 0.75),
            g1=lambda c, t: np.zeros(c.shape[0]),
            g2=lambda c, mm, t: np.zeros((c.shape[0], mm.n)),
        )

    if name in ("decay_sine", "quasilinear_sine"):
        beta = 0.5 if name == "decay_sine" else 0.0
        b2c = 1.0
        m0 = 0.8
        if name == "decay_sine":
            a1_law = StateLaw("constant", (1.0,))
            geom = CellMap(micro_dim=1, radius=MacroExpr("constant", (1.0,)))
        else:
            a1_law = StateLaw("rational_saturating", (1.0, 0.5))
            geom = CellMap(micro_dim=1, radius=MacroExpr("affine", (1.2, -0.3)))
        laws = LawSet(
            diffusivity=DiffusivityLaw(a1_law, StateLaw("constant", (b2c,)), 1e-8),
            source=SourceLaw("exchange", beta=beta),
            porosity=PorosityLaw("zero", (), 0.5, 1.0, c_g=0.5, cap=0.0),
        )

        def u_exact(t, coords):
            return np.exp(-t) * np.sin(np.pi * coords[:, 0])

        def U_exact(t, coords, z):
            return u_exact(t, coords)[:, None] * (2.0 - np.asarray(z) ** 2)[None, :]

        def m_exact(t, coords):
            return np.full(coords.shape[0], m0)

        def g1(coords, t):
            u = u_exact(t, coords)
            if name == "decay_sine":
                # d_t u - a u_xx - beta (ubar - u); cell mean of 2 - z^2 is 5/3
                return u * (-1.0 + np.pi ** 2 - beta * (5.0 / 3.0 - 1.0))
            a0, a1c = a1_law.params
            ux = np.exp(-t) * np.pi * np.cos(np.pi * coords[:, 0])
            a_u = a0 + a1c * u * u / (1.0 + u * u)
            da_u = 2.0 * a1c * u / (1.0 + u * u) ** 2
            return -u - da_u * ux * ux + np.pi ** 2 * a_u * u

        def g2(coords, mm, t):
            # M [d_t U + B U] + dM/dt U - f2;  B (u q(z)) = -g_inv b2 u q''
            u = u_exact(t, coords)
            q = 2.0 - mm.nodes ** 2
            g_inv = _g_inv_of(geom, coords)
            bu = 2.0 * g_inv[:, None] * b2c * u[:, None]
            dt_u = -u[:, None] * q[None, :]
            f2 = beta * (u[:, None] - u[:, None] * q[None, :])
            return m0 * (dt_u + bu) - f2

        return MMSCase(name, laws, geom, 1, u_exact, U_exact, m_exact, g1, g2)

    if name == "porosity_decay":
        b2c = 1.0
        beta = 0.5
        m_min, m_max, m0 = 0.5, 1.0, 0.9
        laws = LawSet(
            diffusivity=DiffusivityLaw(
                StateLaw("constant", (1.0,)), StateLaw("constant", (b2c,)), 1e-8
            ),
            source=SourceLaw("exchange", beta=beta),
            porosity=PorosityLaw(
                "zero",
                (),
                m_min,
                m_max,
                c_g=0.6,
                cap=0.5,
                custom_g0=lambda load, M: M - m_min,
            ),
        )
        geom = CellMap(micro_dim=1, radius=MacroExpr("constant", (1.0,)))

        def u_exact(t, coords):
            return np.exp(-t) * np.sin(np.pi * coords[:, 0])

        def U_exact(t, coords, z):
            return u_exact(t, coords)[:, None] * (2.0 - np.asarray(z) ** 2)[None, :]

        def m_exact(t, coords):
            return np.full(coords.shape[0], m_min + (m0 - m_min) * np.exp(-t))

        def g1(coords, t):
            u = u_exact(t, coords)
            return u * (-1.0 + np.pi ** 2 - beta * (5.0 / 3.0 - 1.0))

        def g2(coords, mm, t):
            u = u_exact(t, coords)
            q = (2.0 - mm.nodes ** 2)[None, :]
            m_star = m_exact(t, coords)[:, None]
            dm_star = -(m_star - m_min)
            U = u[:, None] * q
            dt_U = -U
            bu = 2.0 * b2c * u[:, None]  # g_inv = 1
            f2 = beta * (u[:, None] - U)
            return m_star * (dt_U + bu) + dm_star * U - f2

        return MMSCase(name, laws, geom, 1, u_exact, U_exact, m_exact, g1, g2)

    # micro_profile: macro is differenced exactly, cell profile drives error
    micro_dim = 1
    b2c = 1.0
    a0 = 1.0
    m0 = 0.8
    amp = 0.3
    laws = LawSet(
        diffusivity=DiffusivityLaw(
            StateLaw("constant", (a0,)), StateLaw("constant", (b2c,)), 1e-8
        ),
        source=SourceLaw("zero"),
        porosity=PorosityLaw("zero", (), 0.5, 1.0, c_g=0.5, cap=0.0),
    )
    geom = CellMap(micro_dim=micro_dim, radius=MacroExpr("affine", (1.1, -0.2)))

    def u_exact(t, coords):
        x = coords[:, 0]
        return x * (1.0 - x)

    def profile(z):
        return np.cos(0.5 * np.pi * np.asarray(z))

    def U_exact(t, coords, z):
        bump = amp * np.exp(-t) * np.sin(np.pi * coords[:, 0])
        return u_exact(t, coords)[:, None] + bump[:, None] * profile(z)[None, :]

    def m_exact(t, coords):
        return np.full(coords.shape[0], m0)

    def g1(coords, t):
        return np.full(coords.shape[0], 2.0 * a0)

    def g2(coords, mm, t):
        # B(u* + A cos(pi z / 2)) = g_inv b2 A (pi/2)^2 cos(pi z / 2)
        bump = amp * np.exp(-t) * np.sin(np.pi * coords[:, 0])
        g_inv = _g_inv_of(geom, coords)
        prof = profile(mm.nodes)[None, :]
        dt_U = -bump[:, None] * prof
        bu = g_inv[:, None] * b2c * (0.5 * np.pi) ** 2 * bump[:, None] * prof
        return m0 * (dt_U + bu)

    return MMSCase(name, laws, geom, micro_dim, u_exact, U_exact, m_exact, g1, g2)


# ---------------------------------------------------------------------------
# error ladders
# ---------------------------------------------------------------------------

@dataclass
class MMSResult:
    case: str
    macro_n: int
    micro_n: int
    tau: float
    t_end: float
    err_u: float
    err_U: float
    err_m: float

    @property
    def err_total(self) -> float:
        return max(self.err_u, self.err_U, self.err_m)


@dataclass
class ConvergenceReport:
    case: str
    mode: str
    h_values: list
    errors: dict
    slopes: dict

    def rows(self):
        for i, h in enumerate(self.h_values):
            yield {
                "h": h,
                "err_u": self.errors["u"][i],
                "err_U": self.errors["U"][i],
                "err_m": self.errors["m"][i],
            }


def run_mms(
    case: MMSCase,
    macro_n: int,
    micro_n: int,
    tau: float,
    t_end: float,
    p: float = 4.0,
) -> MMSResult:
    """March the manufactured problem and report max-norm final errors."""
    macro = MacroMesh(dim=1, n=macro_n)
    micro = MicroMesh(dim=case.micro_dim, n=micro_n)
    suite = make_norm_suite(macro, micro, case.geom, p=p)
    state = case.initial_state(macro, micro)
    n_steps = int(round(t_end / tau))
    cfg = SolverConfig(tau=tau)
    forcing = (case.g1, case.g2)
    result = simulate(state, n_steps, cfg, case.laws, case.geom, suite, forcing)
    fin = result.final
    t = n_steps * tau
    err_u = np.abs(fin.u.values - case.u_exact(t, macro.coords)).max()
    err_U = np.abs(fin.U.values - case.U_exact(t, macro.coords, micro.nodes)).max()
    err_m = np.abs(fin.M.values - case.m_exact(t, macro.coords)).max()
    return MMSResult(case.name, macro_n, micro_n, tau, t, err_u, err_U, err_m)


def _slope(h_values, errors) -> Optional[float]:
    errs = np.asarray(errors, dtype=float)
    if errs.max() < _EXACT_FLOOR:
        return None  # exact to rounding; no order to measure
    errs = np.maximum(errs, 1e-300)
    return float(np.polyfit(np.log(np.asarray(h_values)), np.log(errs), 1)[0])


def run_convergence(
    case: MMSCase,
    mode: str = "spatial",
    levels: int = 4,
    t_end: float = 0.1,
    tau0: float = 0.02,
    macro_n0: int = 9,
    micro_n0: int = 5,
    p: float = 4.0,
) -> ConvergenceReport:
    """Error ladder under one of three refinement modes.

    spatial:  halve the macro and micro grids together, tau ~ h^2, errors
              against the analytic solution (expected slope 2);
    temporal: fixed grid, halve tau, errors against a 16x finer march on
              the same grid (expected slope 1);
    micro:    halve the micro grid only, tau ~ h_y^2, analytic errors
              (expected slope 2 for a macro-exact case).
    """
    if levels < 3:
        raise TooFewLevels("a convergence ladder needs at least 3 levels")
    if mode not in ("spatial", "temporal", "micro"):
        raise UnknownExperiment(f"unknown refinement mode {mode!r}")

    h_values = []
    errors = {"u": [], "U": [], "m": []}

    if mode == "temporal":
        macro_n, micro_n = 33, 9
        macro = MacroMesh(dim=1, n=macro_n)
        micro = MicroMesh(dim=case.micro_dim, n=micro_n)
        suite = make_norm_suite(macro, micro, case.geom, p=p)
        forcing = (case.g1, case.g2)
        taus = [tau0 / 2 ** k for k in range(levels)]
        tau_ref = taus[-1] / 16.0

        def final_state(tau):
            n_steps = int(round(t_end / tau))
            state = case.initial_state(macro, micro)
            return simulate(
                state, n_steps, SolverConfig(tau=tau), case.laws, case.geom,
                suite, forcing,
            ).final

        ref = final_state(tau_ref)
        for tau in taus:
            fin = final_state(tau)
            h_values.append(tau)
            errors["u"].append(np.abs(fin.u.values - ref.u.values).max())
            errors["U"].append(np.abs(fin.U.values - ref.U.values).max())
            errors["m"].append(np.abs(fin.M.values - ref.M.values).max())
    else:
        for k in range(levels):
            if mode == "spatial":
                macro_n = (macro_n0 - 1) * 2 ** k + 1
                micro_n = (micro_n0 - 1) * 2 ** k + 1
                h = 1.0 / (macro_n - 1)
            else:
                macro_n = 17
                micro_n = (micro_n0 - 1) * 2 ** k + 1
                h = 1.0 / (micro_n - 1)
            tau = tau0 / 4 ** k
            res = run_mms(case, macro_n, micro_n, tau, t_end, p=p)
            h_values.append(h)
            errors["u"].append(res.err_u)
            errors["U"].append(res.err_U)
            errors["m"].append(res.err_m)

    slopes = {key: _slope(h_values, vals) for key, vals in errors.items()}
    return ConvergenceReport(case.name, mode, h_values, errors, slopes)
