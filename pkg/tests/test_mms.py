import numpy as np
import pytest
from scipy.integrate import quad

from poroscale.errors import TooFewLevels, UnknownExperiment
from poroscale.meshes import MicroMesh
from poroscale.mms import MMS_CASE_NAMES, make_case, run_convergence, run_mms

DELTA = 1e-4  # central-difference step for the residual oracle


def fd_t(fn, t, *args):
    return (fn(t + DELTA, *args) - fn(t - DELTA, *args)) / (2.0 * DELTA)


def u_bar_quadrature(case, t, coords):
    assert case.micro_dim == 1  # every catalog case lives on an interval cell
    val, _ = quad(
        lambda z: case.U_exact(t, coords, np.array([z]))[0, 0],
        -1.0,
        1.0,
        epsabs=1e-12,
        epsrel=1e-12,
    )
    return 0.5 * val


def macro_residual(case, t, x):
    """d_t u - d_x (a(u) u_x) - f1 - g1 by staggered central differences,
    entirely from the analytic fields."""
    coords = np.array([[x]])

    def u_at(tt, xx):
        return case.u_exact(tt, np.array([[xx]]))[0]

    a1 = case.laws.diffusivity.a1

    def a_of(r):
        if a1.name == "constant":
            return a1.params[0]
        p0, p1 = a1.params
        return p0 + p1 * r * r / (1.0 + r * r)

    def flux(xx):
        ux = (u_at(t, xx + 0.5 * DELTA) - u_at(t, xx - 0.5 * DELTA)) / DELTA
        return a_of(u_at(t, xx)) * ux

    div = (flux(x + 0.5 * DELTA) - flux(x - 0.5 * DELTA)) / DELTA
    dt_u = fd_t(case.u_exact, t, coords)[0]
    beta = case.laws.source.beta if case.laws.source.name == "exchange" else 0.0
    f1 = beta * (u_bar_quadrature(case, t, coords) - u_at(t, x))
    return dt_u - div - f1 - case.g1(coords, t)[0]


def micro_residual(case, t, x, z):
    """M (d_t U + B U) + dM/dt U - f2 - g2 at one reference point, with
    B U = -g_inv b2 U_zz for the constant cell coefficients used here."""
    coords = np.array([[x]])

    def U_at(tt, zz):
        return case.U_exact(tt, coords, np.array([zz]))[0, 0]

    u = case.u_exact(t, coords)[0]
    U = U_at(t, z)
    dt_U = (U_at(t + DELTA, z) - U_at(t - DELTA, z)) / (2.0 * DELTA)
    U_zz = (U_at(t, z + DELTA) - 2.0 * U + U_at(t, z - DELTA)) / DELTA ** 2
    g_inv = float(case.geom.rho_at(coords)[0]) ** -2
    b2c = case.laws.diffusivity.b2.params[0]
    BU = -g_inv * b2c * U_zz
    m = case.m_exact(t, coords)[0]
    dm = fd_t(case.m_exact, t, coords)[0]
    beta = case.laws.source.beta if case.laws.source.name == "exchange" else 0.0
    f2 = beta * (u - U)
    return m * (dt_U + BU) + dm * U - f2 - g2_at(case, coords, t, z)


class _NodeStub:
    """Duck-typed micro mesh exposing just the nodes the sources read."""

    def __init__(self, nodes, dim=1):
        self.nodes = np.asarray(nodes, dtype=float)
        self.dim = dim
        self.n = len(self.nodes)


def g2_at(case, coords, t, z):
    return case.g2(coords, _NodeStub([z], dim=case.micro_dim), t)[0, 0]


@pytest.mark.parametrize("name", ["decay_sine", "quasilinear_sine",
                                  "porosity_decay", "micro_profile"])
def test_manufactured_sources_satisfy_pde(name):
    """Finite-difference residual oracle: the forcing terms must make the
    analytic triple solve both equations pointwise."""
    case = make_case(name)
    rng = np.random.default_rng(0)
    for _ in range(20):
        t = rng.uniform(0.05, 0.3)
        x = rng.uniform(0.1, 0.9)
        z = rng.uniform(-0.9, 0.9)
        assert abs(macro_residual(case, t, x)) <= 1e-6
        assert abs(micro_residual(case, t, x, z)) <= 1e-6


def test_case_names_catalog():
    assert set(MMS_CASE_NAMES) == {
        "zero",
        "decay_sine",
        "quasilinear_sine",
        "porosity_decay",
        "micro_profile",
    }
    with pytest.raises(UnknownExperiment):
        make_case("fancy")


def test_initial_state_is_trace_exact():
    from poroscale.meshes import MacroMesh

    case = make_case("decay_sine")
    macro = MacroMesh(dim=1, n=17)
    micro = MicroMesh(dim=1, n=9)
    state = case.initial_state(macro, micro)
    for b in micro.boundary_idx:
        assert np.array_equal(state.U.values[:, b], state.u.values)


def test_zero_case_is_exact():
    res = run_mms(make_case("zero"), 9, 5, 0.02, 0.06)
    assert res.err_u == 0.0 and res.err_U == 0.0 and res.err_m == 0.0
    assert res.err_total == 0.0


def test_micro_profile_macro_part_exact():
    """The parabola x(1-x) is differenced exactly and decoupled from the
    cells, so the macro error sits at rounding level."""
    res = run_mms(make_case("micro_profile"), 17, 9, 0.01, 0.05)
    assert res.err_u <= 1e-12
    assert res.err_U > 1e-6  # the cell profile carries the real error


def test_spatial_convergence_second_order():
    rep = run_convergence(make_case("decay_sine"), mode="spatial", levels=3)
    assert 1.6 <= rep.slopes["u"] <= 2.4
    assert 1.6 <= rep.slopes["U"] <= 2.4
    assert rep.slopes["m"] is None  # constant porosity, exact
    assert len(rep.h_values) == 3
    assert all(a > b for a, b in zip(rep.h_values, rep.h_values[1:]))


def test_temporal_convergence_first_order():
    rep = run_convergence(make_case("decay_sine"), mode="temporal", levels=3)
    assert 0.8 <= rep.slopes["u"] <= 1.25
    assert 0.8 <= rep.slopes["U"] <= 1.25


def test_porosity_temporal_convergence():
    rep = run_convergence(make_case("porosity_decay"), mode="temporal", levels=3)
    assert 0.8 <= rep.slopes["m"] <= 1.25


def test_micro_refinement_isolates_cell_error():
    rep = run_convergence(make_case("micro_profile"), mode="micro", levels=3)
    assert 1.6 <= rep.slopes["U"] <= 2.4
    assert rep.slopes["u"] is None  # macro part exact on every level


def test_zero_case_ladder_reports_exact():
    rep = run_convergence(make_case("zero"), mode="spatial", levels=3)
    assert rep.slopes == {"u": None, "U": None, "m": None}


def test_ladder_guards():
    case = make_case("zero")
    with pytest.raises(TooFewLevels):
        run_convergence(case, mode="spatial", levels=2)
    with pytest.raises(UnknownExperiment):
        run_convergence(case, mode="sideways")


def test_convergence_report_rows():
    rep = run_convergence(make_case("zero"), mode="spatial", levels=3)
    rows = list(rep.rows())
    assert len(rows) == 3
    assert set(rows[0]) == {"h", "err_u", "err_U", "err_m"}
