import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poroscale.errors import TooFewSlices, TraceMismatch
from poroscale.geometry import BALL_MEASURE, CellMap, MacroExpr, lift
from poroscale.meshes import (
    MacroField,
    MacroMesh,
    MicroMesh,
    TwoScaleField,
    make_norm_suite,
    mesh_metadata,
    norm_e1,
    norm_e1t,
    norm_e2,
    norm_interp_proxy,
    norm_y0,
    norm_yt,
    second_difference_pair,
    snapshot_csv,
)


@pytest.fixture
def suite():
    macro = MacroMesh(dim=1, n=17)
    micro = MicroMesh(dim=1, n=9)
    cmap = CellMap(1, MacroExpr("constant", (1.0,)))
    return make_norm_suite(macro, micro, cmap)


def zero_pair(suite):
    u = MacroField(np.zeros(suite.macro_mesh.n_total), suite.macro_mesh)
    U = TwoScaleField(
        np.zeros((suite.macro_mesh.n_total, suite.micro_mesh.n)),
        suite.macro_mesh,
        suite.micro_mesh,
    )
    return u, U


def test_macro_weights_sum_to_domain_volume():
    for dim in (1, 2):
        mesh = MacroMesh(dim=dim, n=9)
        assert np.sum(mesh.weights) == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("mdim", [1, 2, 3])
def test_micro_weights_sum_to_ball_volume(mdim):
    """The finite-volume shell measures telescope, so quadrature of 1 must
    give the unit-ball volume exactly."""
    micro = MicroMesh(dim=mdim, n=13)
    assert np.sum(micro.weights) == pytest.approx(BALL_MEASURE[mdim], rel=1e-13)


def test_micro_boundary_index():
    interval = MicroMesh(dim=1, n=7)
    assert tuple(interval.boundary_idx) == (0, 6)
    radial = MicroMesh(dim=2, n=7)
    assert tuple(radial.boundary_idx) == (6,)
    assert 0 in radial.interior_idx  # r = 0 is a symmetry node


def test_mesh_size_guards():
    with pytest.raises(ValueError):
        MacroMesh(dim=3, n=9)
    with pytest.raises(ValueError):
        MicroMesh(dim=1, n=3)


def test_norm_e2_constant_field_closed_form(suite):
    """For U = 1 with rho = 1 the cell integral of |U|^p is |B| = 2 and the
    macro weights sum to 1, so the norm is 2^(1/4) at p = 4."""
    U = TwoScaleField(
        np.ones((suite.macro_mesh.n_total, suite.micro_mesh.n)),
        suite.macro_mesh,
        suite.micro_mesh,
    )
    assert norm_e2(U, suite) == pytest.approx(2.0 ** 0.25, rel=1e-12)


def test_norm_e1_matches_weighted_lp(suite):
    rng = np.random.default_rng(1)
    u = MacroField(rng.normal(size=suite.macro_mesh.n_total), suite.macro_mesh)
    expected = (suite.macro_weights @ np.abs(u.values) ** 4) ** 0.25
    assert norm_e1(u, suite) == pytest.approx(expected, rel=1e-12)


def test_norm_e2_respects_metric_weight():
    """Doubling rho multiplies the cell measure by rho^n_c = 2, hence the
    p-norm of a constant by 2^(1/p)."""
    macro = MacroMesh(dim=1, n=9)
    micro = MicroMesh(dim=1, n=9)
    s1 = make_norm_suite(macro, micro, CellMap(1, MacroExpr("constant", (1.0,))))
    s2 = make_norm_suite(macro, micro, CellMap(1, MacroExpr("constant", (2.0,))))
    U = TwoScaleField(np.ones((macro.n_total, micro.n)), macro, micro)
    assert norm_e2(U, s2) == pytest.approx(2.0 ** 0.25 * norm_e2(U, s1), rel=1e-12)


def test_second_differences_exact_on_quadratics(suite):
    """Central second differences reproduce constant curvature with no
    truncation error on both scales."""
    x = suite.macro_mesh.coords[:, 0]
    z = suite.micro_mesh.nodes
    u = MacroField(x * (1.0 - x), suite.macro_mesh)
    U = TwoScaleField(
        np.tile(z ** 2, (suite.macro_mesh.n_total, 1)),
        suite.macro_mesh,
        suite.micro_mesh,
    )
    du, dU = second_difference_pair(u, U)
    assert np.allclose(du.values[1:-1], -2.0, atol=1e-9)
    assert du.values[0] == 0.0 and du.values[-1] == 0.0
    assert np.allclose(dU.values[:, 1:-1], 2.0, atol=1e-9)
    assert np.all(dU.values[:, [0, -1]] == 0.0)


def test_radial_center_second_difference():
    """At r = 0 the radial Laplacian of r^2 is 2 * dim, matched exactly by
    the symmetry-node stencil."""
    macro = MacroMesh(dim=1, n=5)
    micro = MicroMesh(dim=3, n=9)
    r = micro.nodes
    u = MacroField(np.zeros(macro.n_total), macro)
    U = TwoScaleField(np.tile(r ** 2, (macro.n_total, 1)), macro, micro)
    _, dU = second_difference_pair(u, U)
    assert np.allclose(dU.values[:, 0], 2.0 * micro.dim, atol=1e-9)


def test_norm_yt_linear_trajectory_quotient(suite):
    """A trajectory t * phi has difference quotient exactly phi on every
    slice, so the quotient part equals the Y0 norm of phi independent of
    the window length."""
    rng = np.random.default_rng(2)
    phi = rng.normal(size=suite.macro_mesh.n_total)
    phi_U = rng.normal(size=(suite.macro_mesh.n_total, suite.micro_mesh.n))
    tau = 0.05
    pairs = []
    for k in range(5):
        t = k * tau
        u = MacroField(t * phi, suite.macro_mesh)
        U = TwoScaleField(t * phi_U, suite.macro_mesh, suite.micro_mesh)
        pairs.append((u, U))
    total, _, quotient, _ = norm_yt(pairs, suite, tau, components=True)
    u_phi = MacroField(phi, suite.macro_mesh)
    U_phi = TwoScaleField(phi_U, suite.macro_mesh, suite.micro_mesh)
    assert quotient == pytest.approx(norm_y0(u_phi, U_phi, suite), rel=1e-12)
    assert total >= quotient


def test_norm_yt_constant_trajectory_keeps_spatial_norm(suite):
    """Time averaging is normalized so a constant-in-time field reports its
    spatial norm for any number of slices."""
    rng = np.random.default_rng(4)
    u = MacroField(rng.normal(size=suite.macro_mesh.n_total), suite.macro_mesh)
    U = TwoScaleField(
        rng.normal(size=(suite.macro_mesh.n_total, suite.micro_mesh.n)),
        suite.macro_mesh,
        suite.micro_mesh,
    )
    for n_slices in (2, 5, 9):
        _, field_part, quotient, _ = norm_yt(
            [(u, U)] * n_slices, suite, 0.03, components=True
        )
        assert field_part == pytest.approx(norm_y0(u, U, suite), rel=1e-12)
        assert quotient == 0.0


def test_norm_yt_needs_two_slices(suite):
    with pytest.raises(TooFewSlices):
        norm_yt([zero_pair(suite)], suite, 0.1)


def test_norm_e1t_monotone_in_motion(suite):
    n = suite.macro_mesh.n_total
    mesh = suite.macro_mesh
    flat = [MacroField(np.full(n, 0.7), mesh) for _ in range(2)]
    moving = [MacroField(np.full(n, 0.7), mesh), MacroField(np.full(n, 0.8), mesh)]
    assert norm_e1t(moving, suite, 0.1) > norm_e1t(flat, suite, 0.1) > 0.0
    with pytest.raises(TooFewSlices):
        norm_e1t(flat[:1], suite, 0.1)


def test_interp_proxy_requires_trace_compatibility(suite):
    rng = np.random.default_rng(3)
    u = MacroField(rng.normal(size=suite.macro_mesh.n_total), suite.macro_mesh)
    U = lift(u, suite.micro_mesh)
    assert np.isfinite(norm_interp_proxy(u, U, suite))
    U.values[3, 0] += 0.5
    with pytest.raises(TraceMismatch):
        norm_interp_proxy(u, U, suite)


@settings(max_examples=20, deadline=None)
@given(scale=st.floats(0.1, 10.0))
def test_norm_homogeneity(scale):
    macro = MacroMesh(dim=1, n=17)
    micro = MicroMesh(dim=1, n=9)
    suite = make_norm_suite(macro, micro, CellMap(1, MacroExpr("constant", (1.0,))))
    rng = np.random.default_rng(7)
    u = MacroField(rng.normal(size=suite.macro_mesh.n_total), suite.macro_mesh)
    U = TwoScaleField(
        rng.normal(size=(suite.macro_mesh.n_total, suite.micro_mesh.n)),
        suite.macro_mesh,
        suite.micro_mesh,
    )
    base = norm_y0(u, U, suite)
    scaled = norm_y0(
        MacroField(scale * u.values, suite.macro_mesh),
        TwoScaleField(scale * U.values, suite.macro_mesh, suite.micro_mesh),
        suite,
    )
    assert scaled == pytest.approx(scale * base, rel=1e-10)


def test_proxy_homogeneity(suite):
    rng = np.random.default_rng(9)
    u = MacroField(rng.normal(size=suite.macro_mesh.n_total), suite.macro_mesh)
    U = lift(u, suite.micro_mesh)
    base = norm_interp_proxy(u, U, suite)
    u3 = MacroField(3.0 * u.values, suite.macro_mesh)
    U3 = lift(u3, suite.micro_mesh)
    assert norm_interp_proxy(u3, U3, suite) == pytest.approx(3.0 * base, rel=1e-10)


def test_snapshot_csv_layout(suite):
    u, U = zero_pair(suite)
    M = MacroField(np.full(suite.macro_mesh.n_total, 0.9), suite.macro_mesh)
    text = snapshot_csv(u, M, U)
    lines = text.strip().splitlines()
    assert len(lines) == 1 + suite.macro_mesh.n_total
    header = lines[0].split(",")
    assert header[:3] == ["x1", "u", "m"]
    assert header[3:] == [f"y{j}" for j in range(suite.micro_mesh.n)]
    # Without a porosity column the header drops "m".
    assert "m" not in snapshot_csv(u, None, U).splitlines()[0].split(",")


def test_mesh_metadata_keys(suite):
    meta = mesh_metadata(suite.macro_mesh, suite.micro_mesh)
    assert meta["macro_nodes_per_axis"] == 17 and meta["micro_nodes"] == 9
    assert meta["macro_h"] == pytest.approx(1.0 / 16)


def test_low_norm_exponent_warns():
    macro = MacroMesh(dim=2, n=5)
    micro = MicroMesh(dim=1, n=5)
    cmap = CellMap(1, MacroExpr("constant", (1.0,)))
    with pytest.warns(UserWarning):
        make_norm_suite(macro, micro, cmap, p=2.0)
