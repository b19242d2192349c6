import math

import numpy as np
import pytest

from poroscale.coefficients import DiffusivityLaw, StateLaw
from poroscale.errors import DegenerateDistance, ZeroDenominator
from poroscale.geometry import CellMap, MacroExpr
from poroscale.meshes import MacroField, MacroMesh, MicroMesh
from poroscale.probes import (
    SectorSpec,
    family_lambdas,
    r_bound_estimate,
    resolvent_family,
    resolvent_lipschitz_test,
    sector_sweep,
    uniformity_scan,
)


class DiagOp:
    """Duck-typed probe target whose resolvent norms have a closed form."""

    def __init__(self, d):
        self.d = np.asarray(d, dtype=float)

    def sym_reduced(self):
        return np.diag(self.d)


def constant_laws(a=1.0, b=1e-3):
    return DiffusivityLaw(StateLaw("constant", (a,)), StateLaw("constant", (b,)), 1e-8)


def varying_laws():
    return DiffusivityLaw(
        StateLaw("constant", (1.0,)),
        StateLaw("affine", (1e-3, 8e-4, 0.0, 0.0)),
        1e-8,
    )


def test_sector_spec_guards():
    with pytest.raises(ValueError):
        SectorSpec(angle=2.0)
    with pytest.raises(ValueError):
        SectorSpec(radius_min=1.0, radius_max=0.5)
    with pytest.raises(ValueError):
        SectorSpec(n_radii=1)
    spec = SectorSpec(angle=math.pi / 4)
    assert spec.rays == (0.0, math.pi - math.pi / 4, -(math.pi - math.pi / 4))


def test_sector_sweep_matches_eigen_oracle():
    """For a diagonal matrix the resolvent norm is max_i 1/|lam + d_i|."""
    d = np.array([0.5, 2.0, 7.0, 31.0])
    spec = SectorSpec(radius_min=0.1, radius_max=100.0, n_radii=7)
    report = sector_sweep(DiagOp(d), spec)
    assert len(report.rows) == 7 * 3
    for row in report.rows:
        oracle = float(np.max(1.0 / np.abs(row.lam + d)))
        assert row.norm == pytest.approx(oracle, rel=1e-6)
        assert row.lam_norm == pytest.approx(row.radius * oracle, rel=1e-6)
    assert report.m_est == pytest.approx(
        max(r.lam_norm for r in report.rows), rel=1e-12
    )


def test_sector_sweep_real_ray_bounded_for_spd():
    """On the positive real ray |lam| ||(lam+S)^-1|| = lam/(lam+d_min) < 1
    for positive definite S."""
    report = sector_sweep(DiagOp([1.0, 4.0]), SectorSpec())
    for row in report.rows:
        if row.ray == 0.0 and not row.skipped:
            assert row.lam_norm <= 1.0 + 1e-6


def test_sector_constant_approaches_angle_bound():
    """The sharp sectoriality constant for a positive scalar at opening
    angle pi/4 is 1/sin(pi/4) = sqrt(2), attained near |lam| = sqrt(2) d."""
    report = sector_sweep(DiagOp([1.0]), SectorSpec(n_radii=49))
    assert report.m_est <= math.sqrt(2.0) + 1e-6
    assert report.m_est >= 0.95 * math.sqrt(2.0)


def test_sector_sweep_general_matrix_vs_svd():
    rng = np.random.default_rng(11)
    a = rng.normal(size=(5, 5))
    sym = a @ a.T + np.eye(5)

    class Op:
        def sym_reduced(self):
            return sym

    spec = SectorSpec(radius_min=1.0, radius_max=10.0, n_radii=3)
    report = sector_sweep(Op(), spec)
    for row in report.rows:
        sig = np.linalg.svd(sym + row.lam * np.eye(5), compute_uv=False)
        assert row.norm == pytest.approx(1.0 / sig[-1], rel=1e-5)


def test_sector_sweep_deterministic():
    d = [0.5, 3.0]
    r1 = sector_sweep(DiagOp(d), SectorSpec(n_radii=5), seed=3)
    r2 = sector_sweep(DiagOp(d), SectorSpec(n_radii=5), seed=3)
    assert [row.norm for row in r1.rows] == [row.norm for row in r2.rows]


def test_resolvent_family_closed_form():
    d = np.array([1.0, 5.0])
    lams = [1.0 + 0.0j, 2.0 + 3.0j]
    fam = resolvent_family(np.diag(d), lams)
    for lam, T in zip(lams, fam):
        assert np.allclose(T, np.diag(lam / (lam + d)), rtol=1e-13)


def test_r_bound_single_operator_is_its_norm():
    rng = np.random.default_rng(1)
    T = rng.normal(size=(6, 6))
    est = r_bound_estimate([T])
    assert est.exhaustive and est.n_patterns == 2
    assert est.c_est == pytest.approx(np.linalg.norm(T, 2), rel=1e-6)


def test_r_bound_exhaustive_matches_brute_force():
    """Shared test tuples, independently enumerated Rademacher averages."""
    rng = np.random.default_rng(2)
    family = [np.diag(rng.normal(size=2) + 2.0) for _ in range(3)]
    tuples = [rng.normal(size=(3, 2)) for _ in range(5)]
    est = r_bound_estimate(family, test_tuples=[t.copy() for t in tuples])

    signs = np.array(
        [[1 - 2 * ((k >> j) & 1) for j in range(3)] for k in range(8)], dtype=float
    )
    best = 0.0
    for fields in tuples:
        mapped = np.stack([family[j] @ fields[j] for j in range(3)])
        num = np.linalg.norm(np.einsum("sj,jn->sn", signs, mapped), axis=1)
        den = np.linalg.norm(np.einsum("sj,jn->sn", signs, fields), axis=1)
        quotient = math.sqrt(np.mean(num ** 2)) / math.sqrt(np.mean(den ** 2))
        best = max(best, quotient)
    assert est.c_est == pytest.approx(best, rel=1e-12)


def test_r_bound_monotone_under_superfamily():
    """The cumulative tuple construction embeds the size-N test set into
    the size-N+1 set, so adding an operator cannot shrink the estimate."""
    rng = np.random.default_rng(3)
    mats = [rng.normal(size=(3, 3)) for _ in range(4)]
    small = r_bound_estimate(mats[:3], seed=7)
    large = r_bound_estimate(mats, seed=7)
    assert large.c_est >= small.c_est - 1e-12


def test_r_bound_monte_carlo_branch():
    rng = np.random.default_rng(4)
    family = [np.diag(rng.uniform(0.5, 1.5, size=2)) for _ in range(13)]
    est = r_bound_estimate(family, n_tuples=2, n_sign_samples=10_000, seed=0)
    assert not est.exhaustive
    assert est.n_patterns == 10_000
    assert est.c_est > 0.0
    assert est.error_bar >= 0.0


def test_r_bound_weighted_norm_changes_quotient():
    T = np.array([[2.0, 0.0], [0.0, 0.5]])
    w_first = np.array([1.0, 1e-12])
    w_last = np.array([1e-12, 1.0])
    tup = [np.ones((1, 2))]
    hi = r_bound_estimate([T], weights=w_first, test_tuples=[t.copy() for t in tup])
    lo = r_bound_estimate([T], weights=w_last, test_tuples=[t.copy() for t in tup])
    assert hi.c_est == pytest.approx(2.0, rel=1e-6)
    assert lo.c_est == pytest.approx(0.5, rel=1e-6)


def test_r_bound_zero_denominator():
    with pytest.raises(ZeroDenominator):
        r_bound_estimate([np.eye(2)], test_tuples=[np.zeros((1, 2))])
    with pytest.raises(ValueError):
        r_bound_estimate([])


def test_r_bound_deterministic():
    rng = np.random.default_rng(5)
    fam = [rng.normal(size=(3, 3)) for _ in range(2)]
    a = r_bound_estimate(fam, seed=9)
    b = r_bound_estimate(fam, seed=9)
    assert a.c_est == b.c_est


def test_family_lambdas_pattern():
    spec = SectorSpec(radius_min=1e-1, radius_max=1e3, n_radii=5)
    lams = family_lambdas(spec, 6)
    assert len(lams) == 6
    radii = np.logspace(-1, 3, 6)
    for i, lam in enumerate(lams):
        assert abs(lam) == pytest.approx(radii[i], rel=1e-12)
        assert np.angle(lam) == pytest.approx(
            np.angle(np.exp(1j * spec.rays[i % 3])), abs=1e-12
        )


@pytest.fixture
def cell_setup():
    mesh = MacroMesh(dim=1, n=9)
    micro = MicroMesh(dim=1, n=7)
    geom = CellMap(1, MacroExpr("constant", (1.0,)))
    v = MacroField(np.zeros(mesh.n_total), mesh)
    return mesh, micro, geom, v


def test_lipschitz_identical_cells_vanish(cell_setup):
    mesh, micro, geom, v = cell_setup
    rep = resolvent_lipschitz_test(
        1, 5, v, constant_laws(), geom, micro, SectorSpec(n_radii=4)
    )
    assert rep.distance == pytest.approx(0.5, rel=1e-12)
    assert rep.ratio_max == 0.0
    assert rep.band_factor == 1.0


def test_lipschitz_degenerate_distance(cell_setup):
    mesh, micro, geom, v = cell_setup
    with pytest.raises(DegenerateDistance):
        resolvent_lipschitz_test(2, 2, v, constant_laws(), geom, micro)


def test_lipschitz_sees_x_dependence(cell_setup):
    mesh, micro, geom, v = cell_setup
    rep = resolvent_lipschitz_test(
        1, 7, v, varying_laws(), geom, micro, SectorSpec(n_radii=6)
    )
    assert rep.ratio_max > 0.0
    assert rep.ratio_min >= 0.0
    assert np.isfinite(rep.band_factor)


def test_uniformity_constant_coefficients_flat(cell_setup):
    mesh, micro, geom, v = cell_setup
    rep = uniformity_scan(
        v, constant_laws(), geom, micro, nodes=[1, 3, 5, 7], family_size=4,
        n_tuples=2,
    )
    assert np.all(rep.c_values == rep.c_values[0])
    assert rep.modulus_max == 0.0
    assert rep.c_sup == pytest.approx(rep.c_values[0])


def test_uniformity_scan_custom_mapper_matches_serial(cell_setup):
    mesh, micro, geom, v = cell_setup
    calls = []

    def recording_map(fn, items):
        items = list(items)
        calls.extend(items)
        return iter([fn(i) for i in items])

    serial = uniformity_scan(
        v, varying_laws(), geom, micro, nodes=[2, 4, 6], family_size=4, n_tuples=2
    )
    mapped = uniformity_scan(
        v, varying_laws(), geom, micro, nodes=[2, 4, 6], family_size=4, n_tuples=2,
        mapper=recording_map,
    )
    assert calls == [2, 4, 6]
    assert np.array_equal(serial.c_values, mapped.c_values)
