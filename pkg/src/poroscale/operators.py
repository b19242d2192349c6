"""Discrete elliptic operators and the decoupled two-scale resolvent.

Macro operator: conservative finite differences for -div(a1(v) grad u) on
the uniform grid with homogeneous Dirichlet rows, harmonic-mean face
coefficients.  Cell operator at node x: the transformed Laplace-Beltrami
form -g_inv * d/dy (b2(v)(x,y) d/dy .) on the interval, or its radial
finite-volume reduction with face areas r^(n_c - 1); the trace nodes are
Dirichlet rows carrying the macro value.  Both stencils are in divergence
form, so constants are annihilated exactly: that is what makes the
resolvent of the coupled block system decouple,

    u = (lam + A1(v))^-1 f,
    U = lift(u) + per-cell solve of (lam + B_x) W = g_hat - lam * u(x)

with zero trace on W.  Applying the coupled operator never reads micro
boundary rows, and resolvents accept complex lam for the spectral probes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .coefficients import DiffusivityLaw, a1_eval, b2_eval
from .errors import SingularSolve, TraceMismatch
from .geometry import TOL_TRACE, CellMap, metric_tables
from .meshes import MacroField, MacroMesh, MicroMesh, TwoScaleField

TOL_LIN = 1e-10

Scalar = Union[float, complex]


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 2.0 * a * b / (a + b)


# ---------------------------------------------------------------------------
# macro operator
# ---------------------------------------------------------------------------

@dataclass
class MacroOperator:
    """-div(a1(v) grad .) with Dirichlet boundary on the unit box."""

    mesh: MacroMesh
    a_faces: tuple            # per-axis face coefficient arrays
    frozen_state: np.ndarray  # copy of v at assembly time
    _interior: Optional[scipy.sparse.csr_matrix] = field(default=None, repr=False)
    _lu_cache: dict = field(default_factory=dict, repr=False)

    def apply(self, u_values: np.ndarray) -> np.ndarray:
        """Stencil action on a full node vector; zero on Dirichlet rows."""
        mesh = self.mesh
        h2 = mesh.h ** 2
        g = u_values.reshape(mesh.shape)
        out = np.zeros_like(g)
        if mesh.dim == 1:
            af = self.a_faces[0]
            flux = af * (g[1:] - g[:-1])
            out[1:-1] = (flux[:-1] - flux[1:]) / h2
        else:
            afx, afy = self.a_faces
            fx = afx * (g[1:, :] - g[:-1, :])
            fy = afy * (g[:, 1:] - g[:, :-1])
            out[1:-1, :] = (fx[:-1, :] - fx[1:, :]) / h2
            out[:, 1:-1] += (fy[:, :-1] - fy[:, 1:]) / h2
            out[0, :] = out[-1, :] = 0.0
            out[:, 0] = out[:, -1] = 0.0
        return out.ravel()

    def interior_matrix(self) -> scipy.sparse.csr_matrix:
        """Symmetric positive definite matrix on the interior nodes."""
        if self._interior is not None:
            return self._interior
        mesh = self.mesh
        h2 = mesh.h ** 2
        n = mesh.n
        int_idx = mesh.interior_idx
        pos = -np.ones(mesh.n_total, dtype=int)
        pos[int_idx] = np.arange(len(int_idx))
        rows, cols, vals = [], [], []

        def add(i_flat, j_flat, v):
            if pos[j_flat] >= 0:
                rows.append(pos[i_flat])
                cols.append(pos[j_flat])
                vals.append(v)

        if mesh.dim == 1:
            af = self.a_faces[0]
            for i in range(1, n - 1):
                add(i, i, (af[i - 1] + af[i]) / h2)
                add(i, i - 1, -af[i - 1] / h2)
                add(i, i + 1, -af[i] / h2)
        else:
            afx, afy = self.a_faces
            for i in range(1, n - 1):
                for j in range(1, n - 1):
                    f = i * n + j
                    add(f, f, (afx[i - 1, j] + afx[i, j] + afy[i, j - 1] + afy[i, j]) / h2)
                    add(f, f - n, -afx[i - 1, j] / h2)
                    add(f, f + n, -afx[i, j] / h2)
                    add(f, f - 1, -afy[i, j - 1] / h2)
                    add(f, f + 1, -afy[i, j] / h2)
        ni = len(int_idx)
        self._interior = scipy.sparse.csr_matrix(
            (vals, (rows, cols)), shape=(ni, ni)
        )
        return self._interior

    def sym_reduced(self) -> np.ndarray:
        """Dense symmetric interior matrix for the spectral probes."""
        return self.interior_matrix().toarray()

    def solve_shifted(self, lam: Scalar, rhs_interior: np.ndarray) -> np.ndarray:
        """(lam + A) x = rhs on the interior, LU factorizations cached."""
        key = complex(lam)
        lu = self._lu_cache.get(key)
        if lu is None:
            ni = self.interior_matrix().shape[0]
            mat = self.interior_matrix().astype(
                complex if key.imag != 0.0 else float
            ) + (key if key.imag != 0.0 else key.real) * scipy.sparse.identity(ni)
            try:
                lu = scipy.sparse.linalg.splu(mat.tocsc())
            except RuntimeError as exc:
                raise SingularSolve(f"macro factorization failed: {exc}") from exc
            self._lu_cache[key] = lu
        x = lu.solve(rhs_interior.astype(complex if key.imag != 0.0 else float))
        if not np.all(np.isfinite(x)):
            raise SingularSolve("macro solve produced non-finite values")
        return x


def assemble_macro(
    v: MacroField, law: DiffusivityLaw, mesh: MacroMesh
) -> MacroOperator:
    """Freeze the state v and build the macro stencil."""
    a = a1_eval(law, mesh.coords, v.values)
    if mesh.dim == 1:
        faces = (_harmonic(a[:-1], a[1:]),)
    else:
        grid = a.reshape(mesh.shape)
        faces = (
            _harmonic(grid[:-1, :], grid[1:, :]),
            _harmonic(grid[:, :-1], grid[:, 1:]),
        )
    return MacroOperator(mesh=mesh, a_faces=faces, frozen_state=v.values.copy())


# ---------------------------------------------------------------------------
# cell operators
# ---------------------------------------------------------------------------

@dataclass
class CellOperator:
    """One cell's transformed diffusion operator on the reference grid.

    ``sub/diag/sup`` hold the tridiagonal interior stencil, ``left_coef``
    and ``right_coef`` the couplings of the first/last interior row into
    the trace nodes, and ``volumes`` the finite-volume weights that make
    the radial stencil symmetric (None on the interval, where the stencil
    is symmetric as-is).
    """

    micro_mesh: MicroMesh
    node: int
    g_inv: float
    sqrt_det: float
    mu: float
    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    left_coef: Optional[float]
    right_coef: float
    volumes: Optional[np.ndarray]

    @property
    def n_interior(self) -> int:
        return self.diag.shape[0]

    def apply(self, row: np.ndarray) -> np.ndarray:
        """Action on a full micro row; zero at trace nodes."""
        mm = self.micro_mesh
        w = row[mm.interior_idx]
        out_i = self.diag * w
        out_i[1:] += self.sub[1:] * w[:-1]
        out_i[:-1] += self.sup[:-1] * w[1:]
        if self.left_coef is not None:
            out_i[0] += self.left_coef * row[mm.boundary_idx[0]]
        out_i[-1] += self.right_coef * row[mm.boundary_idx[-1]]
        out = np.zeros_like(row)
        out[mm.interior_idx] = out_i
        return out

    def banded(self, lam: Scalar = 0.0) -> np.ndarray:
        """(lam + B) in solve_banded layout (3, n_interior)."""
        dtype = complex if isinstance(lam, complex) and lam.imag != 0.0 else float
        ab = np.zeros((3, self.n_interior), dtype=dtype)
        ab[0, 1:] = self.sup[:-1]
        ab[1, :] = self.diag + lam
        ab[2, :-1] = self.sub[1:]
        return ab

    def solve_shifted(self, lam: Scalar, rhs_interior: np.ndarray) -> np.ndarray:
        try:
            x = scipy.linalg.solve_banded((1, 1), self.banded(lam), rhs_interior)
        except np.linalg.LinAlgError as exc:
            raise SingularSolve(f"cell factorization failed: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise SingularSolve("cell solve produced non-finite values")
        return x

    def sym_reduced(self) -> np.ndarray:
        """Dense interior matrix, conjugated to its symmetric form."""
        n = self.n_interior
        mat = np.zeros((n, n))
        np.fill_diagonal(mat, self.diag)
        idx = np.arange(n - 1)
        mat[idx, idx + 1] = self.sup[:-1]
        mat[idx + 1, idx] = self.sub[1:]
        if self.volumes is None:
            return mat
        d = np.sqrt(self.volumes)
        return mat * (d[:, None] / d[None, :])


def _cell_stencil_tables(
    law: DiffusivityLaw,
    geom: CellMap,
    macro_mesh: MacroMesh,
    micro_mesh: MicroMesh,
    v_values: np.ndarray,
    mu: float = 0.0,
):
    """Vectorized stencil data for every cell at once."""
    coords = macro_mesh.coords
    g_inv, sqrt_det, _ = metric_tables(geom, coords)
    b = b2_eval(law, coords, micro_mesh.radii, v_values)  # (N, m)
    h = micro_mesh.h
    bf = _harmonic(b[:, :-1], b[:, 1:])  # (N, m-1)
    if micro_mesh.dim == 1:
        # interior nodes 1..m-2, flux differences over cells of width h
        coef = g_inv[:, None] * bf / h ** 2  # (N, m-1) face conductances
        ni = micro_mesh.n - 2
        diag = coef[:, :-1] + coef[:, 1:] + mu
        sub = np.zeros((coef.shape[0], ni))
        sup = np.zeros_like(sub)
        sub[:, 1:] = -coef[:, 1:-1]
        sup[:, :-1] = -coef[:, 1:-1]
        left = -coef[:, 0]
        right = -coef[:, -1]
        volumes = None
    else:
        m = micro_mesh.dim
        r = micro_mesh.nodes
        rf = 0.5 * (r[:-1] + r[1:])
        area = rf ** (m - 1)
        lo = np.concatenate([[0.0], rf])
        hi = np.concatenate([rf, [1.0]])
        vol = (hi ** m - lo ** m) / m  # reference r^(m-1) measure per node
        # interior unknowns are nodes 0..m_nodes-2 (center has zero flux)
        flux = g_inv[:, None] * bf * area[None, :] / h  # (N, m-1) face fluxes
        ni = micro_mesh.n - 1
        vin = vol[:ni]
        diag = np.zeros((flux.shape[0], ni))
        diag[:, 0] = flux[:, 0] / vin[0]
        diag[:, 1:] = (flux[:, :-1] + flux[:, 1:]) / vin[1:]
        diag += mu
        sub = np.zeros_like(diag)
        sub[:, 1:] = -flux[:, :-1] / vin[1:]
        sup = np.zeros_like(diag)
        sup[:, :-1] = -flux[:, :-1] / vin[:-1]
        left = None
        right = -flux[:, -1] / vin[-1]
        volumes = vin
    return g_inv, sqrt_det, sub, diag, sup, left, right, volumes


def assemble_cell(
    node: int,
    v: MacroField,
    law: DiffusivityLaw,
    geom: CellMap,
    micro_mesh: MicroMesh,
    mu: float = 0.0,
) -> CellOperator:
    """Cell operator at one macro node with state frozen at v(x)."""
    g_inv, sqrt_det, sub, diag, sup, left, right, volumes = _cell_stencil_tables(
        law, geom, v.mesh, micro_mesh, v.values, mu
    )
    return CellOperator(
        micro_mesh=micro_mesh,
        node=node,
        g_inv=float(g_inv[node]),
        sqrt_det=float(sqrt_det[node]),
        mu=mu,
        sub=sub[node],
        diag=diag[node],
        sup=sup[node],
        left_coef=None if left is None else float(left[node]),
        right_coef=float(right[node]),
        volumes=volumes,
    )


# ---------------------------------------------------------------------------
# coupled operator
# ---------------------------------------------------------------------------

@dataclass
class CoupledOperator:
    """Block operator A(v) = diag(A1(v), {B_x(v)}) with trace coupling."""

    macro: MacroOperator
    macro_mesh: MacroMesh
    micro_mesh: MicroMesh
    geom: CellMap
    frozen_state: np.ndarray
    p: float
    # stacked cell stencils, one row per macro node
    g_inv: np.ndarray
    sqrt_det: np.ndarray
    cell_sub: np.ndarray
    cell_diag: np.ndarray
    cell_sup: np.ndarray
    cell_left: Optional[np.ndarray]
    cell_right: np.ndarray
    cell_volumes: Optional[np.ndarray]
    mu: float = 0.0

    def cell_operator(self, node: int) -> CellOperator:
        return CellOperator(
            micro_mesh=self.micro_mesh,
            node=node,
            g_inv=float(self.g_inv[node]),
            sqrt_det=float(self.sqrt_det[node]),
            mu=self.mu,
            sub=self.cell_sub[node],
            diag=self.cell_diag[node],
            sup=self.cell_sup[node],
            left_coef=None if self.cell_left is None else float(self.cell_left[node]),
            right_coef=float(self.cell_right[node]),
            volumes=self.cell_volumes,
        )

    def apply_micro(self, U_values: np.ndarray) -> np.ndarray:
        """Vectorized cell-operator action on all rows; trace rows zero."""
        mm = self.micro_mesh
        W = U_values[:, mm.interior_idx]
        out_i = self.cell_diag * W
        out_i[:, 1:] += self.cell_sub[:, 1:] * W[:, :-1]
        out_i[:, :-1] += self.cell_sup[:, :-1] * W[:, 1:]
        if self.cell_left is not None:
            out_i[:, 0] += self.cell_left * U_values[:, mm.boundary_idx[0]]
        out_i[:, -1] += self.cell_right * U_values[:, mm.boundary_idx[-1]]
        out = np.zeros_like(U_values)
        out[:, mm.interior_idx] = out_i
        return out

    def _check_trace(self, u: MacroField, U: TwoScaleField) -> None:
        bvals = U.values[:, list(self.micro_mesh.boundary_idx)]
        gap = np.abs(bvals - u.values[:, None]).max()
        if gap > TOL_TRACE * (1.0 + np.abs(u.values).max()):
            raise TraceMismatch(f"coupled operator needs tr U = u, gap {gap:.3e}")

    def y0_norm(self, f_values: np.ndarray, g_values: np.ndarray) -> float:
        p = self.p
        wx = self.macro_mesh.weights
        wy = self.micro_mesh.weights
        macro = wx @ np.abs(f_values) ** p
        micro = wx @ (self.sqrt_det * (np.abs(g_values) ** p @ wy))
        return float((macro + micro) ** (1.0 / p))


def assemble_coupled(
    v: MacroField,
    law: DiffusivityLaw,
    geom: CellMap,
    micro_mesh: MicroMesh,
    mu: float = 0.0,
    p: float = 4.0,
) -> CoupledOperator:
    macro = assemble_macro(v, law, v.mesh)
    g_inv, sqrt_det, sub, diag, sup, left, right, volumes = _cell_stencil_tables(
        law, geom, v.mesh, micro_mesh, v.values, mu
    )
    return CoupledOperator(
        macro=macro,
        macro_mesh=v.mesh,
        micro_mesh=micro_mesh,
        geom=geom,
        frozen_state=v.values.copy(),
        p=p,
        g_inv=g_inv,
        sqrt_det=sqrt_det,
        cell_sub=sub,
        cell_diag=diag,
        cell_sup=sup,
        cell_left=left,
        cell_right=right,
        cell_volumes=volumes,
        mu=mu,
    )


def apply_coupled(op: CoupledOperator, u: MacroField, U: TwoScaleField):
    """A(v)(u, U): macro stencil and per-cell action, trace-checked."""
    op._check_trace(u, U)
    f = MacroField(op.macro.apply(u.values), op.macro_mesh)
    g = TwoScaleField(op.apply_micro(U.values), op.macro_mesh, op.micro_mesh)
    return f, g


def coupled_resolvent(
    op: CoupledOperator,
    lam: Scalar,
    f: MacroField,
    g: TwoScaleField,
    tol_lin: float = TOL_LIN,
    check: bool = True,
):
    """(lam + A(v))^-1 (f, g) via the decoupled construction.

    Boundary entries of the loads are ignored (Dirichlet data is not an
    unknown); the returned pair is trace-compatible bitwise.
    """
    mesh, mm = op.macro_mesh, op.micro_mesh
    int_idx = mesh.interior_idx
    complex_mode = isinstance(lam, complex) and lam.imag != 0.0

    u_int = op.macro.solve_shifted(lam, f.values[int_idx])
    u_vals = np.zeros(mesh.n_total, dtype=complex if complex_mode else float)
    u_vals[int_idx] = u_int

    # per-cell solves with zero trace: (lam + B_x) W = g_hat - lam * u(x)
    U_vals = np.repeat(u_vals[:, None], mm.n, axis=1)
    rhs_all = g.values[:, mm.interior_idx] - lam * u_vals[:, None]
    dtype = complex if complex_mode else float
    for i in range(mesh.n_total):
        ab = np.zeros((3, len(mm.interior_idx)), dtype=dtype)
        ab[0, 1:] = op.cell_sup[i, :-1]
        ab[1, :] = op.cell_diag[i] + lam
        ab[2, :-1] = op.cell_sub[i, 1:]
        try:
            w = scipy.linalg.solve_banded((1, 1), ab, rhs_all[i])
        except np.linalg.LinAlgError as exc:
            raise SingularSolve(f"cell {i} factorization failed: {exc}") from exc
        if not np.all(np.isfinite(w)):
            raise SingularSolve(f"cell {i} solve produced non-finite values")
        U_vals[i, mm.interior_idx] += w

    if check:
        fa = op.macro.apply(u_vals) + lam * u_vals
        fa[mesh.boundary_mask] = 0.0
        target_f = np.where(mesh.boundary_mask, 0.0, f.values)
        ga = op.apply_micro(U_vals) + lam * U_vals
        ga[:, list(mm.boundary_idx)] = 0.0
        target_g = g.values.copy()
        target_g[:, list(mm.boundary_idx)] = 0.0
        res = op.y0_norm(fa - target_f, ga - target_g)
        scale = op.y0_norm(target_f, target_g)
        if res > tol_lin * max(scale, 1e-30):
            raise SingularSolve(
                f"resolvent residual {res:.3e} exceeds {tol_lin:.1e} * {scale:.3e}"
            )

    if complex_mode:
        # complex resolvents are probe-only; the field types stay real
        return u_vals, U_vals
    return MacroField(u_vals, mesh), TwoScaleField(
        U_vals, mesh, mm, trace_compatible=True
    )


# ---------------------------------------------------------------------------
# matrix dumps
# ---------------------------------------------------------------------------

def triplet_text(matrix) -> str:
    """Row/col/value text dump of a sparse or dense matrix."""
    if scipy.sparse.issparse(matrix):
        coo = matrix.tocoo()
        rows, cols, vals = coo.row, coo.col, coo.data
    else:
        arr = np.asarray(matrix)
        rows, cols = np.nonzero(arr)
        vals = arr[rows, cols]
    lines = ["row,col,value"]
    for i, j, v in zip(rows, cols, vals):
        lines.append(f"{int(i)},{int(j)},{v:.17g}")
    return "\n".join(lines) + "\n"


def dump_coupled(op: CoupledOperator) -> dict:
    """Text dumps of the macro matrix and a few sample cell matrices."""
    out = {"macro_interior.txt": triplet_text(op.macro.interior_matrix())}
    n = op.macro_mesh.n_total
    for node in sorted({0, n // 2, n - 1}):
        cell = op.cell_operator(node)
        ni = cell.n_interior
        mat = np.zeros((ni, ni))
        np.fill_diagonal(mat, cell.diag)
        idx = np.arange(ni - 1)
        mat[idx, idx + 1] = cell.sup[:-1]
        mat[idx + 1, idx] = cell.sub[1:]
        out[f"cell_{node:05d}.txt"] = triplet_text(mat)
    return out
