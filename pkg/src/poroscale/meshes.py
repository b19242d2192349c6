"""Uniform tensor meshes, two-scale fields and the discrete norm suite.

The macro domain is (0,1)^d (d = 1 or 2) with homogeneous Dirichlet
boundary; the reference cell is the interval (-1,1) for micro dimension 1
and a radial grid on [0,1] for radially symmetric cells in dimension 2
or 3.  Quadrature weights are the finite-volume cell measures (trapezoid
weights on uniform grids; radial weights carry the r^(n-1) measure and
sum exactly to |B|).

Norms follow the transformed-measure convention: micro integrals carry
sqrt(det g) = rho(x)^n_c.  Time-grid norms use the time-averaged L_p
convention so that constant-in-time data keeps its spatial norm.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import TooFewSlices, TraceMismatch
from .geometry import SPHERE_MEASURE, CellMap, metric_tables

DEFAULT_P = 4


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MacroMesh:
    """Uniform grid on (0,1)^dim, nodes flattened in C order."""

    dim: int
    n: int  # nodes per axis

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("macro dim must be 1 or 2")
        if self.n < 4:
            raise ValueError("need at least 4 nodes per axis")

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def n_total(self) -> int:
        return self.n ** self.dim

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def coords(self) -> np.ndarray:
        axis = np.linspace(0.0, 1.0, self.n)
        if self.dim == 1:
            return axis[:, None]
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel()], axis=1)

    @property
    def boundary_mask(self) -> np.ndarray:
        axis = np.arange(self.n)
        edge = (axis == 0) | (axis == self.n - 1)
        if self.dim == 1:
            return edge
        gx, gy = np.meshgrid(edge, edge, indexing="ij")
        return (gx | gy).ravel()

    @property
    def interior_idx(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @property
    def weights(self) -> np.ndarray:
        w1 = np.full(self.n, self.h)
        w1[0] = w1[-1] = 0.5 * self.h
        if self.dim == 1:
            return w1
        return np.outer(w1, w1).ravel()


@dataclass(frozen=True)
class MicroMesh:
    """Reference-cell grid: interval nodes (dim 1) or radial nodes."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError("micro dim must be 1, 2 or 3")
        if self.n < 4:
            raise ValueError("need at least 4 micro nodes")

    @property
    def nodes(self) -> np.ndarray:
        if self.dim == 1:
            return np.linspace(-1.0, 1.0, self.n)
        return np.linspace(0.0, 1.0, self.n)

    @property
    def h(self) -> float:
        return 2.0 / (self.n - 1) if self.dim == 1 else 1.0 / (self.n - 1)

    @property
    def radii(self) -> np.ndarray:
        """Radial coordinate |y| of each node."""
        return np.abs(self.nodes)

    @property
    def boundary_idx(self) -> tuple:
        """Dirichlet (trace) nodes; r=0 is a symmetry node, not boundary."""
        if self.dim == 1:
            return (0, self.n - 1)
        return (self.n - 1,)

    @property
    def interior_idx(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[list(self.boundary_idx)] = False
        return np.flatnonzero(mask)

    @property
    def weights(self) -> np.ndarray:
        """Reference measure of the finite-volume cell around each node.

        Sums exactly to |B| in every dimension, so quadrature of the
        (y-constant) sqrt(det g) reproduces the analytic cell volume.
        """
        if self.dim == 1:
            w = np.full(self.n, self.h)
            w[0] = w[-1] = 0.5 * self.h
            return w
        r = self.nodes
        faces = 0.5 * (r[:-1] + r[1:])
        lo = np.concatenate([[0.0], faces])
        hi = np.concatenate([faces, [1.0]])
        m = self.dim
        return SPHERE_MEASURE[m] * (hi ** m - lo ** m) / m


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

@dataclass
class MacroField:
    values: np.ndarray
    mesh: MacroMesh

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_total,):
            raise ValueError("macro field shape mismatch")

    def copy(self) -> "MacroField":
        return MacroField(self.values.copy(), self.mesh)


@dataclass
class TwoScaleField:
    """One row of micro values per macro node."""

    values: np.ndarray
    macro_mesh: MacroMesh
    micro_mesh: MicroMesh
    trace_compatible: Optional[bool] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.macro_mesh.n_total, self.micro_mesh.n)
        if self.values.shape != expected:
            raise ValueError(f"two-scale field shape {self.values.shape} != {expected}")

    def copy(self) -> "TwoScaleField":
        return TwoScaleField(
            self.values.copy(), self.macro_mesh, self.micro_mesh, self.trace_compatible
        )


def macro_field_from_expr(expr, mesh: MacroMesh) -> MacroField:
    return MacroField(np.asarray(expr(mesh.coords), dtype=float), mesh)


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormSuite:
    """Discrete L_p data: quadrature weights and the metric factor."""

    p: float
    macro_mesh: MacroMesh
    micro_mesh: MicroMesh
    macro_weights: np.ndarray
    micro_weights: np.ndarray
    sqrt_g: np.ndarray  # rho(x)^n_c per macro node


def make_norm_suite(
    macro_mesh: MacroMesh,
    micro_mesh: MicroMesh,
    geom: CellMap,
    p: float = DEFAULT_P,
) -> NormSuite:
    if p < 1:
        raise ValueError("p must be >= 1")
    if p <= macro_mesh.dim + 2:
        warnings.warn(
            f"p = {p} does not exceed macro_dim + 2 = {macro_mesh.dim + 2}; "
            "the trace-coupling theory needs p > dim + 2",
            stacklevel=2,
        )
    _, sqrt_g, _ = metric_tables(geom, macro_mesh.coords)
    return NormSuite(
        p=float(p),
        macro_mesh=macro_mesh,
        micro_mesh=micro_mesh,
        macro_weights=macro_mesh.weights,
        micro_weights=micro_mesh.weights,
        sqrt_g=sqrt_g,
    )


def norm_e1(u: MacroField, suite: NormSuite) -> float:
    """Discrete L_p(Omega) norm."""
    p = suite.p
    return float((suite.macro_weights @ np.abs(u.values) ** p) ** (1.0 / p))


def norm_e2(U: TwoScaleField, suite: NormSuite) -> float:
    """Discrete L_p(Omega, L_p(Omega_x)) norm with the sqrt(det g) measure."""
    p = suite.p
    inner = np.abs(U.values) ** p @ suite.micro_weights
    return float((suite.macro_weights @ (suite.sqrt_g * inner)) ** (1.0 / p))


def norm_y0(u: MacroField, U: TwoScaleField, suite: NormSuite) -> float:
    """Product norm on Y0 = E1 x E2."""
    p = suite.p
    return float((norm_e1(u, suite) ** p + norm_e2(U, suite) ** p) ** (1.0 / p))


def second_difference_pair(u: MacroField, U: TwoScaleField):
    """Divided second differences, the discrete Y1 seminorm ingredients.

    Macro: d-dimensional Laplacian stencil on interior nodes (zero on the
    boundary); micro: per-cell second differences in the reference
    coordinate, zero at trace nodes.
    """
    mesh = u.mesh
    h2 = mesh.h ** 2
    grid = u.values.reshape(mesh.shape)
    lap = np.zeros_like(grid)
    if mesh.dim == 1:
        lap[1:-1] = (grid[2:] - 2.0 * grid[1:-1] + grid[:-2]) / h2
    else:
        lap[1:-1, :] += (grid[2:, :] - 2.0 * grid[1:-1, :] + grid[:-2, :]) / h2
        lap[:, 1:-1] += (grid[:, 2:] - 2.0 * grid[:, 1:-1] + grid[:, :-2]) / h2
        lap[0, :] = lap[-1, :] = 0.0
        lap[:, 0] = lap[:, -1] = 0.0
    du = MacroField(lap.ravel(), mesh)

    mm = U.micro_mesh
    dU = np.zeros_like(U.values)
    dU[:, 1:-1] = (U.values[:, 2:] - 2.0 * U.values[:, 1:-1] + U.values[:, :-2]) / mm.h ** 2
    if mm.dim > 1:
        dU[:, 0] = 2.0 * mm.dim * (U.values[:, 1] - U.values[:, 0]) / mm.h ** 2
    for b in mm.boundary_idx:
        dU[:, b] = 0.0
    return du, TwoScaleField(dU, U.macro_mesh, U.micro_mesh)


def _time_weights(n_slices: int, tau: float, kind: str) -> np.ndarray:
    if kind == "trapezoid":
        w = np.full(n_slices, tau)
        w[0] = w[-1] = 0.5 * tau
    else:
        w = np.full(n_slices, tau)
    return w


def norm_yt(
    trajectory: Sequence[tuple],
    suite: NormSuite,
    tau: float,
    components: bool = False,
):
    """Discrete Y^T norm of a trajectory of (u, U) pairs.

    Y^T = W^1_p(0,T; Y0) intersect L_p(0,T; Y1) discretely: the p-mean in
    time (time-averaged convention) of the field Y0 norms, of the
    backward difference quotients and of the divided second differences.
    A linear-in-time trajectory t*phi has difference-quotient part equal
    to the Y0 norm of phi for any window length.
    """
    K = len(trajectory) - 1
    if K < 1:
        raise TooFewSlices("Y^T norm needs at least 2 time slices")
    p = suite.p
    T = K * tau

    f_w = _time_weights(K + 1, tau, "trapezoid")
    f_vals = np.array([norm_y0(u, U, suite) for (u, U) in trajectory])
    field_part = float((f_w @ f_vals ** p / T) ** (1.0 / p))

    q_vals = np.empty(K)
    for k in range(1, K + 1):
        uk, Uk = trajectory[k]
        um, Um = trajectory[k - 1]
        du = MacroField((uk.values - um.values) / tau, uk.mesh)
        dU = TwoScaleField((Uk.values - Um.values) / tau, Uk.macro_mesh, Uk.micro_mesh)
        q_vals[k - 1] = norm_y0(du, dU, suite)
    quotient_part = float((np.full(K, tau) @ q_vals ** p / T) ** (1.0 / p))

    d_vals = np.empty(K + 1)
    for k, (u, U) in enumerate(trajectory):
        du, dU = second_difference_pair(u, U)
        d_vals[k] = norm_y0(du, dU, suite)
    second_part = float((f_w @ d_vals ** p / T) ** (1.0 / p))

    total = float((field_part ** p + quotient_part ** p + second_part ** p) ** (1.0 / p))
    if components:
        return total, field_part, quotient_part, second_part
    return total


def norm_e1t(m_trajectory: Sequence[MacroField], suite: NormSuite, tau: float) -> float:
    """Discrete L_p-in-time E1 norm with the W^1_p difference-quotient part."""
    K = len(m_trajectory) - 1
    if K < 1:
        raise TooFewSlices("E1^T norm needs at least 2 time slices")
    p = suite.p
    T = K * tau
    f_w = _time_weights(K + 1, tau, "trapezoid")
    f_vals = np.array([norm_e1(m, suite) for m in m_trajectory])
    q_vals = np.array(
        [
            norm_e1(
                MacroField(
                    (m_trajectory[k].values - m_trajectory[k - 1].values) / tau,
                    m_trajectory[k].mesh,
                ),
                suite,
            )
            for k in range(1, K + 1)
        ]
    )
    field_part = (f_w @ f_vals ** p / T) ** (1.0 / p)
    quot_part = (np.full(K, tau) @ q_vals ** p / T) ** (1.0 / p)
    return float((field_part ** p + quot_part ** p) ** (1.0 / p))


def norm_interp_proxy(u: MacroField, U: TwoScaleField, suite: NormSuite) -> float:
    """Trace-space proxy ||.||_Y0^(1/p) * ||.||_Y1^(1-1/p).

    Requires trace compatibility; never exceeds max(Y0, Y1) norms and is
    homogeneous of degree one.
    """
    from .geometry import TOL_TRACE

    bvals = U.values[:, list(U.micro_mesh.boundary_idx)]
    gap = np.abs(bvals - u.values[:, None]).max()
    if gap > TOL_TRACE * (1.0 + np.abs(u.values).max()):
        raise TraceMismatch(f"proxy norm needs tr U = u, gap {gap:.3e}")
    p = suite.p
    y0 = norm_y0(u, U, suite)
    du, dU = second_difference_pair(u, U)
    y1 = (y0 ** p + norm_y0(du, dU, suite) ** p) ** (1.0 / p)
    return float(y0 ** (1.0 / p) * y1 ** (1.0 - 1.0 / p))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def snapshot_csv(u: MacroField, M: Optional[MacroField], U: TwoScaleField) -> str:
    """One row per macro node: coordinates, u, M, micro columns."""
    mesh = u.mesh
    buf = io.StringIO()
    coord_names = ["x1", "x2"][: mesh.dim]
    micro_names = [f"y{j}" for j in range(U.micro_mesh.n)]
    m_col = ["m"] if M is not None else []
    buf.write(",".join(coord_names + ["u"] + m_col + micro_names) + "\n")
    coords = mesh.coords
    for i in range(mesh.n_total):
        row = [f"{c:.17g}" for c in coords[i]]
        row.append(f"{u.values[i]:.17g}")
        if M is not None:
            row.append(f"{M.values[i]:.17g}")
        row.extend(f"{v:.17g}" for v in U.values[i])
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def mesh_metadata(macro: MacroMesh, micro: MicroMesh) -> dict:
    return {
        "macro_dim": macro.dim,
        "macro_nodes_per_axis": macro.n,
        "macro_h": macro.h,
        "micro_dim": micro.dim,
        "micro_nodes": micro.n,
        "micro_h": micro.h,
    }
