"""Cell geometry: the transformation family Phi_x and its induced metric.

Each macro point x owns a cell Omega_x = Phi_x(B), the image of the
reference ball B under the affine map

    Phi_x(y) = c(x) + rho(x) * y.

The pull-back of the Euclidean metric is isotropic, g_ij = rho(x)^2
delta_ij, so the inverse metric is rho^-2, sqrt(det g) = rho^n_c and the
cell volume is rho^n_c * |B|.  Everything here depends on x only; micro
coordinates never enter the metric (an override hook accepts a general
x-dependent diagonal metric).

Radius and center are named analytic expressions over the macro domain
(constant / affine / sinusoidal) so runs are exactly reproducible from a
config file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateMetric, MicroPointOutOfBall, TraceMismatch

TOL_GEOM = 1e-12
TOL_TRACE = 1e-12

# Measures of the unit ball and unit sphere in R^n for the supported
# micro dimensions.
BALL_MEASURE = {1: 2.0, 2: math.pi, 3: 4.0 * math.pi / 3.0}
SPHERE_MEASURE = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}

MACRO_EXPR_FAMILIES = ("constant", "affine", "sinusoidal", "product_sine")


@dataclass(frozen=True)
class MacroExpr:
    """Named analytic scalar expression over macro points.

    constant:     p0
    affine:       p0 + p1*x1 (+ p2*x2 in 2D)
    sinusoidal:   p0 + p1*sin(p2*pi*(x1+...+xd) + p3)
    product_sine: p0 * prod_i sin(p1*pi*x_i)  (vanishes on the unit-box
                  boundary for integer p1, in any macro dimension)
    """

    name: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.name not in MACRO_EXPR_FAMILIES:
            raise ValueError(f"unknown macro expression family {self.name!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at points of shape (N, dim) or (dim,)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        p = self.params
        if self.name == "constant":
            out = np.full(pts.shape[0], p[0])
        elif self.name == "affine":
            out = p[0] + pts @ np.asarray(p[1:1 + pts.shape[1]])
        elif self.name == "product_sine":
            out = p[0] * np.prod(np.sin(p[1] * math.pi * pts), axis=1)
        else:  # sinusoidal
            s = pts.sum(axis=1)
            phase = p[3] if len(p) > 3 else 0.0
            out = p[0] + p[1] * np.sin(p[2] * math.pi * s + phase)
        return out if np.asarray(points).ndim == 2 else float(out[0])


def expr_arity(name: str, dim: int) -> tuple[int, int]:
    """Admissible (min, max) parameter counts for a macro expression."""
    if name == "constant":
        return 1, 1
    if name == "affine":
        return 1 + dim, 1 + dim
    if name == "product_sine":
        return 2, 2
    return 3, 4  # sinusoidal, optional phase


@dataclass(frozen=True)
class MetricData:
    """Isotropic metric data of one cell; depends on x only."""

    g_inv: float        # inverse metric coefficient rho^-2
    sqrt_det: float     # sqrt(det g) = rho^n_c
    cell_volume: float  # |Phi_x(B)| = rho^n_c * |B|


# An override returns (g_inv, sqrt_det, cell_volume) for a macro point.
MetricOverride = Callable[[np.ndarray], tuple[float, float, float]]


@dataclass
class CellMap:
    """Affine scaled-ball transformation family."""

    micro_dim: int
    radius: MacroExpr
    center: Sequence[MacroExpr] = field(default_factory=tuple)
    rho_min: float = 0.5
    rho_max: float = 2.0
    ambient_halfwidth: float = 4.0
    family_id: str = "scaled_ball"
    metric_override: Optional[MetricOverride] = None

    def __post_init__(self):
        if self.micro_dim not in BALL_MEASURE:
            raise ValueError("micro_dim must be 1, 2 or 3")
        if not self.center:
            self.center = tuple(
                MacroExpr("constant", (0.0,)) for _ in range(self.micro_dim)
            )
        if len(self.center) != self.micro_dim:
            raise ValueError("need one center expression per micro coordinate")
        if not (0.0 < self.rho_min <= self.rho_max):
            raise ValueError("require 0 < rho_min <= rho_max")

    # -- pointwise data ------------------------------------------------

    def rho_at(self, points: np.ndarray) -> np.ndarray:
        rho = np.atleast_1d(np.asarray(self.radius(points), dtype=float))
        bad = (rho < self.rho_min - TOL_GEOM) | (rho > self.rho_max + TOL_GEOM)
        if np.any(bad):
            raise DegenerateMetric(
                f"rho outside [{self.rho_min}, {self.rho_max}]: "
                f"range [{rho.min():.6g}, {rho.max():.6g}]"
            )
        return rho

    def center_at(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.stack([np.atleast_1d(c(pts)) for c in self.center], axis=1)

    def validate_on(self, points: np.ndarray) -> None:
        """Check rho bounds and ambient containment over a node set."""
        rho = self.rho_at(points)
        ctr = self.center_at(points)
        reach = np.abs(ctr).max(axis=1) + rho
        if np.any(reach > self.ambient_halfwidth + TOL_GEOM):
            raise DegenerateMetric(
                "cell leaves the ambient box: "
                f"max reach {reach.max():.6g} > {self.ambient_halfwidth}"
            )


def cell_map_eval(cmap: CellMap, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Physical position Phi_x(y) = c(x) + rho(x) * y of a micro point."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 0:
        y = y[None]
    if y.shape[-1] != cmap.micro_dim and y.ndim == 1 and cmap.micro_dim == 1:
        y = y[:, None]
    if float(np.linalg.norm(y, axis=-1).max()) > 1.0 + TOL_GEOM:
        raise MicroPointOutOfBall(f"|y| = {np.linalg.norm(y):.6g} > 1")
    rho = cmap.rho_at(x)
    ctr = cmap.center_at(x)
    out = ctr[:, None, :] + rho[:, None, None] * np.atleast_2d(y)[None, :, :]
    return out[0] if np.asarray(x).ndim == 1 else out


def metric_at(cmap: CellMap, x: np.ndarray) -> MetricData:
    """Metric data of the cell at one macro point."""
    if cmap.metric_override is not None:
        g_inv, sqrt_det, vol = cmap.metric_override(np.asarray(x, dtype=float))
        if g_inv <= 0.0 or sqrt_det <= 0.0:
            raise DegenerateMetric("override produced a non-positive metric")
        return MetricData(g_inv, sqrt_det, vol)
    rho = float(cmap.rho_at(np.atleast_2d(np.asarray(x, dtype=float)))[0])
    n = cmap.micro_dim
    return MetricData(
        g_inv=rho ** -2,
        sqrt_det=rho ** n,
        cell_volume=rho ** n * BALL_MEASURE[n],
    )


def metric_tables(cmap: CellMap, points: np.ndarray):
    """Vectorized metric data over a node set: (g_inv, sqrt_det, volume)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if cmap.metric_override is not None:
        rows = [cmap.metric_override(p) for p in pts]
        arr = np.asarray(rows, dtype=float)
        if np.any(arr[:, 0] <= 0.0) or np.any(arr[:, 1] <= 0.0):
            raise DegenerateMetric("override produced a non-positive metric")
        return arr[:, 0], arr[:, 1], arr[:, 2]
    rho = cmap.rho_at(pts)
    n = cmap.micro_dim
    return rho ** -2.0, rho ** n, rho ** n * BALL_MEASURE[n]


def lift(u, micro_mesh):
    """Constant-in-cell extension R: (Ru)(x, y) = u(x).

    The cell operators annihilate lifted fields exactly (divergence form),
    which is what decouples the two-scale resolvent.
    """
    from .meshes import TwoScaleField

    values = np.repeat(u.values[:, None], micro_mesh.n, axis=1)
    return TwoScaleField(values, u.mesh, micro_mesh, trace_compatible=True)


def trace(U):
    """Boundary value tr U as a macro field.

    For interval cells the two end values must agree within TOL_TRACE;
    radial cells expose a single boundary node at r = 1.  trace(lift(u))
    returns u bitwise.
    """
    from .meshes import MacroField

    bidx = U.micro_mesh.boundary_idx
    vals = U.values[:, bidx[-1]]
    if len(bidx) > 1:
        gap = np.abs(U.values[:, bidx[0]] - vals)
        scale = 1.0 + np.abs(vals)
        if np.any(gap > TOL_TRACE * scale):
            raise TraceMismatch(
                f"end values differ by up to {gap.max():.3e}"
            )
    U.trace_compatible = True
    return MacroField(vals.copy(), U.macro_mesh)
