"""Superposition (Nemytskii) coefficient laws and the porosity rate law.

The macro diffusivity a1 and the cell diffusivity b2 are scalar laws
evaluated at the frozen macro state v(x):

    a1(v)(x)    = a1~(x, v(x))
    b2(v)(x, y) = b2~((x, y), v(x)).

Both must stay above the ellipticity floor eta; evaluation raises
EllipticityViolation otherwise (never clamps).  Laws come from a fixed
analytic catalog so that configs reproduce runs exactly.  In the catalog,
x enters through s = x1 (+ x2) and y through the radial coordinate
ry = |y|, which keeps every law radially symmetric on the reference ball.

Cell diffusion is slow by default (contrast ~1e-3 against the macro
scale): that is the physically interesting double-porosity regime, and it
is also the regime in which the resolvent-difference decay probed by the
spectral module is visible on the default radii.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import BoundViolation, EllipticityViolation, PorosityRangeViolation
from .geometry import CellMap, metric_tables
from .meshes import MacroField, TwoScaleField

STATE_LAW_ARITY = {
    # family -> (n_params for a1, n_params for b2)
    "constant": (1, 1),
    "affine": (3, 4),
    "rational_saturating": (2, 3),
    "trigonometric": (4, 5),
}

POROSITY_LAW_ARITY = {"zero": 0, "saturating": 1}
SOURCE_LAW_NAMES = ("zero", "exchange")


def _eval_a1(name: str, params, s, r):
    p = params
    if name == "constant":
        return np.broadcast_to(p[0], np.broadcast(s, r).shape).copy()
    if name == "affine":
        return p[0] + p[1] * s + p[2] * r
    if name == "rational_saturating":
        return p[0] + p[1] * r * r / (1.0 + r * r)
    return p[0] + p[1] * np.sin(p[2] * s + p[3] * r)


def _eval_b2(name: str, params, s, ry, r):
    p = params
    if name == "constant":
        return np.broadcast_to(p[0], np.broadcast(s, ry, r).shape).copy()
    if name == "affine":
        return p[0] + p[1] * s + p[2] * ry + p[3] * r
    if name == "rational_saturating":
        return p[0] + p[1] * r * r / (1.0 + r * r) + p[2] * ry * ry
    return p[0] + p[1] * np.sin(p[2] * s + p[3] * ry + p[4] * r)


@dataclass(frozen=True)
class StateLaw:
    """One named scalar law with its parameter vector."""

    name: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.name not in STATE_LAW_ARITY:
            raise ValueError(f"unknown state law {self.name!r}")
        object.__setattr__(self, "params", tuple(float(q) for q in self.params))


@dataclass(frozen=True)
class DiffusivityLaw:
    """Pair of state laws (a1, b2) with a shared ellipticity floor."""

    a1: StateLaw
    b2: StateLaw
    eta: float

    def __post_init__(self):
        if self.eta <= 0.0:
            raise ValueError("ellipticity floor eta must be positive")
        na, nb = STATE_LAW_ARITY[self.a1.name][0], STATE_LAW_ARITY[self.b2.name][1]
        if len(self.a1.params) != na:
            raise ValueError(f"a1 law {self.a1.name!r} needs {na} parameters")
        if len(self.b2.params) != nb:
            raise ValueError(f"b2 law {self.b2.name!r} needs {nb} parameters")


def _s_coord(x_points: np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.asarray(x_points, dtype=float)).sum(axis=1)


def a1_eval(law: DiffusivityLaw, x_points: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Macro diffusivity at nodes x with frozen state r = v(x)."""
    vals = np.asarray(
        _eval_a1(law.a1.name, law.a1.params, _s_coord(x_points), np.asarray(r, dtype=float))
    )
    if np.min(vals) < law.eta:
        raise EllipticityViolation(
            f"a1 fell to {np.min(vals):.6g} below eta = {law.eta}"
        )
    return vals


def b2_eval(
    law: DiffusivityLaw,
    x_points: np.ndarray,
    micro_radii: np.ndarray,
    r: np.ndarray,
) -> np.ndarray:
    """Cell diffusivity table of shape (n_macro, n_micro).

    ``micro_radii`` is |y| on the reference grid; ``r`` is v(x) per node.
    """
    s = _s_coord(x_points)[:, None]
    rv = np.asarray(r, dtype=float)[:, None]
    ry = np.asarray(micro_radii, dtype=float)[None, :]
    vals = np.asarray(_eval_b2(law.b2.name, law.b2.params, s, ry, rv))
    if np.min(vals) < law.eta:
        raise EllipticityViolation(
            f"b2 fell to {np.min(vals):.6g} below eta = {law.eta}"
        )
    return vals


# ---------------------------------------------------------------------------
# source laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SourceLaw:
    """Right-hand sides f1(t, u, U) and f2(t, u, U).

    The default exchange family is the double-porosity coupling
    f1 = beta * (cell average of U - u), f2 = beta * (u - U); its
    Lipschitz constant in the pair (sup norms) is 2 * beta.
    """

    name: str = "exchange"
    beta: float = 0.0

    def __post_init__(self):
        if self.name not in SOURCE_LAW_NAMES:
            raise ValueError(f"unknown source law {self.name!r}")
        if self.beta < 0.0:
            raise ValueError("beta must be nonnegative")

    @property
    def lipschitz_est(self) -> float:
        return 0.0 if self.name == "zero" else 2.0 * self.beta

    def f1(self, t: float, u: np.ndarray, u_bar: np.ndarray) -> np.ndarray:
        if self.name == "zero":
            return np.zeros_like(u)
        return self.beta * (u_bar - u)

    def f2(self, t: float, u: np.ndarray, U: np.ndarray) -> np.ndarray:
        if self.name == "zero":
            return np.zeros_like(U)
        return self.beta * (u[:, None] - U)


def cell_average(U: TwoScaleField) -> np.ndarray:
    """Reference-ball average of each cell row."""
    w = U.micro_mesh.weights
    return (U.values @ w) / w.sum()


def cell_load(U: TwoScaleField, node: int, geom: CellMap) -> float:
    """Reactant load of one cell: |Phi_x(B)| * integral_B U(x, y) dy."""
    _, _, vol = metric_tables(geom, U.macro_mesh.coords[node])
    return float(vol[0] * (U.values[node] @ U.micro_mesh.weights))


def cell_loads(U: TwoScaleField, geom: CellMap) -> np.ndarray:
    """Vectorized cell_load over all macro nodes."""
    _, _, vol = metric_tables(geom, U.macro_mesh.coords)
    return vol * (U.values @ U.micro_mesh.weights)


# ---------------------------------------------------------------------------
# porosity law
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PorosityLaw:
    """Consumption rate G0(load, M) with admissibility bookkeeping.

    Built-in families map into [0, C_G] with C_G < c_g and vanish at
    M = M_min, which prevents undershoot of the porosity floor.  A custom
    callable may replace the family (manufactured-solution support); the
    floor-pinning guarantee then rests with the caller.
    """

    name: str = "zero"
    params: tuple[float, ...] = ()
    m_min: float = 0.5
    m_max: float = 1.0
    c_g: float = 1.0
    cap: float = 0.5  # C_G, strict upper bound of the family
    k_sorption: float = 0.0
    custom_g0: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(q) for q in self.params))
        if self.custom_g0 is None:
            if self.name not in POROSITY_LAW_ARITY:
                raise ValueError(f"unknown porosity law {self.name!r}")
            if len(self.params) != POROSITY_LAW_ARITY[self.name]:
                raise ValueError(f"porosity law {self.name!r} parameter count")
            if self.name == "saturating" and not (0.0 < self.params[0] <= self.cap):
                raise ValueError("saturating rate must lie in (0, C_G]")
        if not (0.0 < self.m_min < self.m_max):
            raise ValueError("require 0 < M_min < M_max")
        if not (0.0 <= self.cap < self.c_g):
            raise ValueError("require 0 <= C_G < c_g")
        if self.k_sorption < 0.0:
            raise ValueError("sorption constant K must be nonnegative")

    @property
    def lip_g(self) -> float:
        """Recorded Lipschitz estimate of G0 in (load, M)."""
        if self.custom_g0 is not None or self.name == "zero":
            return 1.0 if self.custom_g0 is not None else 0.0
        c1 = self.params[0]
        # max slope of s^2/(1+s^2) is 3*sqrt(3)/8 at s = 1/sqrt(3)
        return c1 * max(3.0 * np.sqrt(3.0) / 8.0, 1.0 / (self.m_max - self.m_min))

    def g0(self, load: np.ndarray, M: np.ndarray) -> np.ndarray:
        if self.custom_g0 is not None:
            return np.asarray(self.custom_g0(load, M), dtype=float)
        if self.name == "zero":
            return np.zeros_like(np.asarray(M, dtype=float))
        c1 = self.params[0]
        sat = load * load / (1.0 + load * load)
        return c1 * sat * (M - self.m_min) / (self.m_max - self.m_min)


def check_porosity_range(law: PorosityLaw, M: np.ndarray) -> None:
    if np.min(M) < law.m_min or np.max(M) > law.m_max:
        raise PorosityRangeViolation(
            f"porosity range [{np.min(M):.6g}, {np.max(M):.6g}] leaves "
            f"[{law.m_min}, {law.m_max}]"
        )


def g_eval(law: PorosityLaw, U: TwoScaleField, M: MacroField, geom: CellMap) -> np.ndarray:
    """Nodewise rate G(U, M)(x) = G0(cell_load(U)(x), M(x)).

    Guards the admissibility window: porosity must sit in [M_min, M_max]
    and the rate must stay nonnegative and strictly below c_g.
    """
    check_porosity_range(law, M.values)
    rate = law.g0(cell_loads(U, geom), M.values)
    if np.min(rate) < 0.0:
        raise BoundViolation(f"negative consumption rate {np.min(rate):.6g}")
    if np.max(rate) >= law.c_g:
        raise BoundViolation(
            f"consumption rate {np.max(rate):.6g} reached c_g = {law.c_g}"
        )
    return rate


@dataclass(frozen=True)
class LawSet:
    """Bundle of the three laws a solver run needs."""

    diffusivity: DiffusivityLaw
    source: SourceLaw
    porosity: PorosityLaw
