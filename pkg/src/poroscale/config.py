"""Typed run configuration: strict pydantic models, cross-field checks
and a canonical content hash for reproducibility manifests.

Every model forbids unknown keys so a typo in a config file fails loudly
instead of silently running defaults.  Validation that needs mesh data
(Dirichlet compatibility of the initial macro field, ellipticity on the
actual state range) happens when the problem is built, not here; this
module checks everything checkable from the numbers alone.
"""

from __future__ import annotations

import hashlib
import json
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .coefficients import (
    POROSITY_LAW_ARITY,
    SOURCE_LAW_NAMES,
    STATE_LAW_ARITY,
)
from .geometry import expr_arity
from .mms import MMS_CASE_NAMES

EXPERIMENT_NAMES = (
    "simulate",
    "mms",
    "convergence",
    "probe-sector",
    "probe-rbound",
    "contraction",
)


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=False)


class ExprSpec(StrictModel):
    """Catalog expression over macro coordinates."""

    name: Literal["constant", "affine", "sinusoidal", "product_sine"] = "constant"
    params: list[float] = Field(default_factory=lambda: [0.0])

    def check_arity(self, dim: int, label: str) -> None:
        lo, hi = expr_arity(self.name, dim)
        if not (lo <= len(self.params) <= hi):
            raise ValueError(
                f"{label}: expression {self.name!r} over {dim}d macro "
                f"coordinates takes {lo}..{hi} parameters, got {len(self.params)}"
            )


class GeometryConfig(StrictModel):
    micro_dim: Literal[1, 2, 3] = 1
    radius: ExprSpec = Field(default_factory=lambda: ExprSpec(params=[1.0]))
    center: list[ExprSpec] = Field(default_factory=list)
    rho_min: float = 0.5
    rho_max: float = 2.0
    ambient_halfwidth: float = 4.0

    @model_validator(mode="after")
    def _check(self):
        if not (0.0 < self.rho_min <= self.rho_max):
            raise ValueError("require 0 < rho_min <= rho_max")
        if self.center and len(self.center) != self.micro_dim:
            raise ValueError("need one center expression per micro coordinate")
        return self


class StateLawSpec(StrictModel):
    name: Literal["constant", "affine", "rational_saturating", "trigonometric"] = (
        "constant"
    )
    params: list[float] = Field(default_factory=lambda: [1.0])


class CoefficientConfig(StrictModel):
    """Diffusivity pair with an ellipticity pre-flight over a state box."""

    a1: StateLawSpec = Field(default_factory=lambda: StateLawSpec(params=[1.0]))
    b2: StateLawSpec = Field(default_factory=lambda: StateLawSpec(params=[1e-3]))
    eta: float = 1e-8
    state_box: tuple[float, float] = (-2.0, 2.0)

    @model_validator(mode="after")
    def _check(self):
        if self.eta <= 0.0:
            raise ValueError("eta must be positive")
        na = STATE_LAW_ARITY[self.a1.name][0]
        nb = STATE_LAW_ARITY[self.b2.name][1]
        if len(self.a1.params) != na:
            raise ValueError(f"a1 law {self.a1.name!r} needs {na} parameters")
        if len(self.b2.params) != nb:
            raise ValueError(f"b2 law {self.b2.name!r} needs {nb} parameters")
        if self.state_box[0] > self.state_box[1]:
            raise ValueError("state_box must be ordered")
        return self


class SourceConfig(StrictModel):
    name: Literal["zero", "exchange"] = "exchange"
    beta: float = 0.5

    @model_validator(mode="after")
    def _check(self):
        if self.name not in SOURCE_LAW_NAMES:
            raise ValueError(f"unknown source law {self.name!r}")
        if self.beta < 0.0:
            raise ValueError("beta must be nonnegative")
        return self


class PorosityConfig(StrictModel):
    name: Literal["zero", "saturating"] = "saturating"
    params: list[float] = Field(default_factory=lambda: [0.05])
    m_min: float = 0.5
    m_max: float = 1.0
    c_g: float = 0.5
    cap: float = 0.45
    k_sorption: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        if len(self.params) != POROSITY_LAW_ARITY[self.name]:
            raise ValueError(f"porosity law {self.name!r} parameter count")
        if not (0.0 < self.m_min < self.m_max):
            raise ValueError("require 0 < m_min < m_max")
        if not (0.0 <= self.cap < self.c_g):
            raise ValueError("the family bound cap = C_G must satisfy C_G < c_g")
        if self.name == "saturating" and not (0.0 < self.params[0] <= self.cap):
            raise ValueError("saturating rate must lie in (0, cap]")
        if self.k_sorption < 0.0:
            raise ValueError("sorption constant must be nonnegative")
        return self


class MeshConfig(StrictModel):
    macro_dim: Literal[1, 2] = 1
    macro_n: int = 33
    micro_n: int = 17

    @model_validator(mode="after")
    def _check(self):
        if self.macro_n < 4 or self.micro_n < 4:
            raise ValueError("meshes need at least 4 nodes per direction")
        return self


class InitialConfig(StrictModel):
    """Initial data: macro expression, cell bubble on top of the lift,
    porosity expression."""

    u0: ExprSpec = Field(
        default_factory=lambda: ExprSpec(name="product_sine", params=[0.05, 1.0])
    )
    bubble_amp: ExprSpec = Field(default_factory=lambda: ExprSpec(params=[0.0]))
    m0: ExprSpec = Field(default_factory=lambda: ExprSpec(params=[0.9]))


class ToleranceConfig(StrictModel):
    picard_tol: float = 1e-10
    picard_max: int = 50
    tol_lin: float = 1e-10
    gamma_max: int = 200

    @model_validator(mode="after")
    def _check(self):
        if min(self.picard_tol, self.tol_lin) <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.picard_max < 1 or self.gamma_max < 1:
            raise ValueError("iteration caps must be at least 1")
        return self


class ProbeConfig(StrictModel):
    angle: float = float(np.pi / 4)
    radius_min: float = 1e-2
    radius_max: float = 1e4
    n_radii: int = 25
    family_size: int = 8
    n_tuples: int = 6
    n_sign_samples: int = 10_000
    nodes: list[int] = Field(default_factory=lambda: [])
    node_pair: tuple[int, int] = (0, 1)

    @model_validator(mode="after")
    def _check(self):
        if not (0.0 < self.angle < np.pi / 2):
            raise ValueError("sector half-angle must lie in (0, pi/2)")
        if not (0.0 < self.radius_min < self.radius_max):
            raise ValueError("require 0 < radius_min < radius_max")
        if self.n_radii < 2:
            raise ValueError("need at least 2 radii")
        return self


class MMSConfig(StrictModel):
    case: Literal[MMS_CASE_NAMES] = "decay_sine"  # type: ignore[valid-type]
    mode: Literal["spatial", "temporal", "micro"] = "spatial"
    levels: int = 4
    t_end: float = 0.1
    tau0: float = 0.02
    macro_n0: int = 9
    micro_n0: int = 5

    @model_validator(mode="after")
    def _check(self):
        if self.levels < 3:
            raise ValueError("a convergence ladder needs at least 3 levels")
        if self.t_end <= 0.0 or self.tau0 <= 0.0:
            raise ValueError("t_end and tau0 must be positive")
        return self


class RunConfig(StrictModel):
    experiment: Literal[EXPERIMENT_NAMES] = "simulate"  # type: ignore[valid-type]
    p: float = 4.0
    tau: float = 0.01
    t_end: float = 0.2
    t0_window: float = 0.08
    contraction_target: float = 0.75
    window_shrink: float = 0.5
    rho_ball: Optional[float] = None
    seed: int = 0
    dump_matrices: bool = False
    geometry: GeometryConfig = Field(default_factory=GeometryConfig)
    mesh: MeshConfig = Field(default_factory=MeshConfig)
    coefficients: CoefficientConfig = Field(default_factory=CoefficientConfig)
    source: SourceConfig = Field(default_factory=SourceConfig)
    porosity: PorosityConfig = Field(default_factory=PorosityConfig)
    initial: InitialConfig = Field(default_factory=InitialConfig)
    tolerances: ToleranceConfig = Field(default_factory=ToleranceConfig)
    probe: ProbeConfig = Field(default_factory=ProbeConfig)
    mms: MMSConfig = Field(default_factory=MMSConfig)

    @model_validator(mode="after")
    def _check(self):
        if self.tau <= 0.0 or self.t_end <= 0.0 or self.t0_window <= 0.0:
            raise ValueError("tau, t_end and t0_window must be positive")
        if not (0.0 < self.contraction_target < 1.0):
            raise ValueError("contraction_target must lie in (0, 1)")
        if not (0.0 < self.window_shrink < 1.0):
            raise ValueError("window_shrink must lie in (0, 1)")
        if self.rho_ball is not None and self.rho_ball <= 0.0:
            raise ValueError("rho_ball must be positive when given")
        if self.p < 1.0:
            raise ValueError("p must be at least 1")
        self.geometry.radius.check_arity(self.mesh.macro_dim, "geometry.radius")
        for i, c in enumerate(self.geometry.center):
            c.check_arity(self.mesh.macro_dim, f"geometry.center[{i}]")
        self.initial.u0.check_arity(self.mesh.macro_dim, "initial.u0")
        self.initial.bubble_amp.check_arity(self.mesh.macro_dim, "initial.bubble_amp")
        self.initial.m0.check_arity(self.mesh.macro_dim, "initial.m0")
        return self


def config_hash(config: RunConfig) -> str:
    """sha256 of the canonical JSON serialization (sorted keys)."""
    blob = json.dumps(
        config.model_dump(mode="json"), sort_keys=True, separators=(",", ":")
    )
    return hashlib.sha256(blob.encode()).hexdigest()


def default_config() -> RunConfig:
    return RunConfig()


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return RunConfig.model_validate(json.load(fh))
