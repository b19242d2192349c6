"""Experiment runners: build a problem from a RunConfig, execute one of
the named experiments and emit deterministic artifacts.

Every runner returns ``(report, artifacts)`` where ``report`` is a
JSON-safe dict and ``artifacts`` maps file names to text content.  When
an output directory is given the artifacts are written along with a
``manifest.json`` carrying the config hash and library versions; nothing
in an artifact depends on wall-clock state, so reruns with the same
config and seed reproduce every byte.

``POROSCALE_THREADS`` (default 1) sets the worker count for the
per-node probe loops; results are independent of it.
"""

from __future__ import annotations

import io
import json
import os
import platform
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .coefficients import (
    DiffusivityLaw,
    LawSet,
    PorosityLaw,
    SourceLaw,
    StateLaw,
    a1_eval,
    b2_eval,
)
from .config import RunConfig, config_hash
from .errors import UnknownExperiment
from .evolution import (
    SolverConfig,
    SystemState,
    contraction_solve,
    simulate,
    total_mass,
    validate_initial_data,
)
from .geometry import CellMap, MacroExpr, lift
from .meshes import (
    MacroField,
    MacroMesh,
    MicroMesh,
    TwoScaleField,
    make_norm_suite,
    norm_e1,
    norm_e2,
    snapshot_csv,
)
from .mms import make_case, run_convergence, run_mms
from .operators import assemble_coupled, dump_coupled
from .probes import (
    SectorSpec,
    resolvent_lipschitz_test,
    sector_sweep,
    uniformity_scan,
)


def parallel_map(fn, items):
    """Order-preserving map with POROSCALE_THREADS workers (default 1)."""
    workers = int(os.environ.get("POROSCALE_THREADS", "1"))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# problem assembly
# ---------------------------------------------------------------------------

def _expr(spec) -> MacroExpr:
    return MacroExpr(spec.name, tuple(spec.params))


def build_laws(config: RunConfig) -> LawSet:
    return LawSet(
        diffusivity=DiffusivityLaw(
            a1=StateLaw(config.coefficients.a1.name, tuple(config.coefficients.a1.params)),
            b2=StateLaw(config.coefficients.b2.name, tuple(config.coefficients.b2.params)),
            eta=config.coefficients.eta,
        ),
        source=SourceLaw(config.source.name, beta=config.source.beta),
        porosity=PorosityLaw(
            config.porosity.name,
            tuple(config.porosity.params),
            config.porosity.m_min,
            config.porosity.m_max,
            c_g=config.porosity.c_g,
            cap=config.porosity.cap,
            k_sorption=config.porosity.k_sorption,
        ),
    )


def _ellipticity_preflight(laws: LawSet, config: RunConfig, macro: MacroMesh) -> None:
    """Scan a1 and b2 over the configured state box; raises on a dip."""
    lo, hi = config.coefficients.state_box
    states = np.linspace(lo, hi, 33)
    pts = macro.coords[:: max(1, macro.n_total // 16)]
    radii = np.linspace(0.0, 1.0, 9)
    for r in states:
        rv = np.full(pts.shape[0], r)
        a1_eval(laws.diffusivity, pts, rv)
        b2_eval(laws.diffusivity, pts, radii, rv)


class Problem:
    """Everything a runner needs, assembled once from the config."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.macro = MacroMesh(dim=config.mesh.macro_dim, n=config.mesh.macro_n)
        self.micro = MicroMesh(dim=config.geometry.micro_dim, n=config.mesh.micro_n)
        self.geom = CellMap(
            micro_dim=config.geometry.micro_dim,
            radius=_expr(config.geometry.radius),
            center=tuple(_expr(c) for c in config.geometry.center),
            rho_min=config.geometry.rho_min,
            rho_max=config.geometry.rho_max,
            ambient_halfwidth=config.geometry.ambient_halfwidth,
        )
        self.geom.validate_on(self.macro.coords)
        self.laws = build_laws(config)
        _ellipticity_preflight(self.laws, config, self.macro)
        self.suite = make_norm_suite(self.macro, self.micro, self.geom, p=config.p)
        self.solver = SolverConfig(
            tau=config.tau,
            picard_tol=config.tolerances.picard_tol,
            picard_max=config.tolerances.picard_max,
            tol_lin=config.tolerances.tol_lin,
            contraction_target=config.contraction_target,
            window_shrink=config.window_shrink,
            gamma_max=config.tolerances.gamma_max,
        )
        self.state0 = self._initial_state()

    def _initial_state(self) -> SystemState:
        u0 = MacroField(_expr(self.config.initial.u0)(self.macro.coords), self.macro)
        U0 = lift(u0, self.micro)
        amp = _expr(self.config.initial.bubble_amp)(self.macro.coords)
        bubble = 1.0 - self.micro.nodes ** 2
        U0 = TwoScaleField(
            U0.values + amp[:, None] * bubble[None, :], self.macro, self.micro
        )
        m0 = MacroField(_expr(self.config.initial.m0)(self.macro.coords), self.macro)
        return validate_initial_data(u0, U0, m0, self.laws)

    def sector_spec(self) -> SectorSpec:
        pr = self.config.probe
        return SectorSpec(
            angle=pr.angle,
            radius_min=pr.radius_min,
            radius_max=pr.radius_max,
            n_radii=pr.n_radii,
        )

    def probe_nodes(self) -> list:
        nodes = list(self.config.probe.nodes)
        if not nodes:
            interior = self.macro.interior_idx
            take = np.linspace(0, len(interior) - 1, 5).round().astype(int)
            nodes = [int(interior[i]) for i in take]
        return nodes


def build_problem(config: RunConfig) -> Problem:
    return Problem(config)


# ---------------------------------------------------------------------------
# csv helpers
# ---------------------------------------------------------------------------

def _csv(header: list, rows: list) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.17g}"
    if isinstance(v, complex):
        return f"{v.real:.17g}{v.imag:+.17g}j"
    return str(v)


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------

def run_simulate(problem: Problem):
    cfg = problem.config
    n_steps = int(round(cfg.t_end / cfg.tau))
    result = simulate(
        problem.state0,
        n_steps,
        problem.solver,
        problem.laws,
        problem.geom,
        problem.suite,
    )
    rows = []
    masses = []
    for k, state in enumerate(result.states):
        rep = result.reports[k - 1] if k else None
        masses.append(total_mass(state, problem.suite))
        rows.append(
            (
                k,
                state.t,
                norm_e1(state.u, problem.suite),
                norm_e2(state.U, problem.suite),
                float(state.M.values.min()),
                float(state.M.values.max()),
                rep.iterations if rep else 0,
                rep.diffs[-1] if rep else 0.0,
                masses[-1],
            )
        )
    artifacts = {
        "history.csv": _csv(
            ["step", "t", "norm_u", "norm_U", "m_min", "m_max",
             "picard_iterations", "last_diff", "mass"],
            rows,
        ),
        "final.csv": snapshot_csv(result.final.u, result.final.M, result.final.U),
    }
    if cfg.dump_matrices:
        op = assemble_coupled(
            problem.state0.u, problem.laws.diffusivity, problem.geom,
            problem.micro, p=cfg.p,
        )
        for name, text in dump_coupled(op).items():
            artifacts[f"matrix_{name}"] = text
    report = {
        "experiment": "simulate",
        "steps": n_steps,
        "t_end": result.final.t,
        "final_norm_u": norm_e1(result.final.u, problem.suite),
        "final_norm_U": norm_e2(result.final.U, problem.suite),
        "m_range": [float(result.final.M.values.min()),
                    float(result.final.M.values.max())],
        "mass_initial": masses[0],
        "mass_final": masses[-1],
        "max_picard_iterations": max((r.iterations for r in result.reports), default=0),
    }
    return report, artifacts


def run_mms_experiment(problem: Problem):
    m = problem.config.mms
    case = make_case(m.case)
    res = run_mms(
        case,
        problem.config.mesh.macro_n,
        problem.config.mesh.micro_n,
        problem.config.tau,
        m.t_end,
        p=problem.config.p,
    )
    row = (res.macro_n, res.micro_n, res.tau, res.t_end,
           res.err_u, res.err_U, res.err_m)
    report = {
        "experiment": "mms",
        "case": m.case,
        "err_u": res.err_u,
        "err_U": res.err_U,
        "err_m": res.err_m,
    }
    artifacts = {
        "mms.csv": _csv(
            ["macro_n", "micro_n", "tau", "t_end", "err_u", "err_U", "err_m"],
            [row],
        )
    }
    return report, artifacts


def run_convergence_experiment(problem: Problem):
    m = problem.config.mms
    case = make_case(m.case)
    rep = run_convergence(
        case,
        mode=m.mode,
        levels=m.levels,
        t_end=m.t_end,
        tau0=m.tau0,
        macro_n0=m.macro_n0,
        micro_n0=m.micro_n0,
        p=problem.config.p,
    )
    rows = [
        (h, rep.errors["u"][i], rep.errors["U"][i], rep.errors["m"][i])
        for i, h in enumerate(rep.h_values)
    ]
    report = {
        "experiment": "convergence",
        "case": m.case,
        "mode": m.mode,
        "slopes": {k: rep.slopes[k] for k in ("u", "U", "m")},
    }
    artifacts = {
        "convergence.csv": _csv(["h", "err_u", "err_U", "err_m"], rows)
    }
    return report, artifacts


def run_probe_sector(problem: Problem):
    cfg = problem.config
    spec = problem.sector_spec()
    op = assemble_coupled(
        problem.state0.u, problem.laws.diffusivity, problem.geom,
        problem.micro, p=cfg.p,
    )
    targets = [("macro", -1, op.macro)]
    targets += [("cell", n, op.cell_operator(n)) for n in problem.probe_nodes()]

    def sweep(target):
        kind, node, target_op = target
        rep = sector_sweep(target_op, spec, seed=cfg.seed)
        return kind, node, rep

    swept = parallel_map(sweep, targets)
    rows = []
    m_est = 0.0
    for kind, node, rep in swept:
        m_est = max(m_est, rep.m_est)
        for r in rep.rows:
            rows.append(
                (kind, node, r.radius, r.ray, r.lam.real, r.lam.imag,
                 r.norm, r.lam_norm, int(r.skipped))
            )
    pair = cfg.probe.node_pair
    lip = resolvent_lipschitz_test(
        pair[0], pair[1], problem.state0.u, problem.laws.diffusivity,
        problem.geom, problem.micro, spec, seed=cfg.seed,
    )
    lip_rows = [(r.radius, r.ray, r.lam.real, r.lam.imag, r.ratio) for r in lip.rows]
    report = {
        "experiment": "probe-sector",
        "m_est": m_est,
        "n_targets": len(targets),
        "lipschitz_band_factor": lip.band_factor,
        "lipschitz_ratio_max": lip.ratio_max,
        "lipschitz_ratio_min": lip.ratio_min,
        "node_distance": lip.distance,
    }
    artifacts = {
        "sector.csv": _csv(
            ["kind", "node", "radius", "ray", "re_lam", "im_lam",
             "resolvent_norm", "scaled_norm", "skipped"],
            rows,
        ),
        "lipschitz.csv": _csv(
            ["radius", "ray", "re_lam", "im_lam", "scaled_ratio"], lip_rows
        ),
    }
    return report, artifacts


def run_probe_rbound(problem: Problem):
    cfg = problem.config
    spec = problem.sector_spec()
    nodes = problem.probe_nodes()
    rep = uniformity_scan(
        problem.state0.u,
        problem.laws.diffusivity,
        problem.geom,
        problem.micro,
        spec,
        nodes=nodes,
        family_size=cfg.probe.family_size,
        n_tuples=cfg.probe.n_tuples,
        seed=cfg.seed,
        mapper=lambda fn, items: iter(parallel_map(fn, list(items))),
    )
    rows = []
    for k, node in enumerate(rep.nodes):
        coord = rep.coords[k]
        rows.append(
            (node, *[float(c) for c in coord], rep.c_values[k], rep.modulus[k])
        )
    coord_names = ["x1", "x2"][: problem.macro.dim]
    report = {
        "experiment": "probe-rbound",
        "c_sup": rep.c_sup,
        "modulus_max": rep.modulus_max,
        "n_nodes": len(rep.nodes),
        "family_size": cfg.probe.family_size,
    }
    artifacts = {
        "rbound.csv": _csv(
            ["node", *coord_names, "c_value", "modulus"], rows
        )
    }
    return report, artifacts


def run_contraction(problem: Problem):
    cfg = problem.config
    pairs, m_traj, rep = contraction_solve(
        problem.state0,
        cfg.t0_window,
        problem.solver,
        problem.laws,
        problem.geom,
        problem.suite,
        rho_ball=cfg.rho_ball,
    )
    rows = []
    for k, (u, U) in enumerate(pairs):
        rows.append(
            (
                k,
                problem.state0.t + k * cfg.tau,
                norm_e1(u, problem.suite),
                norm_e2(U, problem.suite),
                float(m_traj[k].values.min()),
                float(m_traj[k].values.max()),
            )
        )
    report = {
        "experiment": "contraction",
        "accepted_T": rep.accepted_T,
        "windows_tried": rep.windows_tried,
        "gamma_iterations": rep.gamma_iterations,
        "ratios": list(rep.ratios),
        "max_ratio": max(rep.ratios) if rep.ratios else None,
        "rho_ball": rep.rho_ball,
        "first_correction": rep.first_correction,
        "smallness": {
            "f2_sup": rep.smallness.f2_sup,
            "f2_threshold": rep.smallness.f2_threshold,
            "u0_norm": rep.smallness.u0_norm,
            "u0_threshold": rep.smallness.u0_threshold,
            "extra_sup": rep.smallness.extra_sup,
            "extra_threshold": rep.smallness.extra_threshold,
            "extra_ok": rep.smallness.extra_ok,
        },
    }
    artifacts = {
        "window.csv": _csv(
            ["slice", "t", "norm_u", "norm_U", "m_min", "m_max"], rows
        )
    }
    return report, artifacts


_RUNNERS = {
    "simulate": run_simulate,
    "mms": run_mms_experiment,
    "convergence": run_convergence_experiment,
    "probe-sector": run_probe_sector,
    "probe-rbound": run_probe_rbound,
    "contraction": run_contraction,
}


def run_experiment(config: RunConfig, out_dir: Optional[str] = None) -> dict:
    """Execute the configured experiment; write artifacts when asked.

    The returned report always carries the config hash and the artifact
    names; artifact text is included when no directory is given.
    """
    runner = _RUNNERS.get(config.experiment)
    if runner is None:
        raise UnknownExperiment(f"unknown experiment {config.experiment!r}")
    problem = build_problem(config)
    report, artifacts = runner(problem)
    digest = config_hash(config)
    report["config_hash"] = digest
    report["seed"] = config.seed
    report["artifact_names"] = sorted(artifacts)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "config_hash": digest,
            "experiment": config.experiment,
            "seed": config.seed,
            "artifacts": sorted(artifacts),
            "versions": {
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "poroscale": __version__,
            },
            "config": config.model_dump(mode="json"),
        }
        for name, text in artifacts.items():
            (out / name).write_text(text, encoding="utf-8")
        (out / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        report["out_dir"] = str(out)
    else:
        report["artifacts"] = artifacts
    return report
