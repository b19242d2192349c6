"""Command-line client.

Each experiment subcommand builds a RunConfig (defaults, optionally a
JSON config file, plus flag overrides) and POSTs it to the HTTP service:
in-process by default, or to a running server via --server.  Exit codes
separate failure kinds: 1 configuration, 2 numerical, 3 hypothesis-gate
refusal.
"""

from __future__ import annotations

import asyncio
import json
import sys
from typing import Optional

import click
import httpx

from .config import RunConfig, load_config
from .service import create_app

EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_GATE = 3


def _build_config(config_path: Optional[str], experiment: str, seed: Optional[int],
                  tau: Optional[float], t_end: Optional[float],
                  dump_matrices: bool) -> RunConfig:
    try:
        cfg = load_config(config_path) if config_path else RunConfig()
        data = cfg.model_dump(mode="json")
        data["experiment"] = experiment
        if seed is not None:
            data["seed"] = seed
        if tau is not None:
            data["tau"] = tau
        if t_end is not None:
            data["t_end"] = t_end
        if dump_matrices:
            data["dump_matrices"] = True
        return RunConfig.model_validate(data)
    except (ValueError, OSError) as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)


def _post_in_process(payload: dict) -> httpx.Response:
    async def go():
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://poroscale.local"
        ) as client:
            return await client.post("/experiments/run", json=payload, timeout=None)

    return asyncio.run(go())


def _dispatch(cfg: RunConfig, out: Optional[str], server: Optional[str]) -> None:
    payload = {"config": cfg.model_dump(mode="json"), "out_dir": out}
    if server:
        try:
            resp = httpx.post(
                server.rstrip("/") + "/experiments/run", json=payload, timeout=None
            )
        except httpx.HTTPError as exc:
            click.echo(f"server unreachable: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)
    else:
        resp = _post_in_process(payload)

    if resp.status_code == 200:
        click.echo(json.dumps(resp.json(), indent=2, sort_keys=True))
        return
    try:
        detail = resp.json().get("detail", {})
    except ValueError:
        detail = {"message": resp.text}
    click.echo(json.dumps({"status": resp.status_code, "detail": detail},
                          indent=2, sort_keys=True), err=True)
    if resp.status_code in (400, 422):
        sys.exit(EXIT_CONFIG)
    if resp.status_code == 409:
        sys.exit(EXIT_GATE)
    sys.exit(EXIT_NUMERICAL)


def _experiment_command(name: str):
    @click.option("--config", "config_path", type=click.Path(),
                  default=None, help="JSON run configuration.")
    @click.option("--out", type=click.Path(), default=None,
                  help="Directory for CSV artifacts and the manifest.")
    @click.option("--seed", type=int, default=None, help="Override the RNG seed.")
    @click.option("--tau", type=float, default=None, help="Override the time step.")
    @click.option("--t-end", type=float, default=None, help="Override the horizon.")
    @click.option("--dump-matrices", is_flag=True, default=False,
                  help="Also dump operator triplets (simulate).")
    @click.option("--server", default=None,
                  help="Base URL of a running service; in-process when absent.")
    def command(config_path, out, seed, tau, t_end, dump_matrices, server):
        cfg = _build_config(config_path, name, seed, tau, t_end, dump_matrices)
        _dispatch(cfg, out, server)

    command.__name__ = name.replace("-", "_")
    return command


@click.group()
def main():
    """Two-scale porous-media simulator and operator probes."""


for _name, _help in [
    ("simulate", "March the coupled system with implicit Euler."),
    ("mms", "Single manufactured-solution error measurement."),
    ("convergence", "Manufactured-solution refinement ladder."),
    ("probe-sector", "Resolvent sweep over a sector plus Lipschitz decay."),
    ("probe-rbound", "Randomized-sum bound estimates per cell."),
    ("contraction", "Window iteration with the frozen-coefficient map."),
]:
    main.command(name=_name, help=_help)(_experiment_command(_name))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
