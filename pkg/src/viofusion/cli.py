"""Command-line client for the odometry service.

The CLI never runs pipeline code itself: each command posts a request to
the HTTP service and renders the response. By default it spins the
service up in-process (no socket, no separate process); pass --server to
talk to a remote instance instead. This keeps one code path for both
local one-shot runs and a shared lab machine.

Domain failures print ``error[<code>]: <message>`` on stderr and exit 1;
a failed gradient check exits 2.
"""

from __future__ import annotations

import asyncio
import json
import sys

import click
import httpx

from .config import Config
from .service.app import create_app

_IN_PROCESS = "http://viofusion.local"


class ServiceClient:
    """Posts JSON to either an in-process ASGI app or a remote server."""

    def __init__(self, server=None):
        self.server = server

    def request(self, method: str, path: str, payload=None):
        if self.server:
            with httpx.Client(base_url=self.server, timeout=None) as client:
                response = client.request(method, path, json=payload)
        else:
            response = asyncio.run(self._in_process(method, path, payload))
        if response.status_code >= 400:
            _fail(response)
        return response.json()

    async def _in_process(self, method, path, payload):
        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url=_IN_PROCESS, timeout=None
        ) as client:
            return await client.request(method, path, json=payload)


def _fail(response):
    try:
        body = response.json()
        error = body["error"]
        message = f"error[{error['code']}]: {error['message']}"
    except Exception:
        message = f"error[http_{response.status_code}]: {response.text.strip()}"
    click.echo(message, err=True)
    sys.exit(1)


def _load_config(ctx, path) -> dict:
    """Read an INI config and apply the global --seed/--precision overrides."""
    try:
        config = Config.from_file(path)
    except FileNotFoundError:
        click.echo(f"error[not_found]: no such config file: {path}", err=True)
        sys.exit(1)
    except Exception as exc:
        code = getattr(exc, "code", "bad_config")
        click.echo(f"error[{code}]: {exc}", err=True)
        sys.exit(1)
    mapping = config.to_mapping()
    seed = ctx.obj.get("seed")
    if seed is not None:
        mapping["train"]["seed"] = seed
        mapping["data"]["seed"] = seed
    precision = ctx.obj.get("precision")
    if precision is not None:
        mapping["train"]["precision"] = precision
    return mapping


def _client(ctx) -> ServiceClient:
    return ServiceClient(ctx.obj.get("server"))


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Remote service URL; default runs the service in-process.")
@click.option("--seed", type=int, default=None,
              help="Override both the train seed and the data seed.")
@click.option("--precision", type=click.Choice(["f32", "f64"]), default=None,
              help="Override the training precision.")
@click.pass_context
def main(ctx, server, seed, precision):
    """Visual-inertial odometry: data synthesis, training, evaluation."""
    ctx.obj = {"server": server, "seed": seed, "precision": precision}


@main.command()
@click.option("--spec", "spec_path", required=True, type=click.Path(),
              help="Config file whose [data] section describes the trajectories.")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="Directory for the manifest and payload.")
@click.pass_context
def synth(ctx, spec_path, out_dir):
    """Generate a deterministic synthetic dataset."""
    payload = {"config": _load_config(ctx, spec_path), "out_dir": out_dir}
    result = _client(ctx).request("POST", "/synth", payload)
    click.echo(
        f"wrote {result['sequences']} sequences "
        f"({result['frames_per_sequence']} frames each) to {result['out_dir']}"
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--resume", default=None, type=click.Path(),
              help="Checkpoint to continue from.")
@click.pass_context
def train(ctx, config_path, data_dir, out_dir, resume):
    """Train the model on a synthesized dataset."""
    payload = {
        "config": _load_config(ctx, config_path),
        "data_dir": data_dir,
        "out_dir": out_dir,
        "resume": resume,
    }
    result = _client(ctx).request("POST", "/train", payload)
    click.echo(f"steps: {result['steps']}")
    if result["initial_loss"] is not None:
        click.echo(f"initial loss: {result['initial_loss']:.6g}")
        click.echo(f"final loss: {result['final_loss']:.6g}")
    click.echo(f"checkpoint: {result['checkpoint']}")
    click.echo(f"log: {result['log']}")


@main.command(name="eval")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--ckpt", required=True, type=click.Path())
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--report", "report_path", required=True, type=click.Path(),
              help="Where to write the JSON report (CSV lands beside it).")
@click.pass_context
def eval_cmd(ctx, config_path, ckpt, data_dir, report_path):
    """Evaluate drift and position error on a dataset."""
    payload = {
        "config": _load_config(ctx, config_path),
        "ckpt": ckpt,
        "data_dir": data_dir,
        "report": report_path,
    }
    result = _client(ctx).request("POST", "/eval", payload)
    click.echo("length_m  t_rel_%     r_rel_deg/100m")
    for length in sorted(result["t_rel_percent"], key=int):
        t = result["t_rel_percent"][length]
        r = result["r_rel_deg_per_100m"][length]
        click.echo(f"{int(length):>8d}  {t:<10.4f}  {r:.4f}")
    click.echo(f"t_rel avg: {result['t_rel_avg']:.4f} %")
    click.echo(f"r_rel avg: {result['r_rel_avg']:.4f} deg/100m")
    click.echo(f"hpe: {result['hpe_m']:.4f} m over {result['frame_count']} frames")
    click.echo(f"report: {result['report_path']}")


@main.command()
@click.option("--ckpt", required=True, type=click.Path(),
              help="Checkpoint; its header supplies the model config.")
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--poses-out", "poses_out", required=True, type=click.Path(),
              help="Output pose file, one 3x4 row-major matrix per line.")
@click.pass_context
def infer(ctx, ckpt, data_dir, poses_out):
    """Predict a trajectory for a single-sequence dataset."""
    payload = {"ckpt": ckpt, "data_dir": data_dir, "poses_out": poses_out}
    result = _client(ctx).request("POST", "/infer", payload)
    click.echo(f"wrote {result['frames']} poses to {result['poses_out']}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.pass_context
def gradcheck(ctx, config_path):
    """Verify analytic gradients against finite differences, block by block."""
    payload = {"config": _load_config(ctx, config_path)}
    result = _client(ctx).request("POST", "/gradcheck", payload)
    click.echo(f"{'block':<20} {'max_rel_err':<14} {'tolerance':<10} status")
    for row in result["rows"]:
        status = "ok" if row["passed"] else "FAIL"
        click.echo(
            f"{row['block']:<20} {row['max_rel_err']:<14.3e} "
            f"{row['tolerance']:<10.0e} {status}"
        )
    if not result["passed"]:
        click.echo("gradient check failed", err=True)
        sys.exit(2)
    click.echo("all gradients verified")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--json", "as_json", is_flag=True, help="Emit the raw report as JSON.")
@click.pass_context
def params(ctx, config_path, as_json):
    """Report per-block parameter counts, MACs, and the fusion comparison."""
    payload = {"config": _load_config(ctx, config_path)}
    result = _client(ctx).request("POST", "/params", payload)
    if as_json:
        click.echo(json.dumps(result, indent=2, sort_keys=True))
        return
    click.echo("parameters by block:")
    for block, count in result["blocks"].items():
        click.echo(f"  {block:<12} {count:>10d}")
    click.echo("multiply-accumulates per frame pair:")
    for block, count in result["macs"].items():
        click.echo(f"  {block:<12} {count:>10d}")
    ema = result["fusion_comparison"]["ema"]
    lstm = result["fusion_comparison"]["lstm"]
    verdict = "<" if ema < lstm else ">="
    click.echo(
        f"fusion comparison: memory attention {ema} {verdict} lstm {lstm} parameters"
    )


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host, port):
    """Run the HTTP service on a socket."""
    import uvicorn

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
