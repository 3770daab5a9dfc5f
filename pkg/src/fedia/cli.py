"""Thin command-line client for the experiment service.

By default the CLI drives the FastAPI app in-process (no network); pass
``--server URL`` to target a running instance instead. Exit codes: 0 on
success, 1 on validation problems, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _make_client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        # starlette 1.3 warns (as a UserWarning) about the not-yet-released httpx2
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient

    from .service import create_app

    return TestClient(create_app(), raise_server_exceptions=False)


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}", EXIT_VALIDATION) from None
    except json.JSONDecodeError as exc:
        raise CliError(
            f"config is not valid JSON: {path}:{exc.lineno}: {exc.msg}", EXIT_VALIDATION
        ) from None


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _print_validation_detail(detail) -> None:
    if isinstance(detail, list):  # pydantic field errors
        for item in detail:
            loc = ".".join(str(p) for p in item.get("loc", []) if p != "body")
            print(f"error: {loc}: {item.get('msg')}", file=sys.stderr)
    else:
        print(f"error: {detail}", file=sys.stderr)


def _post(client: httpx.Client, path: str, payload: dict) -> tuple[int, dict | None]:
    try:
        response = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        return _fail(f"cannot reach server: {exc}", EXIT_RUNTIME), None
    if response.status_code in (400, 422):
        _print_validation_detail(response.json().get("detail"))
        return EXIT_VALIDATION, None
    if response.status_code != 200:
        detail = ""
        try:
            detail = response.json().get("detail", "")
        except ValueError:
            detail = response.text
        return _fail(f"server error ({response.status_code}): {detail}", EXIT_RUNTIME), None
    return EXIT_OK, response.json()


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    payload = {
        "config": config,
        "out_dir": str(Path(args.out).resolve()),
        "baseline_summary": str(Path(args.baseline).resolve()) if args.baseline else None,
    }
    with _make_client(args.server) as client:
        code, body = _post(client, "/runs", payload)
    if code != EXIT_OK:
        return code
    print(f"completed {body['rounds']} rounds -> {body['out_dir']}")
    header = f"{'domain':>8} {'mean%':>8} {'std%':>8} {'delta%':>8}"
    print(header)
    for row in body["summary"]:
        delta = "" if row["delta_pct"] is None else f"{row['delta_pct']:+.2f}"
        print(f"{row['domain']:>8} {row['mean_pct']:>8.2f} {row['std_pct']:>8.2f} {delta:>8}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    payload = {
        "config": config,
        "out_dir": str(Path(args.out).resolve()),
        "rho_values": args.rho,
        "beta_values": args.beta,
    }
    with _make_client(args.server) as client:
        code, body = _post(client, "/sweeps", payload)
    if code != EXIT_OK:
        return code
    print(f"sweep finished: {body['sweep_csv']}")
    failed = [c for c in body["cells"] if c["status"] != "completed"]
    if body["best"]:
        best = body["best"]
        print(f"best cell: rho={best['rho']:g} beta={best['beta']:g} avg={best['avg_pct']:.2f}%")
    if failed:
        print(f"{len(failed)} cell(s) failed; see sweep.csv", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_partition(args: argparse.Namespace) -> int:
    payload = {
        "nodes_path": str(Path(args.nodes).resolve()),
        "edges_path": str(Path(args.edges).resolve()),
        "plan": args.plan,
        "seed": args.seed,
        "out_dir": str(Path(args.out).resolve()),
    }
    with _make_client(args.server) as client:
        code, body = _post(client, "/partitions", payload)
    if code != EXIT_OK:
        return code
    print(f"wrote {body['total_clients']} client datasets -> {args.out}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("fedia.service:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedia", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("--config", required=True, help="path to experiment JSON")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--baseline", help="summary.csv of a baseline run for delta columns")
    run.add_argument("--server", help="remote service URL (default: in-process)")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="grid-sweep rho and beta")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--rho", type=float, nargs="+", default=[0.1, 0.3, 0.5, 0.7, 0.9])
    sweep.add_argument("--beta", type=float, nargs="+", default=[0.1, 0.3, 0.5, 0.7, 0.9])
    sweep.add_argument("--server", help="remote service URL (default: in-process)")
    sweep.set_defaults(func=cmd_sweep)

    part = sub.add_parser("partition", help="split a CSV export into client datasets")
    part.add_argument("--nodes", required=True)
    part.add_argument("--edges", required=True)
    part.add_argument("--plan", required=True, help="domain ratios, e.g. 1:10:1:1:1:1x2")
    part.add_argument("--seed", type=int, default=0)
    part.add_argument("--out", required=True)
    part.add_argument("--server", help="remote service URL (default: in-process)")
    part.set_defaults(func=cmd_partition)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(str(exc), exc.code)
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
