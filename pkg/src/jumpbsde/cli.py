"""Thin command-line client for the service.

    jumpbsde solve         --config cfg.json [--out DIR] [--server URL]
    jumpbsde cascade-trace --config cfg.json [--out DIR] [--server URL]
    jumpbsde validate      --config cfg.json [--out DIR] [--server URL]
    jumpbsde optimize      --config cfg.json [--out DIR] [--server URL]
    jumpbsde serve         [--host H] [--port P]

Without --server the app is driven in-process (no network); with it the
same requests go to a remote instance.  Artifacts are written atomically
(temp file + rename) and byte-identically for identical config + seed.

Exit codes: 0 ok, 2 config error, 3 numerical-convergence error,
4 validation failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_VALIDATION = 4


def _client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import app

    return TestClient(app)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _write_artifacts(out_dir: str, body: dict, formats: list[str]) -> None:
    if "json" in formats:
        _atomic_write(os.path.join(out_dir, "summary.json"),
                      _dump_json(body.get("summary", {})))
        for key in ("trace", "report"):
            if body.get(key) is not None:
                _atomic_write(os.path.join(out_dir, f"{key}.json"),
                              _dump_json(body[key]))
    if "csv" in formats:
        for name, text in (body.get("csv") or {}).items():
            _atomic_write(os.path.join(out_dir, name), text)


def _run_subcommand(args) -> int:
    try:
        with open(args.config) as handle:
            config = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    payload = {"config": config}
    if args.command == "optimize" and args.wealth is not None:
        payload["x"] = args.wealth

    with _client(args.server) as client:
        response = client.post(f"/{args.command}", json=payload)

    if response.status_code == 200:
        body = response.json()
        out_dir = args.out or config.get("output", {}).get("dir", "out")
        formats = config.get("output", {}).get("formats", ["csv", "json"])
        _write_artifacts(out_dir, body, formats)
        summary = body.get("summary", {})
        for key, value in summary.items():
            print(f"{key}: {value}")
        if summary.get("heuristic"):
            print("warning: N_override below the sufficient splitting "
                  "threshold; results are heuristic", file=sys.stderr)
        if args.command == "validate" and not summary.get("passed", False):
            return EXIT_VALIDATION
        return EXIT_OK

    try:
        detail = response.json().get("detail", {})
    except ValueError:
        detail = {}
    kind = detail.get("kind", "") if isinstance(detail, dict) else ""
    message = detail.get("message", detail) if isinstance(detail, dict) else detail
    print(f"error ({response.status_code}): {message}", file=sys.stderr)
    if response.status_code in (400, 422):
        return EXIT_CONFIG
    if kind == "convergence" or response.status_code == 409:
        return EXIT_CONVERGENCE
    return EXIT_CONVERGENCE


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="jumpbsde", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("solve", "cascade-trace", "validate", "optimize"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the run config JSON")
        p.add_argument("--out", default=None, help="artifact directory (default: config output.dir)")
        p.add_argument("--server", default=None, help="remote service URL (default: in-process)")
        if name == "optimize":
            p.add_argument("--wealth", type=float, default=None,
                           help="initial wealth x (default: config optimize.x)")

    serve = sub.add_parser("serve")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)

    args = parser.parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service import app

        uvicorn.run(app, host=args.host, port=args.port)
        return EXIT_OK
    return _run_subcommand(args)


if __name__ == "__main__":
    sys.exit(main())
