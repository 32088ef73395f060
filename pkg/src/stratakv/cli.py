"""Command-line client for the stratakv service.

By default the CLI talks to an in-process instance of the service over
an ASGI transport, so no server needs to be running; pass ``--server``
to target a live deployment instead. Exit codes: 0 ok, 1 verification
failure, 2 invariant violation, 3 IO or transport error.

Examples:
    stratakv bench run --target both --inserts 100000 --seed 1 --verify --out metrics.csv
    stratakv bench audit --store /var/lib/stratakv/mystore
    stratakv bench crash-test --kill-points all
    stratakv calc lfs-rho --mu 0.8
    stratakv calc cow-slowdown --b 16 --rho 5
    stratakv serve --port 8000
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

import httpx

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_INVARIANT = 2
EXIT_IO = 3


class _InProcessTransport(httpx.BaseTransport):
    """Drive an ASGI app from a synchronous httpx.Client."""

    def __init__(self, app):
        self._asgi = httpx.ASGITransport(app=app)
        self._loop = asyncio.new_event_loop()

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        async def roundtrip():
            response = await self._asgi.handle_async_request(request)
            body = await response.aread()
            return httpx.Response(response.status_code,
                                  headers=response.headers, content=body)
        return self._loop.run_until_complete(roundtrip())

    def close(self) -> None:
        self._loop.run_until_complete(self._asgi.aclose())
        self._loop.close()


def _client(args) -> httpx.Client:
    if getattr(args, "server", None):
        return httpx.Client(base_url=args.server, timeout=None)
    from .service import create_app
    app = create_app(getattr(args, "data_dir", None))
    return httpx.Client(transport=_InProcessTransport(app),
                        base_url="http://stratakv", timeout=None)


def _fail_io(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return EXIT_IO


def cmd_serve(args) -> int:
    import uvicorn
    from .service import create_app
    uvicorn.run(create_app(args.data_dir), host=args.host, port=args.port)
    return EXIT_OK


def cmd_bench_run(args) -> int:
    payload = {
        "target": args.target,
        "inserts": args.inserts,
        "seed": args.seed,
        "verify": args.verify,
        "backend": args.backend,
    }
    if args.window:
        payload["window"] = args.window
    if args.clone_interval:
        payload["clone_interval"] = args.clone_interval
    if args.range_interval:
        payload["range_query_interval"] = args.range_interval
    if args.config:
        from .config import load_config
        config = load_config(args.config)
        payload["block_size"] = config.block_size
        payload["flush_entries"] = config.flush_entries
    try:
        with _client(args) as client:
            resp = client.post("/bench/run", json=payload)
            resp.raise_for_status()
    except httpx.HTTPError as exc:
        return _fail_io(str(exc))
    body = resp.json()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(body["csv"])
    if args.plot_data:
        with open(args.plot_data, "w") as fh:
            fh.write(body.get("plot") or "")
    for summary in body["summaries"]:
        print(f"[{summary['target']}] reads={summary['blocks_read']} "
              f"writes={summary['blocks_written']} "
              f"seq={summary['sequential_fraction']:.3f} "
              f"dup={summary['dup_factor']:.3f} "
              f"elapsed={summary['elapsed_seconds']:.1f}s")
        for miss in summary["mismatches"][:5]:
            print(f"  mismatch: {miss}", file=sys.stderr)
        for violation in summary["audit_violations"][:5]:
            print(f"  violation: {violation}", file=sys.stderr)
    return body["exit_code"]


def cmd_bench_audit(args) -> int:
    try:
        with _client(args) as client:
            resp = client.post("/bench/audit", json={"store_dir": args.store})
            resp.raise_for_status()
    except httpx.HTTPError as exc:
        return _fail_io(str(exc))
    violations = resp.json()["violations"]
    if violations:
        for v in violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_INVARIANT
    print("audit clean")
    return EXIT_OK


def cmd_bench_crash_test(args) -> int:
    payload = {"inserts": args.inserts, "seed": args.seed,
               "kill_points": args.kill_points}
    try:
        with _client(args) as client:
            resp = client.post("/bench/crash-test", json=payload)
            resp.raise_for_status()
    except httpx.HTTPError as exc:
        return _fail_io(str(exc))
    body = resp.json()
    print(f"commits={body['commits_observed']} runs={body['runs']} "
          f"failures={len(body['failures'])}")
    for failure in body["failures"][:10]:
        print(f"  {failure}", file=sys.stderr)
    return EXIT_OK if body["ok"] else EXIT_INVARIANT


def _cmd_calc(args, path: str, params: dict) -> int:
    try:
        with _client(args) as client:
            resp = client.get(path, params=params)
    except httpx.HTTPError as exc:
        return _fail_io(str(exc))
    if resp.status_code != 200:
        detail = resp.json().get("detail", resp.text)
        print(f"error: {detail}", file=sys.stderr)
        return EXIT_IO
    value = resp.json()["value"]
    print(json.dumps(value))
    return EXIT_OK


def cmd_calc_lfs_rho(args) -> int:
    return _cmd_calc(args, "/calc/lfs-rho", {"mu": args.mu})


def cmd_calc_cow_slowdown(args) -> int:
    return _cmd_calc(args, "/calc/cow-slowdown", {"b": args.b, "rho": args.rho})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stratakv", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--server", help="URL of a running service; default runs in-process")
    parser.add_argument("--data-dir", help="data directory for the in-process service")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(func=cmd_serve)

    bench = sub.add_parser("bench", help="benchmark and verification harness")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)

    run = bench_sub.add_parser("run", help="run the insert/clone/range workload")
    run.add_argument("--target", choices=("sda", "cow", "both"), default="sda")
    run.add_argument("--inserts", type=int, default=100_000)
    run.add_argument("--seed", type=int, default=1)
    run.add_argument("--verify", action="store_true",
                     help="shadow-execute on the oracle and cross-check queries")
    run.add_argument("--config", help="TOML store config file")
    run.add_argument("--backend", choices=("ram", "file"), default="ram")
    run.add_argument("--window", type=int, help="metrics row interval (inserts)")
    run.add_argument("--clone-interval", type=int, dest="clone_interval")
    run.add_argument("--range-interval", type=int, dest="range_interval")
    run.add_argument("--out", help="write metrics CSV here")
    run.add_argument("--plot-data", dest="plot_data",
                     help="write derived plot series CSV here")
    run.set_defaults(func=cmd_bench_run)

    audit = bench_sub.add_parser("audit", help="audit a store directory")
    audit.add_argument("--store", required=True)
    audit.set_defaults(func=cmd_bench_audit)

    crash = bench_sub.add_parser("crash-test",
                                 help="kill-point sweep over commit boundaries")
    crash.add_argument("--kill-points", default="all",
                       choices=("all", "pre_slot", "mid_slot", "pre_epoch", "post_epoch"))
    crash.add_argument("--inserts", type=int, default=10_000)
    crash.add_argument("--seed", type=int, default=7)
    crash.set_defaults(func=cmd_bench_crash_test)

    calc = sub.add_parser("calc", help="analytic cost formulas")
    calc_sub = calc.add_subparsers(dest="calc_command", required=True)

    rho = calc_sub.add_parser("lfs-rho", help="log-cleaning write amplification")
    rho.add_argument("--mu", required=True,
                     help="mean utilization of cleaned segments, in [0, 1)")
    rho.set_defaults(func=cmd_calc_lfs_rho)

    slow = calc_sub.add_parser("cow-slowdown",
                               help="CoW-vs-write-optimized slowdown factor")
    slow.add_argument("--b", required=True, help="entries per block")
    slow.add_argument("--rho", required=True, help="log write amplification")
    slow.set_defaults(func=cmd_calc_cow_slowdown)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
