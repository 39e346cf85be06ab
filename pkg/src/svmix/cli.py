"""Operator command line: a thin client over the HTTP service.

Without --server every command mounts the service in-process and talks
to it through an ASGI transport, so the CLI works standalone on one
machine; with --server it speaks to a remote instance and polls job
endpoints for completion.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import httpx


def _make_client(server: str | None):
    """(client, in_process) pair; in-process clients can block on wait=true."""
    if server:
        return httpx.Client(base_url=server, timeout=60.0), False
    from fastapi.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app()), True


def _print_validation_error(response: httpx.Response) -> None:
    try:
        detail = response.json()["detail"]
    except Exception:
        print(response.text, file=sys.stderr)
        return
    if isinstance(detail, str):
        print(f"error: {detail}", file=sys.stderr)
        return
    for item in detail:
        loc = ".".join(str(part) for part in item.get("loc", []) if part != "body")
        print(f"config error at {loc}: {item.get('msg')}", file=sys.stderr)


def _load_config(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        print(f"error: config file not found: {path}", file=sys.stderr)
        raise SystemExit(2)
    except json.JSONDecodeError as exc:
        print(f"error: config file is not valid JSON: {exc}", file=sys.stderr)
        raise SystemExit(2)


def _wait_for_job(client: httpx.Client, run_id: str, poll_seconds: float = 2.0) -> dict:
    last = -1
    while True:
        info = client.get(f"/runs/{run_id}").json()
        if info["status"] in ("succeeded", "failed"):
            return info
        if info["progress_done"] != last:
            last = info["progress_done"]
            print(f"  episode {info['progress_done']}/{info['progress_total']}", file=sys.stderr)
        time.sleep(poll_seconds)


def _parse_floats(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    client, in_process = _make_client(args.server)
    seeds = [args.seed] if args.seed is not None else config.get("seeds", [0])
    failures = 0
    for seed in seeds:
        body = {"config": config, "seed": seed, "out_dir": args.out}
        response = client.post("/runs", params={"wait": in_process}, json=body)
        if response.status_code == 422:
            _print_validation_error(response)
            return 2
        if response.status_code >= 400:
            print(f"error: {response.text}", file=sys.stderr)
            return 1
        info = response.json()
        if not in_process:
            print(f"run {info['run_id']} submitted (seed {seed})", file=sys.stderr)
            info = _wait_for_job(client, info["run_id"])
        if info["status"] != "succeeded":
            print(f"run failed (seed {seed}): {info['error']}", file=sys.stderr)
            failures += 1
            continue
        print(json.dumps({"seed": seed, **info["result"]}, indent=2))
    return 1 if failures else 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    client, _ = _make_client(args.server)
    body = {
        "config": config,
        "checkpoint_path": args.checkpoint,
        "episodes": args.episodes,
        "seed": args.seed,
        "dump_path": args.dump,
    }
    response = client.post("/evaluate", json=body)
    if response.status_code == 422:
        _print_validation_error(response)
        return 2
    if response.status_code >= 400:
        print(f"error: {response.text}", file=sys.stderr)
        return 1
    print(json.dumps(response.json(), indent=2))
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    client, _ = _make_client(args.server)
    body: dict = {
        "coeffs": _parse_floats(args.coeffs),
        "p": args.p,
        "variant": args.variant,
        "mc_samples": args.mc_samples,
        "seed": args.seed,
    }
    if args.graph.startswith("complete:"):
        body["complete_n"] = int(args.graph.split(":", 1)[1])
    else:
        body["graph"] = json.loads(Path(args.graph).read_text(encoding="utf-8"))
    response = client.post("/analyze", json=body)
    if response.status_code == 422:
        _print_validation_error(response)
        return 2
    if response.status_code >= 400:
        print(f"error: {response.text}", file=sys.stderr)
        return 1
    report = response.json()
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text)
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    client, _ = _make_client(args.server)
    body: dict = {"tol_scale": args.tol_scale}
    if args.checks:
        body["checks"] = [name.strip() for name in args.checks.split(",")]
    response = client.post("/verify", json=body)
    if response.status_code >= 400:
        print(f"error: {response.text}", file=sys.stderr)
        return 1
    report = response.json()
    for check in report["checks"]:
        flag = "PASS" if check["passed"] else "FAIL"
        print(f"{flag} {check['name']}: measured={check['measured']:.6g} "
              f"tolerance={check['tolerance']:.6g} ({check['detail']})")
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=2), encoding="utf-8")
    if not report["passed"]:
        print(f"FAILED checks: {', '.join(report['failed'])}", file=sys.stderr)
        return 1
    print("all checks passed")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    client, in_process = _make_client(args.server)
    body = {
        "config": config,
        "param": args.param,
        "values": _parse_floats(args.values),
        "out_root": args.out,
    }
    response = client.post("/sweeps", params={"wait": in_process}, json=body)
    if response.status_code == 422:
        _print_validation_error(response)
        return 2
    if response.status_code >= 400:
        print(f"error: {response.text}", file=sys.stderr)
        return 1
    info = response.json()
    if not in_process:
        print(f"sweep {info['run_id']} submitted", file=sys.stderr)
        info = _wait_for_job(client, info["run_id"])
    if info["status"] != "succeeded":
        print(f"sweep failed: {info['error']}", file=sys.stderr)
        return 1
    print(json.dumps(info["result"], indent=2))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(max_workers=args.workers), host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svmix",
        description="Stochastic value-mixing MARL: train, evaluate, analyze, verify, sweep.",
    )
    parser.add_argument("--server", default=None, help="remote service URL (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run training for one or all configured seeds")
    train.add_argument("-c", "--config", required=True, help="run config JSON")
    train.add_argument("--seed", type=int, default=None, help="override: train this seed only")
    train.add_argument("--out", default=None, help="output directory root")
    train.set_defaults(fn=cmd_train)

    evaluate = sub.add_parser("eval", help="deterministically evaluate a checkpoint")
    evaluate.add_argument("-c", "--config", required=True)
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--episodes", type=int, default=5)
    evaluate.add_argument("--seed", type=int, default=0)
    evaluate.add_argument("--dump", default=None, help="write a JSONL trajectory here")
    evaluate.set_defaults(fn=cmd_eval)

    analyze = sub.add_parser("analyze", help="spectral/full-rank/unbiasedness report")
    analyze.add_argument("--graph", required=True, help='graph JSON path or "complete:N"')
    analyze.add_argument("--coeffs", required=True, help="comma-separated filter taps h0,h1,...")
    analyze.add_argument("--p", type=float, default=0.7)
    analyze.add_argument("--variant", choices=["laplacian", "adjacency"], default="laplacian")
    analyze.add_argument("--mc-samples", type=int, default=20_000)
    analyze.add_argument("--seed", type=int, default=0)
    analyze.add_argument("--out", default=None, help="also write the JSON report here")
    analyze.set_defaults(fn=cmd_analyze)

    verify = sub.add_parser("verify", help="run the independent-oracle suite")
    verify.add_argument("--tol-scale", type=float, default=1.0,
                        help="scale statistical tolerances (0 makes them unattainable)")
    verify.add_argument("--checks", default=None, help="comma-separated subset of check names")
    verify.add_argument("--json", default=None, help="write the JSON report here")
    verify.set_defaults(fn=cmd_verify)

    sweep = sub.add_parser("sweep", help="vary one of p/K/F across values and seeds")
    sweep.add_argument("-c", "--config", required=True)
    sweep.add_argument("--param", choices=["p", "K", "F"], required=True)
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--out", default=None, help="sweep output root")
    sweep.set_defaults(fn=cmd_sweep)

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8321)
    serve.add_argument("--workers", type=int, default=2, help="concurrent training jobs")
    serve.set_defaults(fn=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
