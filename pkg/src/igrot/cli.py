"""Command-line surface: a thin client over the service endpoints.

By default each subcommand drives the FastAPI app in-process (no network);
``--server URL`` points the same client at a remote instance started with
``igrot serve``.  Exit codes: 0 success, 1 validation error, 2 I/O or file
format error.
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; the contract wants 1."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class ServiceClient:
    def __init__(self, server: str | None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # starlette's httpx pin warning
                from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app())

    def post(self, path: str, payload: dict) -> dict:
        response = self._client.post(path, json=payload)
        if response.status_code < 400:
            return response.json()
        try:
            body = response.json()
        except ValueError:
            raise CliError(2, f"{path}: HTTP {response.status_code}") from None
        envelope = body.get("error")
        if isinstance(envelope, dict):
            code = 2 if envelope.get("kind") == "io" else 1
            raise CliError(code, envelope.get("message", "request failed"))
        raise CliError(1, json.dumps(body))


def build_parser() -> _Parser:
    parser = _Parser(prog="igrot", description=__doc__)
    parser.add_argument("--server", default=None, help="remote service URL (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n-queries", type=int, default=32)
    p.add_argument("--pool-size", type=int, default=64)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train a checkpoint")
    p.add_argument("--triplets", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--texts", required=True)
    p.add_argument("--null-text", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (.unck)")
    p.add_argument("--log", default=None, help="metrics log path (default: <out>.log.jsonl)")
    p.add_argument("--mode", default="union", choices=["original", "sum", "union"])
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--batch", type=int, default=32, dest="batch_size")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=1e-2)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--union-layers", type=int, default=2)
    p.add_argument("--union-heads", type=int, default=None)
    p.add_argument("--head-dim", type=int, default=None)
    p.add_argument("--fusion-layers", type=int, default=2)
    p.add_argument("--fusion-heads", type=int, default=8)
    p.add_argument("--ffn-mult", type=int, default=4)
    p.add_argument("--pool", default="mean", choices=["mean", "first"])

    p = sub.add_parser("index", help="build a candidate index from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--null-text", required=True)
    p.add_argument("--mode", required=True, choices=["original", "sum", "union"])
    p.add_argument("--out", required=True, help="index path (.ueb + .meta.json sidecar)")

    p = sub.add_parser("search", help="fuse queries from a triplet manifest and rank candidates")
    p.add_argument("--index", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--triplets", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--texts", required=True)
    p.add_argument("--null-text", required=True)
    p.add_argument("--k", type=int, default=None, help="cutoff (default: full ranking)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True, help="run file path (.tsv)")

    p = sub.add_parser("eval", help="score a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--metrics", required=True, help="comma list, e.g. recall@1,map@10,mdr,map-gtn")
    p.add_argument("--out", required=True, help="report JSON path")

    p = sub.add_parser("gradcheck", help="finite-difference checks for all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--eps", type=float, default=1e-5)

    p = sub.add_parser("report", help="aggregate eval JSONs into a grouped CSV/JSON report")
    p.add_argument("--in", dest="inputs", action="append", required=True, help="eval JSON path")
    p.add_argument("--backbone-tag", action="append", required=True)
    p.add_argument("--mode", action="append", required=True)
    p.add_argument("--out", required=True, help="CSV path (JSON mirror written alongside)")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


def _dispatch(args: argparse.Namespace) -> dict:
    client = ServiceClient(args.server)
    if args.command == "synth":
        return client.post(
            "/synth",
            {
                "seed": args.seed,
                "n_queries": args.n_queries,
                "pool_size": args.pool_size,
                "dim": args.dim,
                "noise": args.noise,
                "out_dir": args.out,
            },
        )
    if args.command == "train":
        return client.post(
            "/train",
            {
                "triplets": args.triplets,
                "images": args.images,
                "texts": args.texts,
                "null_text": args.null_text,
                "out": args.out,
                "log": args.log,
                "mode": args.mode,
                "epochs": args.epochs,
                "batch_size": args.batch_size,
                "lr": args.lr,
                "weight_decay": args.weight_decay,
                "tau": args.tau,
                "seed": args.seed,
                "union_layers": args.union_layers,
                "union_heads": args.union_heads,
                "head_dim": args.head_dim,
                "fusion_layers": args.fusion_layers,
                "fusion_heads": args.fusion_heads,
                "ffn_mult": args.ffn_mult,
                "pool": args.pool,
            },
        )
    if args.command == "index":
        return client.post(
            "/index",
            {
                "checkpoint": args.checkpoint,
                "images": args.images,
                "null_text": args.null_text,
                "mode": args.mode,
                "out": args.out,
            },
        )
    if args.command == "search":
        return client.post(
            "/search",
            {
                "index": args.index,
                "checkpoint": args.checkpoint,
                "triplets": args.triplets,
                "images": args.images,
                "texts": args.texts,
                "null_text": args.null_text,
                "k": args.k,
                "threads": args.threads,
                "out": args.out,
            },
        )
    if args.command == "eval":
        metrics = [m for m in args.metrics.split(",") if m.strip()]
        return client.post(
            "/eval",
            {"run": args.run, "qrels": args.qrels, "metrics": metrics, "out": args.out},
        )
    if args.command == "gradcheck":
        return client.post(
            "/gradcheck", {"seed": args.seed, "tol": args.tol, "eps": args.eps}
        )
    if args.command == "report":
        if not (len(args.inputs) == len(args.backbone_tag) == len(args.mode)):
            raise CliError(1, "--in, --backbone-tag and --mode must be given equally often")
        inputs = [
            {"path": path, "backbone_tag": tag, "mode": mode}
            for path, tag, mode in zip(args.inputs, args.backbone_tag, args.mode)
        ]
        return client.post("/report", {"inputs": inputs, "out": args.out})
    raise CliError(1, f"unknown command {args.command!r}")


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0
    try:
        result = _dispatch(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    print(json.dumps(result, indent=2, sort_keys=True))
    if args.command == "gradcheck" and not result.get("passed", False):
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
