"""Command-line entry point: ``feddmvc {run,synth,eval}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .datasets import load_dataset, read_labels, write_dataset, write_labels
from .errors import DatasetError, FedDMVCError
from .federation import ABLATIONS, RunConfig, SynthConfig, partition, run, synth
from .metrics import evaluate
from .numerics import RngStream

log = logging.getLogger("feddmvc")

NMI_NORMALIZATION = "arithmetic"


def _setup_logging() -> None:
    level = os.environ.get("FEDDMVC_LOG", "error").strip().upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        level = "ERROR"
    logging.basicConfig(level=getattr(logging, level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _dims(text: str):
    try:
        dims = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not dims:
        raise argparse.ArgumentTypeError("need at least one view dimension")
    return dims


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="feddmvc", description="Cluster view-partitioned data across federated clients.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train on a dataset directory and write metrics.json")
    r.add_argument("--data", required=True, help="dataset directory (meta.json + view_<m>.csv)")
    r.add_argument("--clusters", type=int, required=True)
    r.add_argument("--epochs", type=int, default=10)
    r.add_argument("--gamma", type=float, default=0.1)
    r.add_argument("--local-iters", type=int, default=100)
    r.add_argument("--extension-iters", type=int, default=1)
    r.add_argument("--ridge-eps", type=float, default=1e-6)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--ablate", choices=ABLATIONS, default="none")
    r.add_argument("--concurrent", action="store_true", help="run clients on a thread pool")
    r.add_argument("--out", default="metrics.json")
    r.add_argument("--pred", default=None, help="where to write pred.csv (default: next to --out)")

    s = sub.add_parser("synth", help="generate a partitioned synthetic dataset")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--views", type=int, default=3)
    s.add_argument("--clusters", type=int, default=4)
    s.add_argument("--latent-dim", type=int, default=5)
    s.add_argument("--view-dims", type=_dims, default=(12, 10, 8))
    s.add_argument("--noise", type=float, default=1.0)
    s.add_argument("--separation", type=float, default=6.0)
    s.add_argument("--overlap", type=float, default=0.5)
    s.add_argument("--dirichlet-alpha", type=float, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="score a prediction file against labels")
    e.add_argument("--pred", required=True)
    e.add_argument("--labels", required=True)
    return p


def metrics_report(result, config: RunConfig) -> dict:
    final = result.reports[-1].global_metrics or {}
    return {
        "acc": final.get("acc"),
        "nmi": final.get("nmi"),
        "ari": final.get("ari"),
        "nmi_normalization": NMI_NORMALIZATION,
        "num_samples": int(result.ids.size),
        "config": config.to_dict(),
        "history": [rep.to_dict() for rep in result.reports],
    }


def cmd_run(args) -> int:
    data = load_dataset(args.data)
    config = RunConfig(
        n_clusters=args.clusters, epochs=args.epochs, local_iters=args.local_iters,
        extension_iters=args.extension_iters, gamma=args.gamma, ridge_eps=args.ridge_eps,
        seed=args.seed, ablation=args.ablate, concurrent=args.concurrent,
    )
    result = run(data.clients, config, labels=data.labels, label_ids=data.ids)
    report = metrics_report(result, config)
    # scheduling does not change the numbers, so keep it out of the echo
    report["config"].pop("concurrent")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    pred = Path(args.pred) if args.pred else out.with_name("pred.csv")
    write_labels(pred, result.ids, result.labels)
    log.info("wrote %s and %s", out, pred)
    print(json.dumps({k: report[k] for k in ("acc", "nmi", "ari")}))
    return 0


def cmd_synth(args) -> int:
    sc = SynthConfig(
        n=args.n, n_views=args.views, n_clusters=args.clusters, latent_dim=args.latent_dim,
        view_dims=tuple(args.view_dims), noise=args.noise, separation=args.separation,
    )
    root = RngStream(args.seed, 7)
    data = synth(sc, root.child(0))
    clients, H = partition(data, args.overlap, root.child(1), args.dirichlet_alpha)
    write_dataset(args.out, clients, labels=data.labels, label_ids=data.ids)
    log.info("wrote %d samples, %d complete, to %s", data.n, int(H.all(axis=1).sum()), args.out)
    return 0


def cmd_eval(args) -> int:
    pred = read_labels(Path(args.pred))
    truth = read_labels(Path(args.labels))
    if not pred:
        raise DatasetError(f"{args.pred}: no predictions")
    if set(pred) != set(truth):
        raise FedDMVCError("prediction and label files cover different sample ids")
    ids = sorted(pred)
    scores = evaluate(np.array([pred[i] for i in ids]), np.array([truth[i] for i in ids]))
    scores["nmi_normalization"] = NMI_NORMALIZATION
    print(json.dumps(scores, sort_keys=True))
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    handlers = {"run": cmd_run, "synth": cmd_synth, "eval": cmd_eval}
    try:
        return handlers[args.command](args)
    except (FedDMVCError, OSError) as e:
        print(f"feddmvc {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
