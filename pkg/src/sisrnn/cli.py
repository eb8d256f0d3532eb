"""Command line: ``sisrnn {train,eval,sample,gradcheck,posterior}``.

Exit codes: 0 success, 1 invalid input, 2 numeric or runtime failure,
3 gradient check above tolerance.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .analysis import bimodality_ratio, generate, gradcheck_report, leading_projection, posterior_samples
from .config import ConfigError, datasets_from_config, parse_config
from .data import IdxError, SequenceDataset, export_csv, import_csv
from .distributions import RngState
from .numerics import NumericError
from .training import CheckpointError, evaluate_nll, load_checkpoint, read_metrics, train

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sisrnn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write metrics, checkpoint and bound curve")
    t.add_argument("--config", help="key = value config file (defaults when omitted)")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one setting")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--quiet", action="store_true")

    e = sub.add_parser("eval", help="bound-based test NLL of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", default="test",
                   help="'train' or 'test' (rebuilt from the checkpoint config) or a seq_id,t,dim,value CSV")
    e.add_argument("--K", type=_nonneg, default=None, help="mixture size (default: the config's k_max)")
    e.add_argument("--n-z", type=_positive, default=1)
    e.add_argument("--seed", type=int, default=12345)
    e.add_argument("--out", help="write per-sequence NLL to this CSV")

    s = sub.add_parser("sample", help="ancestral samples from the generative model")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("-n", type=_positive, required=True)
    s.add_argument("-T", type=_positive, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=".", help="directory for samples.csv")

    g = sub.add_parser("gradcheck", help="finite-difference check of the full bound at tiny size")
    g.add_argument("--config")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--corrupt", choices=["gru", "prior", "encoder", "decoder"], help=argparse.SUPPRESS)

    q = sub.add_parser("posterior", help="z_1 posterior samples for an ambiguous first input")
    q.add_argument("--checkpoint", required=True)
    q.add_argument("-n", type=int, required=True)
    q.add_argument("--x1", default="0", help="first observation, comma separated or one broadcast value")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", default=".", help="directory for posterior.csv and posterior_hist.svg")
    return p


def _say(*parts):
    print(*parts, flush=True)


def cmd_train(args) -> int:
    cfg = parse_config(args.config, args.set)
    train_set, test_set = datasets_from_config(cfg)
    progress = None if args.quiet else (
        lambda r: _say(f"epoch {r['epoch']:>4} K={r['K']:<3} beta={float(r['beta']):.3f} "
                       f"train={float(r['train_bound']):.4f} eval={float(r['eval_bound']):.4f}"))
    result = train(cfg, train_set, test_set, out_dir=args.out, progress=progress)
    from .plots import bound_curve

    bound_curve(read_metrics(os.path.join(args.out, "metrics.csv")), os.path.join(args.out, "bound_curve.svg"))
    _say(f"checkpoint: {result.checkpoint_path}")
    return EXIT_OK


def _eval_data(spec: str, ckpt) -> SequenceDataset:
    if spec in ("train", "test"):
        if ckpt.config is None:
            raise ConfigError("checkpoint carries no training config; pass a CSV to --data")
        train_set, test_set = datasets_from_config(ckpt.config)
        return train_set if spec == "train" else test_set
    if not os.path.exists(spec):
        raise ConfigError(f"--data: {spec!r} is neither train/test nor an existing CSV")
    return import_csv(spec)


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    data = _eval_data(args.data, ckpt)
    if data.obs_dim != ckpt.model.config.obs_dim:
        raise ConfigError(f"data has {data.obs_dim} dims per step, model expects {ckpt.model.config.obs_dim}")
    K = args.K if args.K is not None else (ckpt.config.k_max if ckpt.config else 0)
    report = evaluate_nll(ckpt.model, data, n_z=args.n_z, K=K, seed=args.seed)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seq_id", "nll"])
            w.writerows((i, repr(float(v))) for i, v in enumerate(report.per_sequence))
    _say(json.dumps({"nll": report.mean, "K": K, "n_z": args.n_z, "n_sequences": len(data)}))
    return EXIT_OK


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    x, _ = generate(ckpt.model, args.n, args.T, RngState(args.seed))
    modality = "binary" if ckpt.model.config.emission == "bernoulli" else "real"
    path = os.path.join(args.out, "samples.csv")
    export_csv(SequenceDataset(x, split="sample", modality=modality), path)
    _say(f"wrote {path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = parse_config(args.config)
    report = gradcheck_report(cfg, seed=args.seed, corrupt=args.corrupt)
    for line in report.lines():
        _say(line)
    return EXIT_OK if report.passed else EXIT_GRADCHECK


def cmd_posterior(args) -> int:
    if args.n < 1:
        raise ConfigError(f"-n must be >= 1, got {args.n}")
    ckpt = load_checkpoint(args.checkpoint)
    D = ckpt.model.config.obs_dim
    try:
        vals = [float(v) for v in args.x1.split(",")]
    except ValueError as exc:
        raise ConfigError(f"--x1: {exc}") from exc
    if len(vals) not in (1, D):
        raise ConfigError(f"--x1 needs 1 or {D} values, got {len(vals)}")
    x1 = np.broadcast_to(np.array(vals), (D,))
    z = posterior_samples(ckpt.model, x1, args.n, RngState(args.seed))
    ratio = bimodality_ratio(z)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "posterior.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample"] + [f"z{j}" for j in range(z.shape[1])])
        w.writerows([i] + [repr(float(v)) for v in row] for i, row in enumerate(z))
    from .plots import posterior_histogram

    posterior_histogram(leading_projection(z), os.path.join(args.out, "posterior_hist.svg"), ratio)
    _say(json.dumps({"bimodality_ratio": ratio, "n": args.n}))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sample": cmd_sample,
            "gradcheck": cmd_gradcheck, "posterior": cmd_posterior}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CheckpointError, IdxError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericError, FloatingPointError, ArithmeticError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
