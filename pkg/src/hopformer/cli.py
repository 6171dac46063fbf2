"""Command-line entry point: ``hopformer {preprocess,train,eval,oracle-check,synth}``.

Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.
``HOPFORMER_THREADS`` caps BLAS worker threads; 1 gives bit-reproducible runs.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import _io
from .errors import ConfigError, HopformerError, NumericalError, ValidationError
from .graph import load_graph, normalize, save_graph
from .hop2token import hop2token, open_tokens, save_tokens
from .model import load_checkpoint
from .spectral import DEFAULT_SE_DIM, concat_features, laplacian_eigvecs, save_encoding
from .training import TrainConfig, evaluate, train

TOKENS_FILE = "tokens.bin"
ENCODING_FILE = "encoding.bin"
LABELS_FILE = "labels.npy"
MANIFEST_FILE = "manifest.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _nonneg_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _config_help():
    lines = ["config keys (set with --set KEY=VALUE or a JSON --config file):"]
    for key, value in TrainConfig().to_flat().items():
        lines.append(f"  {key:<26} default {value!r}")
    return "\n".join(lines)


def _read_matrix(path):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    return np.load(path) if path.suffix == ".npy" else np.loadtxt(path, ndmin=1)


def _artifact(path):
    return {"path": os.fspath(path), "git_blob": _io.git_blob_hash(path),
            "sha256": _io.file_digest(path)}


def _write_manifest(out_dir, kind, config, seed, inputs, outputs, extra=None):
    manifest = {
        "kind": kind,
        "config": config,
        "seed": seed,
        "created_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "inputs": {k: _artifact(p) for k, p in inputs.items()},
        "outputs": {k: _artifact(p) for k, p in outputs.items()},
    }
    manifest.update(extra or {})
    path = Path(out_dir) / MANIFEST_FILE
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def cmd_preprocess(args):
    features = _read_matrix(args.features) if args.features else None
    labels = _read_matrix(args.labels).astype(np.int64) if args.labels else None
    g = load_graph(args.graph, args.format, n=args.num_nodes, features=features, labels=labels)
    a = normalize(g)
    enc = laplacian_eigvecs(a, args.se_dim, seed=args.seed)
    x_prime = concat_features(g.features, enc)
    tokens = hop2token(a, x_prime, args.k, canonical=args.canonical_order)
    tokens = tokens.astype(np.dtype(args.dtype))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_tokens(tokens, out / TOKENS_FILE)
    save_encoding(enc, out / ENCODING_FILE)
    np.save(out / LABELS_FILE, g.labels)
    config = {"k": args.k, "se_dim": args.se_dim, "format": args.format, "dtype": args.dtype,
              "canonical_order": args.canonical_order}
    inputs = {"graph": args.graph}
    for key in ("features", "labels"):
        if getattr(args, key):
            inputs[key] = getattr(args, key)
    outputs = {"tokens": out / TOKENS_FILE, "encoding": out / ENCODING_FILE,
               "labels": out / LABELS_FILE}
    _write_manifest(out, "preprocess", config, args.seed, inputs, outputs,
                    {"n": g.n, "K": args.k, "width": tokens.width, "num_classes": g.num_classes})
    print(json.dumps({"n": g.n, "K": args.k, "width": tokens.width, "tokens": str(out / TOKENS_FILE)}))
    return 0


def _load_cache(cache_dir):
    cache_dir = Path(cache_dir)
    manifest_path = cache_dir / MANIFEST_FILE
    if not manifest_path.exists():
        raise ValidationError(f"{cache_dir} has no {MANIFEST_FILE}; run preprocess first")
    manifest = json.loads(manifest_path.read_text())
    tokens = open_tokens(cache_dir / TOKENS_FILE)
    labels = np.load(cache_dir / LABELS_FILE)
    return manifest, tokens, labels


def _build_config(args, manifest):
    flat = {"model.K": manifest["K"], "model.in_dim": manifest["width"],
            "model.num_classes": manifest["num_classes"]}
    if args.config:
        try:
            flat.update(json.loads(Path(args.config).read_text()))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        flat[key.strip()] = value.strip()
    if args.seed is not None:
        flat["seed"] = args.seed
    if args.epochs is not None:
        flat["epochs_max"] = args.epochs
    return TrainConfig.from_flat(flat).validate()


def cmd_train(args):
    manifest, tokens, labels = _load_cache(args.cache)
    cfg = _build_config(args, manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_flat(), indent=2, sort_keys=True) + "\n")

    variants = [("", cfg)]
    if args.compare_aug:
        plain = TrainConfig.from_flat({**cfg.to_flat(), "aug.enabled": False})
        augmented = TrainConfig.from_flat({**cfg.to_flat(), "aug.enabled": True})
        variants = [("plain", plain), ("nraug", augmented)]

    runs, outputs = {}, {}
    with open(out / "metrics.jsonl", "w") as fh:
        for tag, run_cfg in variants:
            suffix = f"_{tag}" if tag else ""
            ckpt = out / f"checkpoint{suffix}.bin"

            def log(rec, tag=tag):
                if tag:
                    rec = {"run": tag, **rec}
                line = json.dumps(rec)
                print(line)
                fh.write(line + "\n")

            result = train(tokens, labels, run_cfg, checkpoint_path=ckpt, log=log)
            np.savez(out / f"splits{suffix}.npz", train=result.splits[0], val=result.splits[1],
                     test=result.splits[2])
            runs[tag or "run"] = result.metrics
            outputs[f"checkpoint{suffix}"] = ckpt
            outputs[f"splits{suffix}"] = out / f"splits{suffix}.npz"
    outputs["metrics"] = out / "metrics.jsonl"
    if not args.no_figure:
        from .plotting import plot_training_curves

        title = "plain vs NrAug" if args.compare_aug else None
        outputs["curves"] = plot_training_curves(runs, out / "curves.png", title)
    _write_manifest(out, "train", cfg.to_flat(), cfg.seed,
                    {"tokens": Path(args.cache) / TOKENS_FILE,
                     "labels": Path(args.cache) / LABELS_FILE}, outputs)
    summary = {name: {"best_epoch": m.best_epoch, "best_val_acc": m.best_val_acc,
                      "test_acc": m.test_acc, "epochs_run": len(m.epochs)}
               for name, m in runs.items()}
    print(json.dumps({"summary": summary}), file=sys.stderr)
    return 0


def cmd_eval(args):
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise ValidationError(f"checkpoint not found: {ckpt}")
    model, _ = load_checkpoint(ckpt)
    _, tokens, labels = _load_cache(args.cache)
    if args.split == "all":
        ids = np.flatnonzero(labels >= 0)
    else:
        splits_path = Path(args.splits) if args.splits else ckpt.with_name(
            ckpt.name.replace("checkpoint", "splits").replace(".bin", ".npz"))
        if not splits_path.exists():
            raise ValidationError(f"splits file not found: {splits_path}")
        ids = np.load(splits_path)[args.split]
    acc = evaluate(model, tokens, labels, ids, args.batch_size)
    print(json.dumps({"split": args.split, "metric": "accuracy", "value": acc, "nodes": int(ids.size)}))
    return 0


def cmd_oracle_check(args):
    from .verify import fact1_suite, propagation_suite

    results = [fact1_suite(args.trials, args.seed), propagation_suite(args.trials, args.seed)]
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print(f"{'PASS' if ok else 'FAIL'} max_rel_err={results[0].max_error:.3e} "
          f"max_abs_err={results[1].max_error:.3e}")
    return 0 if ok else 2


def cmd_synth(args):
    from .synthetic import sbm

    g = sbm(args.nodes, args.blocks, args.p_in, args.p_out, args.noise, seed=args.seed)
    save_graph(g, args.out)
    print(json.dumps({"n": g.n, "edges": g.nnz // 2, "num_classes": g.num_classes, "out": args.out}))
    return 0


def build_parser():
    p = _Parser(prog="hopformer", description=__doc__.splitlines()[0],
                epilog=_config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text, epilog=_config_help(),
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.set_defaults(func=fn)
        return sp

    sp = add("preprocess", cmd_preprocess, "build the hop-token cache and structural encoding")
    sp.add_argument("--graph", required=True)
    sp.add_argument("--format", choices=("edges", "binary"), default="edges")
    sp.add_argument("--features", help=".npy or whitespace text matrix, one row per node")
    sp.add_argument("--labels", help=".npy or text vector; -1 marks unlabeled nodes")
    sp.add_argument("--num-nodes", type=_nonneg_int, help="node count for edge lists")
    sp.add_argument("--k", type=_nonneg_int, required=True, help="number of hops K")
    sp.add_argument("--se-dim", type=_nonneg_int, default=DEFAULT_SE_DIM,
                    help="Laplacian eigenvectors to append (0 disables)")
    sp.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    sp.add_argument("--canonical-order", action="store_true",
                    help="label-independent summation order (slower; relabeled graphs give "
                         "bitwise-permuted tokens)")
    sp.add_argument("--out", required=True, help="cache directory")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("train", cmd_train, "train on a token cache with early stopping")
    sp.add_argument("--cache", required=True)
    sp.add_argument("--out", required=True, help="run directory")
    sp.add_argument("--config", help="JSON file of config keys")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--epochs", type=_nonneg_int)
    sp.add_argument("--compare-aug", action="store_true",
                    help="train with and without augmentation and plot both")
    sp.add_argument("--no-figure", action="store_true")

    sp = add("eval", cmd_eval, "accuracy of a checkpoint on a split")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--cache", required=True)
    sp.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    sp.add_argument("--splits", help="splits .npz (default: next to the checkpoint)")
    sp.add_argument("--batch-size", type=int, default=2000)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("oracle-check", cmd_oracle_check, "run the fixed-attention and propagation oracle suites")
    sp.add_argument("--trials", type=_nonneg_int, default=50)
    sp.add_argument("--seed", type=int, default=0)

    sp = add("synth", cmd_synth, "write a stochastic-block-model graph in binary format")
    sp.add_argument("--nodes", type=_nonneg_int, default=400)
    sp.add_argument("--blocks", type=_nonneg_int, default=2)
    sp.add_argument("--p-in", type=float, default=0.1)
    sp.add_argument("--p-out", type=float, default=0.005)
    sp.add_argument("--noise", type=float, default=1.0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    return p


def _limit_threads():
    value = os.environ.get("HOPFORMER_THREADS")
    if not value:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(value)))


def main(argv=None):
    args = build_parser().parse_args(argv)
    _limit_threads()
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"hopformer: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, FileNotFoundError) as exc:
        print(f"hopformer: error: {exc}", file=sys.stderr)
        return 1
    except HopformerError as exc:
        print(f"hopformer: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
