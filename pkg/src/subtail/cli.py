"""Command-line front end: gen, train, cluster, eval.

Every command resolves its flags into a manifest JSON written next to the
primary output before any computation; re-running with --manifest <file>
replays the stored flags and reproduces the outputs byte-exactly. On
failure all outputs of the invocation are removed and the exit code is
nonzero. SUBTAIL_THREADS caps worker threads during clustering;
SUBTAIL_BACKEND selects the kernel backend (auto, numba, numpy).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import (
    ClusterConfig,
    baseline_kmeans,
    cluster_dataset,
    cluster_stats,
    save_clusters,
    size_stats,
)
from .dataset import GeneratorConfig, generate, load_dataset, save_dataset
from .losses import LossConfig
from .metrics import distance_report, evaluate_probe, subclass_recovery, train_probe
from .trainer import TrainConfig, extract_features, train, write_train_log
from .encoder import load_encoder


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _manifest_path(primary) -> Path:
    p = Path(primary)
    return p.with_name(p.name + ".manifest.json")


def _write_manifest(path: Path, command: str, resolved: dict, outputs: list) -> None:
    payload = {
        "tool": "subtail",
        "version": __version__,
        "command": command,
        "args": resolved,
        "outputs": [str(o) for o in outputs],
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_manifest(ns, command: str, parser) -> None:
    try:
        with open(ns.manifest) as f:
            stored = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read manifest: {exc}")
    if stored.get("command") != command:
        parser.error(f"manifest is for {stored.get('command')!r}, not {command!r}")
    for key, val in stored.get("args", {}).items():
        setattr(ns, key, val)


def _resolved(ns, names) -> dict:
    return {k: getattr(ns, k) for k in names}


_GEN_ARGS = ("classes", "head", "ir", "subclusters", "dim", "noise", "separation",
             "seed", "output", "binary")


def cmd_gen(ns) -> list:
    cfg = GeneratorConfig(
        num_classes=ns.classes,
        head_count=ns.head,
        imbalance_ratio=ns.ir,
        subclusters_per_class=ns.subclusters,
        input_dim=ns.dim,
        noise_sigma=ns.noise,
        separation=ns.separation,
        seed=ns.seed,
    )
    ds = generate(cfg)
    save_dataset(ds, ns.output, binary=ns.binary)
    print(f"wrote {ns.output}: n={ds.num_samples} C={ds.num_classes} "
          f"tail={int(ds.class_counts.min())}")
    return [ns.output]


_TRAIN_ARGS = ("data", "warmup_epochs", "epochs", "interval", "batch", "warmup_loss",
               "tau1", "beta", "k_positives", "delta", "iterations", "alpha", "arch",
               "hidden", "embed_dim", "lr", "momentum", "augment_sigma", "seed",
               "output", "log")


def _train_outputs(ns) -> list:
    out = Path(ns.output)
    log = ns.log if ns.log else str(out.with_name(out.stem + "-train.csv"))
    outputs = [str(out), log]
    t0 = min(ns.warmup_epochs, ns.epochs)
    for t in range(t0, ns.epochs, ns.interval):
        outputs.append(str(out.with_name(f"{out.stem}-e{t:04d}{out.suffix}")))
    return outputs


def cmd_train(ns) -> list:
    outputs = _train_outputs(ns)
    ds = load_dataset(ns.data)
    cfg = TrainConfig(
        # the effective warm-up cannot outlast the run
        warmup_epochs=min(ns.warmup_epochs, ns.epochs),
        total_epochs=ns.epochs,
        update_interval=ns.interval,
        batch_size=ns.batch,
        warmup_loss=ns.warmup_loss,
        loss=LossConfig(tau1=ns.tau1, beta=ns.beta, k_positives=ns.k_positives),
        cluster=ClusterConfig(delta=ns.delta, iterations=ns.iterations, seed=ns.seed),
        alpha=ns.alpha,
        arch=ns.arch,
        hidden_dim=ns.hidden if ns.arch == "mlp1" else 0,
        embed_dim=ns.embed_dim,
        base_lr=ns.lr,
        momentum=ns.momentum,
        augment_sigma=ns.augment_sigma,
        seed=ns.seed,
    )
    result = train(ds, cfg, checkpoint_path=ns.output)
    write_train_log(result.log, outputs[1])
    final = result.log[-1].loss if result.log else float("nan")
    print(f"wrote {ns.output} and {outputs[1]}: {ns.epochs} epochs, final loss {final:.6g}")
    return outputs


_CLUSTER_ARGS = ("data", "checkpoint", "delta", "iterations", "seed", "baseline",
                 "include_singletons", "output", "stats")


def cmd_cluster(ns) -> list:
    stats_path = ns.stats if ns.stats else str(Path(ns.output).with_name(
        Path(ns.output).stem + "-stats.csv"))
    outputs = [ns.output, stats_path]
    ds = load_dataset(ns.data)
    enc = load_encoder(ns.checkpoint)
    feats = extract_features(enc, ds)
    cfg = ClusterConfig(delta=ns.delta, iterations=ns.iterations, seed=ns.seed)
    model = cluster_dataset(feats, ds, cfg)
    save_clusters(model, ns.output)

    rows = []
    stats = cluster_stats(model, include_singleton_classes=ns.include_singletons)
    if stats is not None:
        rows.append(("capacity", stats))
    if ns.baseline == "kmeans":
        sizes = []
        for c in range(ds.num_classes):
            if model.per_class_cluster_count[c] < 2:
                continue
            sel = ds.labels == c
            assign = baseline_kmeans(
                feats[sel], int(model.per_class_cluster_count[c]), ns.seed, ns.iterations
            )
            sizes.extend(np.bincount(assign, minlength=assign.max() + 1).tolist())
        if sizes:
            rows.append(("kmeans", size_stats(sizes)))
    with open(stats_path, "w") as f:
        f.write("method,max,min,mean,std,imbalance_ratio\n")
        for name, s in rows:
            f.write(f"{name},{s.max_size},{s.min_size},{_fmt(s.mean_size)},"
                    f"{_fmt(s.std_size)},{_fmt(s.size_imbalance_ratio)}\n")
    if not rows:
        print("note: every class fit inside one subclass; stats section is empty")
    print(f"wrote {ns.output} and {stats_path}: {model.num_subclasses} subclasses, "
          f"capacity {model.capacity}")
    return outputs


_EVAL_ARGS = ("data", "checkpoint", "eval_data", "thresholds", "delta", "iterations",
              "probe_epochs", "probe_lr", "probe_batch", "balanced", "seed", "output")


def cmd_eval(ns) -> list:
    prefix = ns.output
    paths = {
        "distances": f"{prefix}-distances.csv",
        "accuracy": f"{prefix}-accuracy.csv",
        "recovery": f"{prefix}-recovery.csv",
    }
    outputs = list(paths.values())
    many, few = (int(v) for v in ns.thresholds.split(","))
    ds = load_dataset(ns.data)
    enc = load_encoder(ns.checkpoint)
    feats = extract_features(enc, ds)
    cfg = ClusterConfig(delta=ns.delta, iterations=ns.iterations, seed=ns.seed)
    model = cluster_dataset(feats, ds, cfg)

    report = distance_report(feats, ds, model, thresholds=(many, few),
                             balanced=ns.balanced, seed=ns.seed)
    with open(paths["distances"], "w") as f:
        f.write("split,statistic,value\n")
        for split, stat, value in report.rows():
            f.write(f"{split},{stat},{_fmt(value)}\n")

    probe = train_probe(feats, ds, epochs=ns.probe_epochs, lr=ns.probe_lr,
                        seed=ns.seed, batch_size=ns.probe_batch)
    if ns.eval_data:
        eval_ds = load_dataset(ns.eval_data)
        eval_feats = extract_features(enc, eval_ds)
        acc = evaluate_probe(probe, eval_feats, eval_ds, thresholds=(many, few),
                             split_counts=ds.class_counts)
    else:
        acc = evaluate_probe(probe, feats, ds, thresholds=(many, few))
    with open(paths["accuracy"], "w") as f:
        f.write("split,statistic,value\n")
        for split in ("Many", "Medium", "Few", "All"):
            f.write(f"{split},top1_accuracy,{_fmt(acc[split])}\n")

    with open(paths["recovery"], "w") as f:
        f.write("class,ari\n")
        if ds.true_subclusters is not None:
            for c, ari in sorted(subclass_recovery(model, ds).items()):
                f.write(f"{c},{_fmt(ari)}\n")
    print(f"wrote {', '.join(outputs)}: All accuracy {acc['All']:.4f}")
    return outputs


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subtail",
        description="Subclass-balancing contrastive learning at desk scale.",
        epilog="Environment: SUBTAIL_THREADS caps worker threads; "
               "SUBTAIL_BACKEND=auto|numba|numpy picks the kernel backend.",
    )
    parser.add_argument("--version", action="version", version=f"subtail {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a long-tailed synthetic dataset")
    g.add_argument("--classes", type=int, default=20)
    g.add_argument("--head", type=int, default=150)
    g.add_argument("--ir", type=float, default=50.0, help="imbalance ratio n1/nC")
    g.add_argument("--subclusters", type=int, default=3)
    g.add_argument("--dim", type=int, default=8)
    g.add_argument("--noise", type=float, default=1.0)
    g.add_argument("--separation", type=float, default=4.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--binary", action="store_true")
    g.add_argument("-o", "--output", help="dataset file to write")
    g.add_argument("--manifest", help="replay a stored manifest")

    t = sub.add_parser("train", help="train an encoder")
    t.add_argument("--data", help="dataset file")
    t.add_argument("--warmup-epochs", type=int, default=10)
    t.add_argument("--epochs", type=int, default=60)
    t.add_argument("--interval", type=int, default=10)
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--warmup-loss", choices=("scl", "kcl"), default="scl")
    t.add_argument("--tau1", type=float, default=0.1)
    t.add_argument("--beta", type=float, default=0.2)
    t.add_argument("--k-positives", type=int, default=4)
    t.add_argument("--delta", type=int, default=10)
    t.add_argument("--iterations", type=int, default=10, help="clustering rounds")
    t.add_argument("--alpha", type=float, default=10.0)
    t.add_argument("--arch", choices=("linear", "mlp1"), default="mlp1")
    t.add_argument("--hidden", type=int, default=32)
    t.add_argument("--embed-dim", type=int, default=16)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--augment-sigma", type=float, default=0.5)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("-o", "--output", help="checkpoint file to write")
    t.add_argument("--log", help="training log CSV (default: <output>-train.csv)")
    t.add_argument("--manifest", help="replay a stored manifest")

    c = sub.add_parser("cluster", help="cluster features from a checkpoint")
    c.add_argument("--data", help="dataset file")
    c.add_argument("--checkpoint", help="encoder checkpoint")
    c.add_argument("--delta", type=int, default=10)
    c.add_argument("--iterations", type=int, default=10)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--baseline", choices=("kmeans",), help="also run the unconstrained baseline")
    c.add_argument("--include-singletons", action="store_true",
                   help="count single-subclass classes in the stats")
    c.add_argument("-o", "--output", help="assignment CSV to write")
    c.add_argument("--stats", help="stats CSV (default: <output>-stats.csv)")
    c.add_argument("--manifest", help="replay a stored manifest")

    e = sub.add_parser("eval", help="distance report, subclass recovery, linear probe")
    e.add_argument("--data", help="dataset file (probe training set)")
    e.add_argument("--checkpoint", help="encoder checkpoint")
    e.add_argument("--eval-data", help="held-out dataset for probe scoring")
    e.add_argument("--thresholds", default="100,20", help="many,few split bounds")
    e.add_argument("--delta", type=int, default=10)
    e.add_argument("--iterations", type=int, default=10)
    e.add_argument("--probe-epochs", type=int, default=200)
    e.add_argument("--probe-lr", type=float, default=0.5)
    e.add_argument("--probe-batch", type=int, default=64)
    e.add_argument("--balanced", action="store_true",
                   help="subsample Many/Medium to the Few size for distances")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("-o", "--output", help="output prefix")
    e.add_argument("--manifest", help="replay a stored manifest")
    return parser


_COMMANDS = {
    "gen": (cmd_gen, _GEN_ARGS, ("output",)),
    "train": (cmd_train, _TRAIN_ARGS, ("data", "output")),
    "cluster": (cmd_cluster, _CLUSTER_ARGS, ("data", "checkpoint", "output")),
    "eval": (cmd_eval, _EVAL_ARGS, ("data", "checkpoint", "output")),
}


def main(argv=None) -> int:
    parser = _build_parser()
    ns = parser.parse_args(argv)
    handler, arg_names, required = _COMMANDS[ns.command]
    if ns.manifest:
        _load_manifest(ns, ns.command, parser)
    for name in required:
        if getattr(ns, name, None) is None:
            parser.error(f"--{name.replace('_', '-')} is required")
    manifest = _manifest_path(ns.output)
    try:
        _write_manifest(manifest, ns.command, _resolved(ns, arg_names), _planned_outputs(ns))
        handler(ns)
    except Exception as exc:  # remove partial outputs, report one line
        for p in _planned_outputs(ns) + [str(manifest)]:
            Path(p).unlink(missing_ok=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _planned_outputs(ns) -> list:
    if ns.command == "gen":
        return [ns.output]
    if ns.command == "train":
        return _train_outputs(ns)
    if ns.command == "cluster":
        stats = ns.stats if ns.stats else str(Path(ns.output).with_name(
            Path(ns.output).stem + "-stats.csv"))
        return [ns.output, stats]
    return [f"{ns.output}-{kind}.csv" for kind in ("distances", "accuracy", "recovery")]


if __name__ == "__main__":
    sys.exit(main())
