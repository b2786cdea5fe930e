"""Command-line entry point: ``tribegraph {generate,stats,train,eval,embed}``.

Exit codes: 0 success, 2 usage error, 3 bad input data or config,
4 numerical failure.  Errors print a single ``tribegraph: error: ...`` line
on stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .datagen import GenConfig, STAT_COLUMNS, analyze_graph, class_summary, generate, neighbor_risk_histogram
from .exceptions import BadConfig, DataError, MissingFile, NumericalError
from .graph import load_graph, save_graph
from .metrics import classification_report
from .model import ABLATIONS, feature_tables
from .training import TrainConfig, split_dataset, train, write_history_csv

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tribegraph",
        description="Hierarchical GNN risk classification on tribe-style graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def threads(p):
        p.add_argument("--threads", type=int, default=1, help="tribe-level worker threads (default 1)")

    p = sub.add_parser("generate", help="write a synthetic graph directory")
    p.add_argument("--config", help="GenConfig JSON (default: the bench-small settings)")
    p.add_argument("--out", required=True, help="output graph directory")
    p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("stats", help="tribe centrality statistics and neighbour histograms")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--features", action="store_true", help="also dump the structural feature table")
    threads(p)

    p = sub.add_parser("train", help="train and report test metrics")
    p.add_argument("--graph", required=True)
    p.add_argument("--config", help="TrainConfig JSON (default: built-in defaults)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--ablation", action="append", choices=ABLATIONS, default=[],
                   help="disable a component; may be repeated")
    threads(p)

    p = sub.add_parser("eval", help="score a checkpoint on a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="metrics JSON path")
    threads(p)

    p = sub.add_parser("embed", help="dump eval-mode tribe representations as CSV")
    p.add_argument("--graph", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="CSV path")
    threads(p)
    return parser


def _require_dir(path) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise MissingFile(str(p))
    return p


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise MissingFile(str(p))
    return p


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _pool(n: int):
    if n < 1:
        raise BadConfig("--threads must be >= 1")
    return ThreadPoolExecutor(max_workers=n) if n > 1 else nullcontext(None)


# ------------------------------------------------------------------ commands


def cmd_generate(args) -> int:
    cfg = GenConfig.from_json(_require_file(args.config)) if args.config else GenConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    out = _out_dir(args.out)
    g = generate(cfg)
    save_graph(g, out)
    _write_json(out / "gen_config.json", cfg.to_dict())
    n_risky = int(np.sum(g.labels == 1))
    print(f"generated {g.n_central} tribes ({n_risky} risky), "
          f"{len(g.global_graph.edges)} global edges -> {out}")
    return 0


def cmd_stats(args) -> int:
    gdir = _require_dir(args.graph)
    out = _out_dir(args.out)
    g = load_graph(gdir)
    with _pool(args.threads) as ex:
        stats = analyze_graph(g, ex)
        tables = feature_tables(g, ex) if args.features else None

    with open(out / "tribe_stats.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["tribe_id", "label", *STAT_COLUMNS])
        for i, s in enumerate(stats):
            w.writerow([i, int(g.labels[i]), *(getattr(s, c) for c in STAT_COLUMNS)])

    summary = class_summary(stats, g.labels)
    with open(out / "class_summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "n_tribes", *STAT_COLUMNS])
        for cls, row in summary.items():
            name = "risky" if cls == 1 else "normal"
            w.writerow([name, row["n_tribes"], *(row[c] for c in STAT_COLUMNS)])

    if len(g.global_graph.edges):
        hist = neighbor_risk_histogram(g)
        with open(out / "neighbor_hist.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "risky", "normal"])
            n_bins = len(hist[1])
            for b in range(n_bins):
                w.writerow([b / n_bins, (b + 1) / n_bins, hist[1][b], hist[0][b]])
    else:
        print("global graph has no edges; neighbor_hist.csv skipped", file=sys.stderr)

    if tables is not None:
        with open(out / "features.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["tribe_id", "local_id", "deg_in", "deg_out", "kind", "spd", "eig"])
            for t in tables:
                w.writerows(t.rows())

    for cls, row in summary.items():
        name = "risky " if cls == 1 else "normal"
        cells = "  ".join(f"{c}={row[c]:.4g}" for c in STAT_COLUMNS)
        print(f"{name} (n={row['n_tribes']}): {cells}")
    return 0


def cmd_train(args) -> int:
    gdir = _require_dir(args.graph)
    d = json.loads(_require_file(args.config).read_text(encoding="utf-8")) if args.config else {}
    if not isinstance(d, dict):
        raise BadConfig(f"{args.config}: expected a JSON object")
    cfg = TrainConfig.from_dict(d)
    if args.seed is not None:
        cfg.seed = args.seed
    for name in args.ablation:
        setattr(cfg, f"no_{name}", True)
    cfg.validate()
    if args.threads < 1:
        raise BadConfig("--threads must be >= 1")
    out = _out_dir(args.out)
    g = load_graph(gdir)
    clf, report = train(g, cfg, threads=args.threads)
    _write_json(out / "metrics.json", report.to_json_dict())
    write_history_csv(report.history, out / "epochs.csv")
    _write_json(out / "config.json", cfg.to_dict())
    clf.save(out / "checkpoint.npz", extra={"train_ratio": cfg.train_ratio})
    print(f"test auc={report.auc:.4f} f1={report.f1:.4f} (best epoch {report.best_epoch}) -> {out}")
    return 0


def _load_for_scoring(args):
    from .estimator import TribeRiskClassifier

    gdir = _require_dir(args.graph)
    ckpt = _require_file(args.checkpoint)
    if args.threads < 1:
        raise BadConfig("--threads must be >= 1")
    clf = TribeRiskClassifier.load(ckpt)
    clf.threads = args.threads
    return clf, load_graph(gdir)


def cmd_eval(args) -> int:
    clf, g = _load_for_scoring(args)
    probs = clf.predict_proba(g)[:, 1]
    labels = g.labels
    labeled = np.flatnonzero(labels >= 0)
    result = {"all_labeled": classification_report(probs[labeled], labels[labeled])}
    ratio = clf.checkpoint_extra_.get("train_ratio")
    if ratio is not None:
        # the split the checkpoint was trained under, rebuilt from its seed
        _, _, test_idx = split_dataset(labels, ratio, clf.seed)
        result["test"] = classification_report(probs[test_idx], labels[test_idx])
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, result)
    head = result.get("test", result["all_labeled"])
    print(f"auc={head['auc']:.4f} f1={head['f1']:.4f} -> {out}")
    return 0


def cmd_embed(args) -> int:
    clf, g = _load_for_scoring(args)
    emb = clf.transform(g)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["central_id", *(f"e{j}" for j in range(emb.shape[1]))])
        for i, row in enumerate(emb):
            w.writerow([i, *(repr(float(v)) for v in row)])
    print(f"wrote {emb.shape[0]} x {emb.shape[1]} embeddings -> {out}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "stats": cmd_stats,
    "train": cmd_train,
    "eval": cmd_eval,
    "embed": cmd_embed,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    try:
        return COMMANDS[args.command](args)
    except DataError as exc:
        _die(exc)
        return EXIT_DATA
    except NumericalError as exc:
        _die(exc)
        return EXIT_NUMERIC
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        _die(exc)
        return EXIT_DATA


def _die(exc: BaseException) -> None:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"tribegraph: error: {type(exc).__name__}: {msg}", file=sys.stderr)


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
