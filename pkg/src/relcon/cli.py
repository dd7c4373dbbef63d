"""Command-line surface for the full pipeline.

Subcommands: gen, mine, pretrain, finetune, infer, eval, probe, matrix,
export-embeddings. Global flags: --config (plain key=value file), --seed,
--run-dir, --quiet. Exit codes: 0 success, 1 validation or configuration
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import corpus as corpus_mod
from .corpus import (
    CorpusError,
    SPLITS_FILE,
    SyntheticWorldConfig,
    generate_synthetic_world,
    load_corpus,
    pairs_for_documents,
    save_corpus,
    split_documents,
    split_low_resource,
    documents_by_id,
)
from .evaluation import (
    CellResult,
    K_GRID,
    facts_from_pairs,
    micro_f1,
    micro_f1_ign,
    predict_records,
    probe,
    run_low_resource_cell,
)
from .inference import build_index, embed_pairs, load_index, save_index
from .mining import compute_pair_stats, select_pretraining_pairs, SelectedPair
from .runs import RunManifest
from .trainer import (
    Checkpoint,
    TrainConfig,
    finetune,
    load_checkpoint,
    new_random_checkpoint,
    pretrain,
    save_checkpoint,
)

log = logging.getLogger("relcon")


def _load_config_file(path: str | None) -> dict[str, str]:
    """Plain key = value lines; '#' starts a comment."""
    if path is None:
        return {}
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected 'key = value'")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _train_config(args, file_values: dict[str, str]) -> TrainConfig:
    base = TrainConfig().to_dict()
    casts = {k: type(v) for k, v in base.items()}
    for key, raw in file_values.items():
        if key in base:
            base[key] = casts[key](raw) if casts[key] is not str else raw
    for key in base:
        flag = getattr(args, key, None)
        if flag is not None:
            base[key] = flag
    if args.seed is not None:
        base["seed"] = args.seed
    return TrainConfig(**base)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--objective", choices=("ce", "supcon", "mccl", "mccl_multilabel"), default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--tau1", type=float, default=None)
    p.add_argument("--tau2", type=float, default=None)
    p.add_argument("--mask-prob", dest="mask_prob", type=float, default=None)
    p.add_argument("--mlm-rate", dest="mlm_rate", type=float, default=None)
    p.add_argument("--na-subsample", dest="na_subsample", type=float, default=None)
    p.add_argument("--warmup-steps", dest="warmup_steps", type=int, default=None)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=None)


def _run_dir(args, default: str) -> Path:
    return Path(args.run_dir) if args.run_dir else Path("runs") / default


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_splits(corpus_dir: Path, documents) -> dict[str, list[str]]:
    path = corpus_dir / SPLITS_FILE
    if path.exists():
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    return split_documents(documents)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = SyntheticWorldConfig(
        n_entities=args.entities,
        n_types=args.types,
        n_relations=args.relations,
        modes_per_relation=args.modes,
        docs=args.docs,
        pairs_per_doc=args.pairs_per_doc,
        vocab_size=args.vocab_size,
        seed=args.seed if args.seed is not None else 0,
        na_fraction=args.na_fraction,
    )
    run = RunManifest(args.out, "gen", {"world": cfg.__dict__}, [cfg.seed])
    world = generate_synthetic_world(cfg)
    out = Path(args.out)
    save_corpus(out, world.inventory, world.documents, world.pairs)
    splits = split_documents(world.documents, seed=cfg.seed)
    _write_json(out / SPLITS_FILE, splits)
    for name in ("documents.jsonl", "labels.jsonl", "inventory.json", SPLITS_FILE):
        run.add_artifact(out / name)
    run.finalize()
    print(f"wrote {len(world.documents)} documents, {len(world.pairs)} pairs to {out}")
    return 0


def cmd_mine(args) -> int:
    run = RunManifest(_run_dir(args, "mine"), "mine",
                      {"freq_threshold": args.freq_threshold, "top_k": args.top_k}, [])
    run.add_input(args.corpus)
    _, documents, _ = load_corpus(args.corpus)
    if args.split and args.split != "all":
        splits = _load_splits(Path(args.corpus), documents)
        wanted = set(splits[args.split])
        documents = [d for d in documents if d.id in wanted]
    stats = compute_pair_stats(documents)
    selected = select_pretraining_pairs(stats, args.freq_threshold, args.top_k)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        for sp in selected:
            f.write(json.dumps(
                {"subject": sp.subject, "object": sp.object,
                 "frequency": sp.frequency, "pmi": sp.pmi},
                separators=(",", ":")) + "\n")
    run.add_artifact(out)
    run.finalize()
    print(f"selected {len(selected)} pretraining pairs -> {out}")
    return 0


def _load_selected(path: str | Path) -> list[SelectedPair]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                obj = json.loads(line)
                out.append(SelectedPair(
                    subject=obj["subject"], object=obj["object"],
                    frequency=obj["frequency"], pmi=obj["pmi"]))
    return out


def cmd_pretrain(args) -> int:
    cfg = _train_config(args, _load_config_file(args.config))
    run_dir = _run_dir(args, "pretrain")
    run = RunManifest(run_dir, "pretrain", cfg.to_dict(), [cfg.seed])
    run.add_input(args.corpus)
    run.add_input(args.pairs)
    _, documents, _ = load_corpus(args.corpus)
    if args.split and args.split != "all":
        splits = _load_splits(Path(args.corpus), documents)
        wanted = set(splits[args.split])
        train_docs = [d for d in documents if d.id in wanted]
    else:
        train_docs = list(documents)
    selected = _load_selected(args.pairs)
    ckpt = pretrain(train_docs, selected, cfg, log_path=run_dir / "pretrain_metrics.csv",
                    vocab_documents=documents)
    save_checkpoint(ckpt, args.out)
    run.add_artifact(args.out)
    run.add_artifact(run_dir / "pretrain_metrics.csv")
    run.set_steps(ckpt.step)
    run.finalize()
    print(f"pretrained {ckpt.step} steps -> {args.out}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _train_config(args, _load_config_file(args.config))
    run_dir = _run_dir(args, "finetune")
    run = RunManifest(run_dir, "finetune", cfg.to_dict(), [cfg.seed])
    run.add_input(args.corpus)
    run.add_input(args.init)
    inventory, documents, pairs = load_corpus(args.corpus)
    splits = _load_splits(Path(args.corpus), documents)
    train_pairs = pairs_for_documents(pairs, splits[args.split])
    if args.p < 1.0:
        train_pairs = split_low_resource(train_pairs, args.p, cfg.seed)
    init = load_checkpoint(args.init)
    ckpt = finetune(documents, train_pairs, inventory, init, cfg,
                    log_path=run_dir / "finetune_metrics.csv")
    save_checkpoint(ckpt, args.out)
    run.add_artifact(args.out)
    run.add_artifact(run_dir / "finetune_metrics.csv")
    run.set_steps(ckpt.step)
    run.finalize()
    print(f"finetuned ({cfg.objective}) on {len(train_pairs)} pairs, {ckpt.step} steps -> {args.out}")
    return 0


def cmd_infer(args) -> int:
    run_dir = _run_dir(args, "infer")
    run = RunManifest(run_dir, "infer", {"k": args.k, "mode": args.mode}, [])
    run.add_input(args.corpus)
    run.add_input(args.checkpoint)
    inventory, documents, pairs = load_corpus(args.corpus)
    docs = documents_by_id(documents)
    splits = _load_splits(Path(args.corpus), documents)
    ckpt = load_checkpoint(args.checkpoint)
    if args.index:
        index = load_index(args.index)
    else:
        train_pairs = pairs_for_documents(pairs, splits["train"])
        if args.p < 1.0:
            train_pairs = split_low_resource(train_pairs, args.p, args.seed or 0)
        index = build_index(ckpt, docs, train_pairs, inventory)
    if args.save_index:
        save_index(index, args.save_index)
        run.add_artifact(args.save_index)
    query_pairs = pairs_for_documents(pairs, splits[args.split])
    queries = embed_pairs(ckpt, docs, query_pairs)
    mode = args.mode or inventory.mode
    inv = inventory if mode == inventory.mode else None
    if inv is None:
        raise ValueError(f"prediction mode {mode!r} does not match inventory mode {inventory.mode!r}")
    records = predict_records(index, queries, query_pairs, inventory, args.k)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            f.write(json.dumps(
                {"document_id": rec.document_id, "subject": rec.subject,
                 "object": rec.object, "predicted": sorted(rec.predicted)},
                separators=(",", ":")) + "\n")
    run.add_artifact(out)
    run.finalize()
    print(f"wrote {len(records)} predictions -> {out}")
    return 0


def cmd_eval(args) -> int:
    run_dir = _run_dir(args, "eval")
    run = RunManifest(run_dir, "eval", {"split": args.split}, [])
    run.add_input(args.corpus)
    run.add_input(args.predictions)
    inventory, documents, pairs = load_corpus(args.corpus)
    docs = documents_by_id(documents)
    splits = _load_splits(Path(args.corpus), documents)
    gold = {p.key(): p.labels for p in pairs_for_documents(pairs, splits[args.split])}
    records = []
    from .evaluation import PredictionRecord

    with open(args.predictions, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            key = (obj["document_id"], obj["subject"], obj["object"])
            records.append(PredictionRecord(
                document_id=key[0], subject=key[1], object=key[2],
                predicted=frozenset(obj["predicted"]),
                gold=gold.get(key, frozenset()),
            ))
    train_facts = facts_from_pairs(pairs_for_documents(pairs, splits["train"]), docs, inventory.na)
    precision, recall, f1 = micro_f1(records, inventory.na)
    f1_ign = micro_f1_ign(records, train_facts, docs, inventory.na)
    metrics = {"precision": precision, "recall": recall, "f1": f1, "f1_ign": f1_ign}
    _write_json(run_dir / "metrics.json", metrics)
    with open(run_dir / "metrics.csv", "w", encoding="utf-8", newline="\n") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["precision", "recall", "f1", "f1_ign"])
        w.writerow([f"{metrics[c]:.6f}" for c in ("precision", "recall", "f1", "f1_ign")])
    run.add_artifact(run_dir / "metrics.json")
    run.add_artifact(run_dir / "metrics.csv")
    run.finalize()
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_probe(args) -> int:
    run_dir = _run_dir(args, "probe")
    run = RunManifest(run_dir, "probe", {"k": args.k, "p": args.p}, [args.seed or 0])
    run.add_input(args.corpus)
    run.add_input(args.checkpoint)
    inventory, documents, pairs = load_corpus(args.corpus)
    splits = _load_splits(Path(args.corpus), documents)
    train_pairs = pairs_for_documents(pairs, splits["train"])
    test_pairs = pairs_for_documents(pairs, splits["test"])
    if args.p < 1.0:
        train_pairs = split_low_resource(train_pairs, args.p, args.seed or 0)
    ckpt = load_checkpoint(args.checkpoint)
    report = probe(ckpt, documents, train_pairs, test_pairs, inventory, k=args.k, seed=args.seed or 0)
    _write_json(run_dir / "probe.json", report)
    run.add_artifact(run_dir / "probe.json")
    run.finalize()
    for name in ("softmax", "nearest_centroid", "classwise_knn"):
        print(f"{name}: f1={report[name]:.4f}")
    return 0


def cmd_matrix(args) -> int:
    cfg = _train_config(args, _load_config_file(args.config))
    run_dir = _run_dir(args, "matrix")
    run = RunManifest(run_dir, "matrix", {
        "objectives": args.objectives, "inits": args.inits,
        "ps": args.ps, "seeds": args.seeds, "train": cfg.to_dict(),
    }, list(args.seeds))
    run.add_input(args.corpus)
    if args.pretrained:
        run.add_input(args.pretrained)
    inventory, documents, pairs = load_corpus(args.corpus)
    splits = _load_splits(Path(args.corpus), documents)
    mtb = load_checkpoint(args.pretrained) if args.pretrained else None

    rows: list[CellResult] = []
    failures: list[str] = []
    for init_name in args.inits:
        for objective in args.objectives:
            for p in args.ps:
                for seed in args.seeds:
                    try:
                        if init_name == "mtb":
                            if mtb is None:
                                raise ValueError("init 'mtb' requires --pretrained")
                            init_ckpt = mtb
                        else:
                            init_ckpt = new_random_checkpoint(documents, seed)
                        cell = run_low_resource_cell(
                            documents, pairs, inventory, splits, init_ckpt,
                            objective, init_name, p, seed, cfg,
                        )
                        rows.append(cell)
                        print(f"cell init={init_name} objective={objective} p={p} seed={seed}: "
                              f"f1={cell.f1:.4f} f1_ign={cell.f1_ign:.4f} k={cell.k}")
                    except Exception as exc:  # keep going, report at the end
                        failures.append(f"init={init_name} objective={objective} p={p} seed={seed}: {exc}")
                        print(f"cell init={init_name} objective={objective} p={p} seed={seed} FAILED: {exc}",
                              file=sys.stderr)

    cells_path = run_dir / "cells.csv"
    with open(cells_path, "w", encoding="utf-8", newline="\n") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["init", "objective", "p", "seed", "k", "precision", "recall", "f1", "f1_ign"])
        for c in rows:
            w.writerow([c.init, c.objective, f"{c.p:g}", c.seed, c.k if c.k is not None else "",
                        f"{c.precision:.6f}", f"{c.recall:.6f}", f"{c.f1:.6f}", f"{c.f1_ign:.6f}"])

    summary_path = run_dir / "summary.csv"
    groups: dict[tuple, list[CellResult]] = {}
    for c in rows:
        groups.setdefault((c.init, c.objective, c.p), []).append(c)
    with open(summary_path, "w", encoding="utf-8", newline="\n") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["init", "objective", "p", "n_seeds", "f1_mean", "f1_ign_mean"])
        for (init_name, objective, p), cells in sorted(groups.items()):
            f1_mean = sum(c.f1 for c in cells) / len(cells)
            ign_mean = sum(c.f1_ign for c in cells) / len(cells)
            w.writerow([init_name, objective, f"{p:g}", len(cells),
                        f"{f1_mean:.6f}", f"{ign_mean:.6f}"])

    run.add_artifact(cells_path)
    run.add_artifact(summary_path)
    run.finalize()
    if failures:
        print(f"{len(failures)} cell(s) failed", file=sys.stderr)
    print(f"matrix results -> {summary_path}")
    return 0


def cmd_export_embeddings(args) -> int:
    run_dir = _run_dir(args, "export")
    run = RunManifest(run_dir, "export-embeddings", {"split": args.split}, [])
    run.add_input(args.corpus)
    run.add_input(args.checkpoint)
    inventory, documents, pairs = load_corpus(args.corpus)
    docs = documents_by_id(documents)
    splits = _load_splits(Path(args.corpus), documents)
    wanted = pairs_for_documents(pairs, splits[args.split]) if args.split else pairs
    ckpt = load_checkpoint(args.checkpoint)
    x = embed_pairs(ckpt, docs, wanted) if wanted else np.zeros((0, ckpt.encoder_config.model_dim))
    proj = principal_axes_projection(x) if len(wanted) else np.zeros((0, 2))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        w = csv.writer(f, lineterminator="\n")
        header = ["document_id", "subject", "object", "labels", "proj_x", "proj_y"]
        if args.full_vectors:
            header += [f"z{i}" for i in range(x.shape[1])]
        w.writerow(header)
        for i, pair in enumerate(wanted):
            row = [pair.document_id, pair.subject, pair.object, "|".join(sorted(pair.labels)),
                   f"{proj[i, 0]:.10g}", f"{proj[i, 1]:.10g}"]
            if args.full_vectors:
                row += [f"{v:.17g}" for v in x[i]]
            w.writerow(row)
    run.add_artifact(out)
    run.finalize()
    print(f"exported {len(wanted)} rows -> {out}")
    return 0


def principal_axes_projection(x: np.ndarray) -> np.ndarray:
    """Deterministic 2-D projection onto the top two principal axes.

    Sign convention: the first nonzero loading of each axis is positive.
    """
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axes = vt[:2] if vt.shape[0] >= 2 else np.vstack([vt, np.zeros((2 - vt.shape[0], x.shape[1]))])
    fixed = []
    for axis in axes:
        nz = np.flatnonzero(np.abs(axis) > 1e-12)
        if nz.size and axis[nz[0]] < 0:
            axis = -axis
        fixed.append(axis)
    return centered @ np.vstack(fixed).T


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # defined on the root parser and again on every subparser (with SUPPRESS
    # defaults) so the flags are accepted on either side of the subcommand
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="key = value config file")
    parser.add_argument("--seed", type=int, default=default)
    parser.add_argument("--run-dir", dest="run_dir", default=default)
    if suppress:
        parser.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    else:
        parser.add_argument("--quiet", action="store_true")


def _sub(sub, name, help):
    p = sub.add_parser(name, help=help)
    _global_flags(p, suppress=True)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relcon", description=__doc__)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = _sub(sub, "gen", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--docs", type=int, default=300)
    p.add_argument("--entities", type=int, default=40)
    p.add_argument("--types", type=int, default=4)
    p.add_argument("--relations", type=int, default=4)
    p.add_argument("--modes", type=int, default=2)
    p.add_argument("--pairs-per-doc", dest="pairs_per_doc", type=int, default=6)
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=512)
    p.add_argument("--na-fraction", dest="na_fraction", type=float, default=0.3)
    p.set_defaults(func=cmd_gen)

    p = _sub(sub, "mine", help="select pretraining pairs by frequency and PMI")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "dev", "test", "all"), default="train")
    p.add_argument("--freq-threshold", dest="freq_threshold", type=int, default=3)
    p.add_argument("--top-k", dest="top_k", type=int, default=5000)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_mine)

    p = _sub(sub, "pretrain", help="contrastive pretraining")
    p.add_argument("--corpus", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "dev", "test", "all"), default="train")
    _add_train_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = _sub(sub, "finetune", help="finetune on labeled pairs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--p", type=float, default=1.0)
    _add_train_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = _sub(sub, "infer", help="classwise kNN prediction")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", default=None)
    p.add_argument("--save-index", dest="save_index", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--mode", choices=("single", "multi"), default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = _sub(sub, "eval", help="score a predictions file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_eval)

    p = _sub(sub, "probe", help="frozen-representation probing report")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--p", type=float, default=1.0)
    p.set_defaults(func=cmd_probe)

    p = _sub(sub, "matrix", help="run a low-resource experiment matrix")
    p.add_argument("--corpus", required=True)
    p.add_argument("--pretrained", default=None)
    p.add_argument("--objectives", nargs="+", default=["ce", "mccl"],
                   choices=("lazy", "ce", "supcon", "mccl", "mccl_multilabel"))
    p.add_argument("--inits", nargs="+", default=["random", "mtb"], choices=("random", "mtb"))
    p.add_argument("--ps", nargs="+", type=float, default=[0.01, 0.05, 0.10, 1.0])
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    _add_train_flags(p)
    p.set_defaults(func=cmd_matrix)

    p = _sub(sub, "export-embeddings", help="CSV of pair embeddings with 2-D projection")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--full-vectors", dest="full_vectors", action="store_true")
    p.set_defaults(func=cmd_export_embeddings)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CorpusError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
