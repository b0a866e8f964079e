"""Multi-command pipeline interface.

Stages communicate through documented files so each one is independently
testable::

    skillgraph synth        --n 300 --seed 7 --out data/
    skillgraph extract      --manifest data/manifest.json --out work/
    skillgraph build-graphs --manifest data/manifest.json --features work/features.csv --out work/graphs/
    skillgraph balance      --manifest data/manifest.json --graphs work/graphs/ --category Overall --out work/balanced/
    skillgraph pretrain     --manifest data/manifest.json --graphs work/graphs/ --out work/ssl/
    skillgraph train        --manifest data/manifest.json --graphs work/graphs/ --category Overall --out work/model/
    skillgraph evaluate     --manifest data/manifest.json --graphs work/graphs/ --checkpoint work/model/checkpoint.json --out work/eval/
    skillgraph baseline     --manifest data/manifest.json --category Overall --out work/baseline/
    skillgraph embed        --manifest data/manifest.json --graphs work/graphs/ --checkpoint work/model/checkpoint.json --out work/embed/
    skillgraph project      --embeddings work/embed/embeddings.csv --out work/proj/

Exit codes: 0 success, 1 validation/data error, 2 usage error. All randomness
flows from --seed; identical flags and inputs give byte-identical outputs.
Every command writes run_manifest.json (flags, seed, input hashes, version)
beside its outputs.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import load_manifest, validate_dataset
from .errors import SkillGraphError
from .evaluation import evaluate_model, format_reports, gaussian_baseline, MetricsReport
from .explain import (
    export_embeddings,
    load_embedding_csv,
    nearest_exemplars,
    pca_project,
    write_embedding_csv,
    write_projection_csv,
)
from .features import (
    apply_scaler,
    clip_node_features,
    feature_schema_id,
    fit_scaler,
    load_feature_table,
    write_feature_table,
    FeatureScaler,
)
from .graph import EdgePolicy, build_graph, load_graph, save_graph
from .gnn import load_checkpoint, save_checkpoint
from .synth import SynthSpec, generate_dataset
from .train import (
    TrainConfig,
    balance_graphs,
    load_config,
    train_ssl,
    train_supervised,
    write_history,
)
from .util import canonical_json_dumps, read_json, sha256_path, write_json


def _write_run_manifest(out_dir: Path, args: argparse.Namespace, inputs: dict) -> None:
    hashes = {}
    for name, path in inputs.items():
        p = Path(path)
        if p.exists():
            hashes[name] = sha256_path(p)
    flags = {k: (str(v) if isinstance(v, Path) else v)
             for k, v in sorted(vars(args).items()) if k != "func"}
    write_json(out_dir / "run_manifest.json", {
        "tool": "skillgraph",
        "version": __version__,
        "command": args.command,
        "flags": flags,
        "seed": getattr(args, "seed", None),
        "input_hashes": hashes,
    })


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_split_graphs(manifest, graphs_dir: Path, split: str | None):
    meta = read_json(graphs_dir / "graphs_meta.json")
    ids = sorted(manifest.split) if split is None else sorted(
        cid for cid, s in manifest.split.items() if s == split
    )
    graphs = [load_graph(graphs_dir / f"{cid}.json") for cid in ids]
    return graphs, meta


def _load_balanced_graphs(balanced_dir: Path):
    meta = read_json(balanced_dir / "graphs_meta.json")
    names = meta["graph_files"]
    return [load_graph(balanced_dir / name) for name in names], meta


# -- subcommand handlers --------------------------------------------------------


def cmd_synth(args) -> int:
    out = _out_dir(args)
    spec = SynthSpec(
        n_clips=args.n,
        class_proportions=tuple(args.proportions),
        seed=args.seed,
        mode=args.mode,
        frames_per_phase=args.frames_per_phase,
    )
    generate_dataset(spec, out)
    _write_run_manifest(out, args, {})
    print(f"wrote {args.n} clips to {out}")
    return 0


def cmd_extract(args) -> int:
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    report = validate_dataset(manifest)
    if not report.ok:
        print(report, file=sys.stderr)
        return 1
    vectors = []
    for clip in manifest.clips:
        if args.mode and clip.mode != args.mode:
            continue
        vectors.extend(clip_node_features(clip))
    if not vectors:
        print("no feature vectors extracted", file=sys.stderr)
        return 1
    write_feature_table(vectors, out / "features.csv")
    _write_run_manifest(out, args, {"manifest": args.manifest})
    print(f"wrote {len(vectors)} feature vectors to {out / 'features.csv'}")
    return 0


def _scaler_to_dict(s: FeatureScaler) -> dict:
    return {
        "mean": [float(v) for v in s.mean],
        "std": [float(v) for v in s.std],
        "constant": [bool(v) for v in s.constant],
        "feature_names": list(s.feature_names),
    }


def cmd_build_graphs(args) -> int:
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    vectors = load_feature_table(args.features)
    by_clip: dict[str, list] = {}
    for v in vectors:
        by_clip.setdefault(v.clip_id, []).append(v)

    train_ids = {cid for cid, s in manifest.split.items() if s == "train"}
    train_vectors = [v for v in vectors if v.clip_id in train_ids]
    scaler = fit_scaler(train_vectors)

    policy = EdgePolicy(args.temporal_weight, args.cooccurrence_weight)
    modes = set()
    written = []
    for clip in manifest.clips:
        if clip.clip_id not in by_clip:
            continue
        modes.add(clip.mode)
        scaled = [apply_scaler(scaler, v) for v in by_clip[clip.clip_id]]
        phase_order = [ph.phase_name for ph in clip.phases]
        g = build_graph(scaled, policy, phase_order, labels=dict(clip.labels))
        save_graph(g, out / f"{clip.clip_id}.json")
        written.append(clip.clip_id)
    if not written:
        print("no graphs built", file=sys.stderr)
        return 1
    mode = modes.pop() if len(modes) == 1 else "mixed"
    schema = feature_schema_id(mode)
    meta = {
        "feature_schema_id": schema,
        "mode": mode,
        "feature_names": list(vectors[0].feature_names),
        "scaler": _scaler_to_dict(scaler),
        "edge_policy": {
            "temporal_weight": policy.temporal_weight,
            "cooccurrence_weight": policy.cooccurrence_weight,
        },
        "graph_files": [f"{cid}.json" for cid in written],
    }
    meta["build_id"] = sha256_path(args.features)[:16]
    write_json(out / "graphs_meta.json", meta)
    _write_run_manifest(out, args, {"manifest": args.manifest, "features": args.features})
    print(f"wrote {len(written)} graphs to {out}")
    return 0


def cmd_balance(args) -> int:
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    graphs, meta = _load_split_graphs(manifest, Path(args.graphs), "train")
    rng = np.random.default_rng(args.seed)
    originals, synthetics = balance_graphs(graphs, args.category, args.k, rng)
    names = []
    for g in originals + synthetics:
        name = f"{g.clip_id}.json"
        save_graph(g, out / name)
        names.append(name)
    meta = dict(meta)
    meta["graph_files"] = names
    meta["balanced_category"] = args.category
    meta["synthetic_count"] = len(synthetics)
    write_json(out / "graphs_meta.json", meta)
    _write_run_manifest(out, args, {"manifest": args.manifest, "graphs": args.graphs})
    print(f"balanced training set: {len(originals)} originals + {len(synthetics)} synthetics")
    return 0


def _train_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = {"seed": args.seed}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if getattr(args, "mask_fraction", None) is not None:
        overrides["mask_fraction"] = args.mask_fraction
    if getattr(args, "lr0", None) is not None:
        overrides["lr0"] = args.lr0
    from dataclasses import replace

    return replace(cfg, **overrides)


def cmd_pretrain(args) -> int:
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    graphs, meta = _load_split_graphs(manifest, Path(args.graphs), "train")
    config = _train_config(args)
    model, history = train_ssl(
        graphs, config,
        feature_schema_id=meta["feature_schema_id"],
        dataset_build_id=meta.get("build_id", ""),
    )
    save_checkpoint(model, out / "checkpoint.json")
    write_history(history, out / "history.csv")
    _write_run_manifest(out, args, {"manifest": args.manifest, "graphs": args.graphs})
    print(f"pretrained encoder: final loss {history[-1].loss:.6f}")
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    if args.balanced:
        graphs, meta = _load_balanced_graphs(Path(args.balanced))
    else:
        graphs, meta = _load_split_graphs(manifest, Path(args.graphs), "train")
    config = _train_config(args)
    init = load_checkpoint(args.init) if args.init else None
    model, history = train_supervised(
        graphs, config, args.category,
        ordinal_scale=manifest.ordinal_scale,
        init=init,
        freeze_encoder=args.freeze_encoder,
        feature_schema_id=meta["feature_schema_id"],
        dataset_build_id=meta.get("build_id", ""),
    )
    save_checkpoint(model, out / "checkpoint.json")
    write_history(history, out / "history.csv")
    _write_run_manifest(out, args, {
        "manifest": args.manifest, "graphs": args.graphs or "",
        "balanced": args.balanced or "", "init": args.init or "",
    })
    print(f"trained {args.category!r}: final accuracy {history[-1].accuracy:.3f}")
    return 0


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    graphs, meta = _load_split_graphs(manifest, Path(args.graphs), args.split)
    model = load_checkpoint(args.checkpoint)
    if model.dataset_build_id and meta.get("build_id") and \
            model.dataset_build_id != meta["build_id"]:
        print(
            f"warning: checkpoint was trained on build {model.dataset_build_id!r}, "
            f"evaluating on {meta['build_id']!r}",
            file=sys.stderr,
        )
    mode = meta.get("mode")
    report = evaluate_model(
        model, graphs,
        category=args.category,
        mode=None if mode == "mixed" else mode,
        expected_schema_id=meta["feature_schema_id"],
    )
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    table = format_reports([(args.method_label, report)])
    (out / "report.txt").write_text(table, encoding="utf-8")
    _write_run_manifest(out, args, {
        "manifest": args.manifest, "graphs": args.graphs, "checkpoint": args.checkpoint,
    })
    print(table, end="")
    return 0


def cmd_baseline(args) -> int:
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    clips = manifest.clips_in_split(args.split) if args.split else manifest.clips
    truth = [c.labels[args.category] for c in clips if args.category in c.labels]
    if len(truth) < 2:
        print(f"not enough labels for category {args.category!r}", file=sys.stderr)
        return 1
    report = gaussian_baseline(
        truth, manifest.ordinal_scale, runs=args.runs, seed=args.seed,
        category=args.category,
    )
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    table = format_reports([("baseline", report)])
    (out / "report.txt").write_text(table, encoding="utf-8")
    _write_run_manifest(out, args, {"manifest": args.manifest})
    print(table, end="")
    return 0


def cmd_embed(args) -> int:
    out = _out_dir(args)
    manifest = load_manifest(args.manifest)
    graphs, meta = _load_split_graphs(manifest, Path(args.graphs), args.split)
    model = load_checkpoint(args.checkpoint)
    if model.feature_schema_id != meta["feature_schema_id"]:
        raise SkillGraphError(
            f"checkpoint feature schema {model.feature_schema_id!r} does not match "
            f"dataset schema {meta['feature_schema_id']!r}"
        )
    table = export_embeddings(model, graphs)
    write_embedding_csv(table, out / "embeddings.csv")
    _write_run_manifest(out, args, {
        "manifest": args.manifest, "graphs": args.graphs, "checkpoint": args.checkpoint,
    })
    print(f"wrote {len(table.rows)} embedding rows to {out / 'embeddings.csv'}")
    return 0


def cmd_project(args) -> int:
    out = _out_dir(args)
    table = load_embedding_csv(args.embeddings)
    if args.rows == "graph":
        table = table.graph_rows()
    elif args.rows == "nodes":
        from .explain import EmbeddingTable, GRAPH_ROW

        table = EmbeddingTable([r for r in table.rows if r.node_id != GRAPH_ROW])
    projection = pca_project(table, dim=2)
    write_projection_csv(projection, out / "projection.csv")
    ratios = [float(r) for r in projection.explained_variance_ratio]
    write_json(out / "explained_variance.json", {"ratios": ratios})
    if args.query:
        for cid, dist in nearest_exemplars(args.query, table, args.k):
            print(f"{cid}\t{dist:.6f}")
    _write_run_manifest(out, args, {"embeddings": args.embeddings})
    print(
        f"projection written to {out / 'projection.csv'} "
        f"(pc1 {ratios[0]:.3f}, pc2 {ratios[1]:.3f} of variance)"
    )
    return 0


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skillgraph",
        description="graph-attention skill assessment pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=0, help="master random seed")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    add_common(p)
    p.add_argument("--n", type=int, default=300, help="number of clips")
    p.add_argument("--proportions", type=float, nargs=3, default=[1 / 3, 1 / 3, 1 / 3],
                   metavar=("NOVICE", "INTERMEDIATE", "EXPERT"))
    p.add_argument("--mode", choices=["2D", "3D"], default="2D")
    p.add_argument("--frames-per-phase", type=int, default=150)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="tracks -> feature table CSV")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=["2D", "3D"], default=None,
                   help="only extract clips of this mode")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("build-graphs", help="feature table -> graph JSONs")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--temporal-weight", type=float, default=1.0)
    p.add_argument("--cooccurrence-weight", type=float, default=1.0)
    p.set_defaults(func=cmd_build_graphs)

    p = sub.add_parser("balance", help="oversample minority classes of the train split")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--graphs", required=True)
    p.add_argument("--category", default="Overall")
    p.add_argument("--k", type=int, default=7, help="neighbor count")
    p.set_defaults(func=cmd_balance)

    def add_train_common(p):
        add_common(p)
        p.add_argument("--manifest", required=True)
        p.add_argument("--graphs", required=True)
        p.add_argument("--config", default=None, help="TrainConfig JSON file")
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--lr0", type=float, default=None)

    p = sub.add_parser("pretrain", help="self-supervised spectral pretraining")
    add_train_common(p)
    p.add_argument("--mask-fraction", type=float, default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="supervised training for one category")
    add_train_common(p)
    p.add_argument("--category", default="Overall")
    p.add_argument("--balanced", default=None,
                   help="balanced graphs dir (overrides --graphs train split)")
    p.add_argument("--init", default=None, help="encoder checkpoint to warm-start from")
    p.add_argument("--freeze-encoder", action="store_true",
                   help="train only the linear head (linear probe)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a split")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--graphs", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--category", default=None, help="defaults to the checkpoint's")
    p.add_argument("--method-label", default="model")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="random Gaussian baseline report")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--category", default="Overall")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("embed", help="export node + graph embeddings")
    add_common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--graphs", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default=None, choices=["train", "val", "test"])
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("project", help="2-D projection of an embedding table")
    add_common(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--rows", default="all", choices=["all", "graph", "nodes"])
    p.add_argument("--query", default=None, help="print nearest exemplars of this clip")
    p.add_argument("--k", type=int, default=5, help="exemplar count for --query")
    p.set_defaults(func=cmd_project)

    return parser


def run(argv: list[str]) -> int:
    """Parse and execute; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command == "baseline" and args.split == "all":
        args.split = None
    try:
        return args.func(args)
    except SkillGraphError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
