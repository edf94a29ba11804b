"""``amricl`` command line.

Every subcommand accepts ``--config FILE.toml`` holding a flat table whose
keys are the subcommand's long-flag names with dashes as underscores.
Explicit flags override file values; unknown keys are rejected. The
resolved config is echoed to stderr as one JSON line.

Exit codes: 0 success, 1 experiment-level failure, 2 usage or I/O error.
Machine-readable output goes to stdout, everything else to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Callable, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__

log = logging.getLogger("amricl")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class ExperimentFailure(Exception):
    pass


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --- config resolution ------------------------------------------------------

def _config_actions(parser: argparse.ArgumentParser) -> dict[str, argparse.Action]:
    skip = {"help", "config", "verbose", "func"}
    return {a.dest: a for a in parser._actions if a.dest not in skip and a.option_strings}


def _coerce(action: argparse.Action, key: str, value):
    if isinstance(action, argparse.BooleanOptionalAction) or isinstance(action, argparse._StoreTrueAction):
        if not isinstance(value, bool):
            raise UsageError(f"config key {key!r} must be a boolean")
        return value
    if action.type is not None and not isinstance(value, (dict, list)):
        try:
            value = action.type(value)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"config key {key!r}: {exc}") from None
    if action.choices is not None and value not in action.choices:
        raise UsageError(f"config key {key!r} must be one of {sorted(action.choices)}")
    return value


def resolve(args: argparse.Namespace, parser: argparse.ArgumentParser, defaults: dict) -> dict:
    """defaults, then the TOML file, then explicitly given flags."""
    actions = _config_actions(parser)
    cfg = dict(defaults)
    if getattr(args, "config", None):
        try:
            doc = tomllib.loads(Path(args.config).read_text("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"{args.config}: {exc}") from None
        unknown = sorted(set(doc) - set(actions))
        if unknown:
            raise UsageError(f"{args.config}: unknown config key(s) {unknown}")
        for k, v in doc.items():
            cfg[k] = _coerce(actions[k], k, v)
    for dest in actions:
        v = getattr(args, dest, None)
        if v is not None:
            cfg[dest] = v
    _say("config " + json.dumps(cfg, sort_keys=True))
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise UsageError(f"missing required setting {k!r} (flag --{k.replace('_', '-')})")


def _existing(path: Optional[str], what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {path}")
    return p


# --- subcommands ------------------------------------------------------------

def cmd_parse(args, parser) -> int:
    from .penman import _blocks, parse_corpus, serialize_penman
    from .graph import GraphError

    cfg = resolve(args, parser, {"input": args.input, "out": None})
    path = _existing(cfg["input"], "input")
    text = path.read_text("utf-8")
    lines = text.splitlines(keepends=True)
    n_blocks = sum(1 for _ in _blocks(lines))
    entries, diags = parse_corpus(lines)
    errors = [d for d in diags if d.severity == "error"]
    warns = [d for d in diags if d.severity != "error"]
    failed_blocks = n_blocks - len(entries) - len(warns)
    for d in diags:
        _say(f"{path}:{d}")
    if cfg["out"]:
        with open(cfg["out"], "w", encoding="utf-8") as fh:
            for i, (doc, g) in enumerate(entries):
                try:
                    flat = serialize_penman(g, indent=None)
                except GraphError:
                    flat = None
                fh.write(json.dumps({
                    "index": i, "line": doc.start_line, "meta": doc.metadata, "root": g.root,
                    "nodes": [[n.var, n.concept, n.is_constant] for n in g.nodes],
                    "edges": [[e.source, e.role, e.target] for e in g.edges],
                    "penman": flat}, sort_keys=True) + "\n")
    _emit({"config": cfg, "blocks": n_blocks, "parsed": len(entries), "failed": failed_blocks,
           "warnings": failed_blocks + len(warns), "errors": len(errors)})
    if not entries:
        _say("no block parsed")
        return EXIT_FAIL
    return EXIT_OK


def _ct_corpus(path: Path, split: str):
    """Linearised training graphs: path-marked for a manifest, whole graphs for a PENMAN corpus."""
    from .graph import linearize, shortest_amr_path
    from .penman import parse_corpus

    if path.suffix == ".json":
        from .evaluation import ingest_dataset

        ds = ingest_dataset(path)
        if split not in ds.splits:
            raise UsageError(f"split {split!r} not in manifest")
        out = []
        for ex in ds.splits[split]:
            if ex.alignable:
                sap = shortest_amr_path(ex.graph, ex.obj_node, ex.sub_node)
                out.append(linearize(ex.graph).with_path_vars(sap.node_vars))
        return out
    with open(path, encoding="utf-8") as fh:
        entries, diags = parse_corpus(fh)
    for d in diags:
        _say(f"{path}:{d}")
    return [linearize(g) for _, g in entries]


def cmd_train_ct(args, parser) -> int:
    from .encoder.checkpoint import save_checkpoint
    from .encoder.ct import CtConfig, TrainingDiverged, train_ct
    from .report import plot_loss, write_loss_csv

    ct_defaults = CtConfig()
    defaults = {"corpus": args.corpus, "checkpoint_out": "ct.arep", "loss_out": None, "split": "train",
                **{f.name: getattr(ct_defaults, f.name) for f in fields(CtConfig)},
                "pooling": "sap_mean" if Path(args.corpus).suffix == ".json" else "all_nodes_mean"}
    cfg = resolve(args, parser, defaults)
    corpus = _ct_corpus(_existing(cfg["corpus"], "corpus"), cfg["split"])
    if len(corpus) <= cfg["batch_size"]:
        raise UsageError(f"corpus has {len(corpus)} usable graphs; need more than batch_size={cfg['batch_size']}")
    config = CtConfig(**{f.name: cfg[f.name] for f in fields(CtConfig)})
    try:
        res = train_ct(corpus, config)
    except TrainingDiverged as exc:
        _say(f"training diverged at step {exc.step}")
        raise ExperimentFailure(str(exc)) from None
    ckpt = Path(cfg["checkpoint_out"])
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, res.params, res.vocab)
    loss_csv = Path(cfg["loss_out"] or ckpt.with_suffix(".loss.csv"))
    write_loss_csv(res.losses, loss_csv)
    plot_loss(res.losses, loss_csv.with_suffix(".png"))
    _emit({"config": cfg, "checkpoint": str(ckpt), "checkpoint_sha256": _sha256(ckpt),
           "loss_csv": str(loss_csv), "steps": len(res.losses), "graphs": len(corpus),
           "vocab": len(res.vocab), "first_loss": res.losses[0], "last_loss": res.losses[-1]})
    return EXIT_OK


def _experiment_config(cfg: dict):
    from .evaluation import ExperimentConfig

    names = {f.name for f in fields(ExperimentConfig)}
    kw = {k: v for k, v in cfg.items() if k in names and v is not None}
    if kw.get("pooling") == "concat":
        kw["pooling"] = "concatenation"
    _require(cfg, "manifest")
    _existing(cfg["manifest"], "manifest")
    try:
        return ExperimentConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_embed(args, parser) -> int:
    from .evaluation import ExperimentError, check_alignment, embed_examples, ingest_dataset, make_encoder
    from .retrieval import save_vectors

    cfg = resolve(args, parser, {"manifest": None, "split": "train", "checkpoint": None,
                                 "path_mode": "path_only", "pooling": "mean", "setting": "unsupervised",
                                 "normalize_parts": False, "structural_dim": 256,
                                 "max_unalignable_rate": 0.25, "out": None, "seed": 0})
    _require(cfg, "out")
    config = _experiment_config(cfg)
    ds = ingest_dataset(config.manifest)
    try:
        check_alignment(ds, config)
    except ExperimentError as exc:
        _say(f"{exc}: {', '.join(exc.details)}")
        raise ExperimentFailure(str(exc)) from None
    if not config.checkpoint:
        _say(f"no checkpoint given: using the structural encoder (dim {config.structural_dim})")
    names = sorted(ds.splits) if cfg["split"] == "all" else [cfg["split"]]
    for n in names:
        if n not in ds.splits:
            raise UsageError(f"split {n!r} not in manifest")
    encoder = make_encoder(config)
    records = [r for n in names for r in embed_examples(ds.splits[n], ds, config, encoder)]
    skipped = sum(len(ds.splits[n]) for n in names) - len(records)
    if not records:
        raise ExperimentFailure("no example could be embedded")
    save_vectors(cfg["out"], records)
    _emit({"config": cfg, "out": cfg["out"], "count": len(records), "dim": len(records[0].vector),
           "skipped_unalignable": skipped, "encoder": encoder.name, "sha256": _sha256(cfg["out"])})
    return EXIT_OK


def cmd_index(args, parser) -> int:
    from .retrieval import VectorRecord, build_index, load_vectors, save_vectors

    cfg = resolve(args, parser, {"vectors": args.vectors, "metric": "cosine", "out": None})
    records = load_vectors(_existing(cfg["vectors"], "vector file"))
    index = build_index(records, cfg["metric"])
    for rid in index.rejected:
        _say(f"rejected {rid}: zero vector under cosine metric")
    if cfg["out"]:
        save_vectors(cfg["out"], [VectorRecord(i, index.matrix[n], index.labels[n])
                                  for n, i in enumerate(index.ids)])
    _emit({"config": cfg, "count": len(index), "dim": index.dim, "metric": index.metric,
           "rejected": list(index.rejected)})
    return EXIT_OK


def cmd_retrieve(args, parser) -> int:
    from .evaluation import retrieval_label_purity
    from .retrieval import build_index, knn, load_vectors

    cfg = resolve(args, parser, {"index": None, "queries": None, "k": 10, "metric": "cosine",
                                 "exclude_self": False})
    _require(cfg, "index")
    store = load_vectors(_existing(cfg["index"], "index vectors"))
    queries = load_vectors(_existing(cfg["queries"], "query vectors")) if cfg["queries"] else store
    index = build_index(store, cfg["metric"])
    for q in queries:
        res = knn(index, q.vector, cfg["k"], exclude=(q.id,) if cfg["exclude_self"] else ())
        _emit({"id": q.id, "neighbors": list(res.ids), "scores": list(res.scores)})
    if all(q.label is not None for q in queries):
        purity = retrieval_label_purity(store, index, cfg["k"], queries, cfg["exclude_self"])
        _say(f"label purity at k={cfg['k']}: {purity:.4f}")
    return EXIT_OK


def cmd_prompt(args, parser) -> int:
    from .evaluation import prepare_prompts

    cfg = resolve(args, parser, {**_EXPERIMENT_DEFAULTS, "id": None})
    config = _experiment_config(cfg)
    only = [cfg["id"]] if cfg["id"] else None
    _, _, jobs = prepare_prompts(config, only=only)
    if not jobs:
        raise ExperimentFailure("no test examples")
    job = jobs[0]
    if job.prompt is None:
        raise ExperimentFailure(f"{job.id}: entities are unalignable, no prompt is built")
    _say(f"{job.id}: {len(job.neighbors)} demonstration(s): {', '.join(job.neighbors)}")
    sys.stdout.write(job.prompt)
    return EXIT_OK


def cmd_eval(args, parser) -> int:
    from dataclasses import replace

    from .evaluation import ExperimentError, run_experiment
    from .prompting import FixtureError
    from .report import plot_ksweep, write_experiment_figures, write_ksweep_csv

    cfg = resolve(args, parser, {**_EXPERIMENT_DEFAULTS, "k_sweep": None})
    config = _experiment_config(cfg)
    if config.fixtures and config.backend == "replay":
        _existing(config.fixtures, "fixtures")
    ks = [int(x) for x in str(cfg["k_sweep"]).split(",") if x.strip()] if cfg["k_sweep"] else [config.k]
    out_root = Path(config.out_dir) if config.out_dir else None
    reports = []
    try:
        for k in ks:
            out = None
            if out_root is not None:
                out = out_root / f"k{k}" if len(ks) > 1 else out_root
            rc = replace(config, k=k, out_dir=str(out) if out else None)
            rep = run_experiment(rc)
            if out is not None:
                write_experiment_figures(rep, out)
            _say(f"k={k}: micro P={rep.micro_precision:.4f} R={rep.micro_recall:.4f} F1={rep.micro_f1:.4f} "
                 f"({rep.null_mode})")
            reports.append(rep)
    except (ExperimentError, FixtureError) as exc:
        _say(f"experiment failed: {exc}")
        for d in getattr(exc, "details", None) or getattr(exc, "keys", []):
            _say(f"  {d}")
        raise ExperimentFailure(str(exc)) from None
    if len(reports) == 1:
        _emit({"config": cfg, "report": reports[0].to_dict(), "report_sha256": reports[0].digest()})
    else:
        if out_root is not None:
            write_ksweep_csv(reports, out_root / "ksweep.csv")
            plot_ksweep(reports, out_root / "ksweep.png")
        _emit({"config": cfg, "reports": [{"k": r.k, "micro_f1": r.micro_f1,
                                           "config_fingerprint": r.config_fingerprint,
                                           "report_sha256": r.digest()} for r in reports]})
    return EXIT_OK


_EXPERIMENT_DEFAULTS = {
    "manifest": None, "retriever": "amr", "setting": "unsupervised", "path_mode": "path_only",
    "pooling": "mean", "k": 10, "metric": "cosine", "normalize_parts": False, "checkpoint": None,
    "structural_dim": 256, "backend": "replay", "fixtures": None, "record": False, "echo_text": "NULL",
    "max_in_flight": 4, "template": None, "null_mode": "exclude_null", "max_unalignable_rate": 0.25,
    "seed": 0, "jobs": 1, "out_dir": None,
}


# --- parser -----------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat TOML file of settings; flags override it")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--jobs", type=int, help="parallel workers for batch operations (default 1)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="dataset manifest JSON")
    p.add_argument("--retriever", choices=("amr", "sentence", "random"), help="demonstration selector (default amr)")
    p.add_argument("--setting", choices=("unsupervised", "supervised"),
                   help="unsupervised: graph key only; supervised: graph key plus sentence vector")
    p.add_argument("--rep", "--path-mode", dest="path_mode", choices=("path_only", "graph_enhanced"),
                   help="encode the isolated path or the whole graph (default path_only)")
    p.add_argument("--pool", "--pooling", dest="pooling", choices=("mean", "concat", "concatenation"),
                   help="path readout (default mean)")
    p.add_argument("--k", type=int, help="demonstrations per prompt (default 10)")
    p.add_argument("--metric", choices=("cosine", "dot", "euclidean"), help="retrieval metric (default cosine)")
    p.add_argument("--normalize-parts", action=argparse.BooleanOptionalAction,
                   help="L2-normalise graph and sentence parts before concatenation")
    p.add_argument("--checkpoint", help="AREP encoder checkpoint; omit for the structural encoder")
    p.add_argument("--structural-dim", type=int, help="structural encoder width (default 256)")
    p.add_argument("--backend", choices=("replay", "http", "echo"), help="LLM client (default replay)")
    p.add_argument("--fixtures", help="JSONL fixture store for replay or recording")
    p.add_argument("--record", action=argparse.BooleanOptionalAction,
                   help="with --backend http, append responses to --fixtures")
    p.add_argument("--echo-text", help="completion returned by the echo backend")
    p.add_argument("--max-in-flight", type=int, help="bound on concurrent HTTP requests (default 4)")
    p.add_argument("--template", help="prompt template TOML (default: packaged v1)")
    p.add_argument("--null-mode", choices=("exclude_null", "accuracy"), help="Micro-F1 NULL policy")
    p.add_argument("--max-unalignable-rate", type=float, help="abort above this unalignable fraction")
    p.add_argument("--out-dir", help="directory for report.json, trace.jsonl, CSV and figures")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amricl", description="AMR-graph demonstration retrieval for "
                                     "in-context relation extraction.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="validate a PENMAN corpus and dump graphs")
    p.add_argument("input", help="PENMAN corpus file (blank-line separated blocks)")
    p.add_argument("--out", help="write parsed graphs as JSONL")
    _common(p)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("train-ct", help="train the graph encoder with contrastive tension")
    p.add_argument("corpus", help="PENMAN corpus, or a dataset manifest (.json) to train on path readouts")
    p.add_argument("--checkpoint-out", help="AREP output path (default ct.arep)")
    p.add_argument("--loss-out", help="loss-trace CSV (default next to the checkpoint)")
    p.add_argument("--split", help="manifest split to train on (default train)")
    p.add_argument("--epochs", type=int, help="passes over the corpus (default 1)")
    p.add_argument("--lr", type=float, help="SGD learning rate (default 1e-5)")
    p.add_argument("--dropout", type=float, help="dropout rate (default 0.1)")
    p.add_argument("--d", type=int, help="adapter width (default 128)")
    p.add_argument("--n-layers", type=int, help="message-passing rounds (default 2)")
    p.add_argument("--batch-size", type=int, help="pairs per batch (default 16)")
    p.add_argument("--positive-count", type=int, help="positive pairs per batch (default 4)")
    p.add_argument("--pooling", choices=("sap_mean", "all_nodes_mean"),
                   help="graph readout (default: sap_mean for manifests, all_nodes_mean for corpora)")
    p.add_argument("--twin", action=argparse.BooleanOptionalAction, help="train two encoder copies")
    p.add_argument("--canonical-negative", action=argparse.BooleanOptionalAction,
                   help="use -log sigmoid(-s) for negatives")
    p.add_argument("--max-tokens", type=int, help="truncate linearisations to this length (default 256)")
    p.add_argument("--min-count", type=int, help="vocabulary frequency cut-off (default 1)")
    _common(p)
    p.set_defaults(func=cmd_train_ct)

    p = sub.add_parser("embed", help="write relation vectors for a dataset split")
    p.add_argument("--manifest", help="dataset manifest JSON")
    p.add_argument("--split", help="train, test, dev or all (default train)")
    p.add_argument("--checkpoint", help="AREP encoder checkpoint; omit for the structural encoder")
    p.add_argument("--rep", "--path-mode", dest="path_mode", choices=("path_only", "graph_enhanced"),
                   help="encode the isolated path or the whole graph (default path_only)")
    p.add_argument("--pool", "--pooling", dest="pooling", choices=("mean", "concat", "concatenation"),
                   help="path readout (default mean)")
    p.add_argument("--setting", choices=("unsupervised", "supervised"),
                   help="supervised appends the manifest's sentence vectors")
    p.add_argument("--normalize-parts", action=argparse.BooleanOptionalAction,
                   help="L2-normalise graph and sentence parts before concatenation")
    p.add_argument("--structural-dim", type=int, help="structural encoder width (default 256)")
    p.add_argument("--max-unalignable-rate", type=float, help="abort above this unalignable fraction")
    p.add_argument("--out", help="AREV output path")
    _common(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("index", help="validate a vector file as a retrieval index")
    p.add_argument("vectors", help="AREV vector file")
    p.add_argument("--metric", choices=("cosine", "dot", "euclidean"), help="retrieval metric (default cosine)")
    p.add_argument("--out", help="write the stored (possibly normalised) vectors as AREV")
    _common(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("retrieve", help="k nearest neighbours for query vectors")
    p.add_argument("--index", help="AREV store to search")
    p.add_argument("--queries", help="AREV queries (default: the store itself)")
    p.add_argument("--k", type=int, help="neighbours per query (default 10)")
    p.add_argument("--metric", choices=("cosine", "dot", "euclidean"), help="retrieval metric (default cosine)")
    p.add_argument("--exclude-self", action=argparse.BooleanOptionalAction,
                   help="drop a query's own id from its neighbours")
    _common(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("prompt", help="print the prompt for one test example")
    _experiment_flags(p)
    p.add_argument("--id", help="test example id (default: first by id)")
    _common(p)
    p.set_defaults(func=cmd_prompt)

    p = sub.add_parser("eval", help="run the full experiment and score it")
    _experiment_flags(p)
    p.add_argument("--k-sweep", help="comma-separated k values, one report each")
    _common(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    from .encoder.checkpoint import CheckpointError
    from .evaluation import DatasetError
    from .penman import PenmanError
    from .prompting import PromptError
    from .retrieval import VectorFileError

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    func: Callable = args.func
    try:
        return func(args, sub)
    except ExperimentFailure:
        return EXIT_FAIL
    except (UsageError, OSError, DatasetError, PenmanError, PromptError, VectorFileError,
            CheckpointError, ValueError) as exc:
        _say(f"error: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
