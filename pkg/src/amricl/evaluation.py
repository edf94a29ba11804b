"""Dataset ingestion, Micro-F1, retrieval purity and the experiment runner.

Dataset files are JSONL, one example per line::

    {"id": ..., "text": ..., "subj": {"mention", "span", "type", "amr_var"},
     "obj": {...}, "penman": [one or two PENMAN strings], "label": ...,
     "sent_vector_ref": ...}

A manifest (JSON) names the label set, the null label and the split files;
relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .encoder.checkpoint import load_checkpoint
from .encoder.model import TrainedEncoder
from .encoder.structural import StructuralEncoder
from .graph import AmrGraph, GraphError, find_entity_node, merge_pair, shortest_amr_path
from .penman import PenmanError, parse_penman
from .prompting import (Demonstration, EchoClient, FixtureStore, HttpClient, LlmClient, LlmRequest,
                        PromptSpec, RecordingClient, ReplayClient, build_prompt, normalize_label, prompt_key)
from .representation import (RepresentationConfig, SentenceReRepresentation, graph_representation,
                             relation_representation)
from .retrieval import VectorRecord, build_index, knn, load_vectors, stratified_random

log = logging.getLogger(__name__)

RETRIEVERS = ("amr", "sentence", "random")
SETTINGS = ("unsupervised", "supervised")
NULL_MODES = ("exclude_null", "accuracy")
BACKENDS = ("replay", "http", "echo")


class DatasetError(ValueError):
    pass


class ExperimentError(RuntimeError):
    def __init__(self, message: str, details: Optional[list] = None):
        super().__init__(message)
        self.details = details or []


# --- dataset ---------------------------------------------------------------

@dataclass(frozen=True)
class Entity:
    mention: str
    span: tuple[int, int]
    type: str
    amr_var: Optional[str] = None


@dataclass(frozen=True, eq=False)
class RelationExample:
    id: str
    text: str
    subj: Entity
    obj: Entity
    penman: tuple[str, ...]
    label: str
    sent_vector_ref: Optional[str] = None
    graph: Optional[AmrGraph] = None
    obj_node: Optional[str] = None
    sub_node: Optional[str] = None
    unalignable: Optional[str] = None

    @property
    def alignable(self) -> bool:
        return self.unalignable is None

    def demonstration(self, label: Optional[str] = None) -> Demonstration:
        return Demonstration(self.text, self.subj.mention, self.obj.mention, label)


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    label_set: tuple[str, ...]
    splits: dict
    null_label: str = "NULL"
    sentence_vectors: Optional[str] = None
    null_aliases: tuple[str, ...] = ()
    root: Path = Path(".")

    def path(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def files(self) -> list[Path]:
        out = [self.path(p) for _, p in sorted(self.splits.items())]
        if self.sentence_vectors:
            out.append(self.path(self.sentence_vectors))
        return out


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON ({exc})") from None
    known = {"name", "label_set", "splits", "null_label", "sentence_vectors", "null_aliases"}
    unknown = set(doc) - known
    if unknown:
        raise DatasetError(f"{path}: unknown manifest key(s) {sorted(unknown)}")
    for key in ("name", "label_set", "splits"):
        if key not in doc:
            raise DatasetError(f"{path}: manifest missing {key!r}")
    m = DatasetManifest(doc["name"], tuple(doc["label_set"]), dict(doc["splits"]),
                        doc.get("null_label", "NULL"), doc.get("sentence_vectors"),
                        tuple(doc.get("null_aliases", ())), path.parent)
    if m.null_label in m.label_set:
        raise DatasetError(f"{path}: null label {m.null_label!r} must not be in label_set")
    if "train" not in m.splits or "test" not in m.splits:
        raise DatasetError(f"{path}: splits must include train and test")
    return m


def _entity(obj, rid: str, role: str, text: str) -> Entity:
    if not isinstance(obj, dict):
        raise DatasetError(f"record {rid}: {role} must be an object")
    try:
        mention, span, etype = obj["mention"], obj["span"], obj["type"]
    except KeyError as exc:
        raise DatasetError(f"record {rid}: {role} missing {exc.args[0]!r}") from None
    if (not isinstance(span, list) or len(span) != 2 or not all(isinstance(x, int) for x in span)
            or not 0 <= span[0] < span[1] <= len(text)):
        raise DatasetError(f"record {rid}: {role} span {span} is not inside the text")
    return Entity(str(mention), (span[0], span[1]), str(etype), obj.get("amr_var"))


def _align(ex: RelationExample, graph: AmrGraph) -> RelationExample:
    try:
        o = find_entity_node(graph, ex.obj.mention, ex.obj.amr_var)
        s = find_entity_node(graph, ex.subj.mention, ex.subj.amr_var)
        if o == s:
            raise GraphError("subject and object align to the same node")
        shortest_amr_path(graph, o, s)
    except GraphError as exc:
        return replace(ex, graph=graph, unalignable=str(exc))
    return replace(ex, graph=graph, obj_node=o, sub_node=s)


def parse_record(obj: dict, manifest: DatasetManifest, where: str = "") -> RelationExample:
    rid = obj.get("id") if isinstance(obj, dict) else None
    if not isinstance(rid, str) or not rid:
        raise DatasetError(f"{where}: record without a string id")
    for key in ("text", "subj", "obj", "penman"):
        if key not in obj:
            raise DatasetError(f"record {rid}: missing field {key!r}")
    known = {"id", "text", "subj", "obj", "penman", "label", "sent_vector_ref"}
    if set(obj) - known:
        raise DatasetError(f"record {rid}: unknown field(s) {sorted(set(obj) - known)}")
    text = obj["text"]
    if not isinstance(text, str):
        raise DatasetError(f"record {rid}: text must be a string")
    label = obj.get("label")
    if label is None or label == manifest.null_label or label in manifest.null_aliases:
        label = manifest.null_label
    elif label not in manifest.label_set:
        raise DatasetError(f"record {rid}: label {label!r} is not in the label set")
    blocks = obj["penman"]
    if isinstance(blocks, str):
        blocks = [blocks]
    if not isinstance(blocks, list) or not 1 <= len(blocks) <= 2 or not all(isinstance(b, str) for b in blocks):
        raise DatasetError(f"record {rid}: penman must hold 1 or 2 strings")
    ex = RelationExample(rid, text, _entity(obj["subj"], rid, "subj", text),
                         _entity(obj["obj"], rid, "obj", text), tuple(blocks), label,
                         obj.get("sent_vector_ref"))
    try:
        graphs = [parse_penman(b) for b in blocks]
    except PenmanError as exc:
        raise DatasetError(f"record {rid}: penman does not parse ({exc})") from None
    graph = graphs[0] if len(graphs) == 1 else merge_pair(graphs[0], graphs[1])
    return _align(ex, graph)


def read_split(path: Union[str, Path], manifest: DatasetManifest) -> list[RelationExample]:
    out, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{n}: invalid JSON ({exc})") from None
            ex = parse_record(obj, manifest, f"{path}:{n}")
            if ex.id in seen:
                raise DatasetError(f"record {ex.id}: duplicate id")
            seen.add(ex.id)
            out.append(ex)
    return out


@dataclass
class Dataset:
    manifest: DatasetManifest
    splits: dict[str, list[RelationExample]]
    sentence_vectors: Optional[dict[str, np.ndarray]] = None

    @property
    def train(self) -> list[RelationExample]:
        return self.splits["train"]

    @property
    def test(self) -> list[RelationExample]:
        return self.splits["test"]

    def unalignable(self) -> list[str]:
        return sorted(ex.id for exs in self.splits.values() for ex in exs if not ex.alignable)

    def sentence_vector(self, ex: RelationExample) -> np.ndarray:
        if self.sentence_vectors is None:
            raise ExperimentError(f"dataset {self.manifest.name} has no sentence vectors")
        ref = ex.sent_vector_ref or ex.id
        if ref not in self.sentence_vectors:
            raise ExperimentError(f"record {ex.id}: sentence vector {ref!r} not found")
        return self.sentence_vectors[ref]


def ingest_dataset(manifest: Union[DatasetManifest, str, Path]) -> Dataset:
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    splits = {name: read_split(manifest.path(p), manifest) for name, p in sorted(manifest.splits.items())}
    owner: dict[str, str] = {}
    for name, exs in splits.items():
        for ex in exs:
            if ex.id in owner:
                raise DatasetError(f"record {ex.id}: appears in splits {owner[ex.id]} and {name}")
            owner[ex.id] = name
    vectors = None
    if manifest.sentence_vectors:
        vectors = {r.id: r.vector for r in load_vectors(manifest.path(manifest.sentence_vectors))}
    ds = Dataset(manifest, splits, vectors)
    bad = ds.unalignable()
    if bad:
        log.warning("%d unalignable example(s) in %s", len(bad), manifest.name)
    return ds


# --- scoring ---------------------------------------------------------------

@dataclass
class EvalReport:
    micro_precision: float
    micro_recall: float
    micro_f1: float
    counts: dict
    per_label: dict
    null_mode: str
    n_examples: int
    config_fingerprint: str = ""
    k: Optional[int] = None
    retriever: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    # 2PR/(P+R) in count form: one rounding step, so exact fractions stay exact
    f = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return p, r, f


def micro_f1(preds: dict, golds: dict, null_label: str = "NULL", mode: str = "exclude_null") -> EvalReport:
    """Corpus-level P/R/F1.

    ``exclude_null`` treats the null label as a non-answer; ``accuracy`` counts
    every class, which makes P = R = F1 = accuracy.
    """
    if mode not in NULL_MODES:
        raise ValueError(f"mode must be one of {NULL_MODES}")
    if set(preds) != set(golds):
        missing = sorted(set(golds) ^ set(preds))
        raise ValueError(f"prediction and gold ids differ: {missing[:10]}")
    labels = sorted({*preds.values(), *golds.values()})
    if mode == "exclude_null":
        labels = [lab for lab in labels if lab != null_label]
    per = {lab: {"tp": 0, "fp": 0, "fn": 0, "support": 0} for lab in labels}
    for i, gold in golds.items():
        pred = preds[i]
        if gold in per:
            per[gold]["support"] += 1
        if pred == gold:
            if gold in per:
                per[gold]["tp"] += 1
            continue
        if pred in per:
            per[pred]["fp"] += 1
        if gold in per:
            per[gold]["fn"] += 1
    tp = sum(v["tp"] for v in per.values())
    fp = sum(v["fp"] for v in per.values())
    fn = sum(v["fn"] for v in per.values())
    if mode == "accuracy":
        wrong = len(golds) - tp
        fp = fn = wrong
    for v in per.values():
        v["precision"], v["recall"], v["f1"] = _prf(v["tp"], v["fp"], v["fn"])
    p, r, f = _prf(tp, fp, fn)
    return EvalReport(p, r, f, {"tp": tp, "fp": fp, "fn": fn}, per, mode, len(golds))


def retrieval_label_purity(store: Sequence[VectorRecord], index, k: int,
                           queries: Optional[Sequence[VectorRecord]] = None,
                           exclude_self: bool = False) -> float:
    """Mean over queries of the fraction of top-k neighbours sharing the query label."""
    if k < 1:
        raise ValueError("k must be >= 1")
    queries = store if queries is None else queries
    if not queries:
        raise ValueError("no queries")
    total = 0.0
    for q in queries:
        res = knn(index, q.vector, k, exclude=(q.id,) if exclude_self else ())
        if res.ids:
            total += sum(index.labels[index.position[i]] == q.label for i in res.ids) / len(res.ids)
    return total / len(queries)


def random_label_purity(store: Sequence[VectorRecord], queries: Sequence[VectorRecord], k: int,
                        seed: int = 0) -> float:
    """Purity of the stratified-random selector, one seeded draw per query."""
    labels = {r.id: r.label for r in store}
    total = 0.0
    for n, q in enumerate(queries):
        ids = stratified_random(store, k, [seed, n])
        total += sum(labels[i] == q.label for i in ids) / len(ids)
    return total / len(queries)


# --- experiments -----------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    manifest: str
    retriever: str = "amr"
    setting: str = "unsupervised"
    path_mode: str = "path_only"
    pooling: str = "mean"
    k: int = 10
    metric: str = "cosine"
    normalize_parts: bool = False
    checkpoint: Optional[str] = None
    structural_dim: int = 256
    backend: str = "replay"
    fixtures: Optional[str] = None
    record: bool = False
    echo_text: str = "NULL"
    max_in_flight: int = 4
    template: Optional[str] = None
    null_mode: str = "exclude_null"
    max_unalignable_rate: float = 0.25
    seed: int = 0
    jobs: int = 1
    out_dir: Optional[str] = None

    def __post_init__(self):
        for name, allowed in (("retriever", RETRIEVERS), ("setting", SETTINGS),
                              ("null_mode", NULL_MODES), ("backend", BACKENDS)):
            if getattr(self, name) not in allowed:
                raise ValueError(f"{name} must be one of {allowed}")
        RepresentationConfig(self.path_mode, self.pooling)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    @property
    def rep_config(self) -> RepresentationConfig:
        return RepresentationConfig(self.path_mode, self.pooling)


# Fields that do not change what is computed for a given k.
_UNFINGERPRINTED = ("k", "jobs", "out_dir", "max_in_flight")
_PATH_FIELDS = ("checkpoint", "fixtures", "template")


def _file_digest(paths: Sequence[Path]) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


def config_fingerprint(config: ExperimentConfig) -> str:
    """Hash of the canonical config with file paths replaced by content digests."""
    doc = {f.name: getattr(config, f.name) for f in fields(config) if f.name not in _UNFINGERPRINTED}
    manifest = load_manifest(config.manifest)
    doc["manifest"] = _file_digest([Path(config.manifest), *manifest.files()])
    for name in _PATH_FIELDS:
        if doc[name] is not None and Path(doc[name]).exists():
            doc[name] = _file_digest([Path(doc[name])])
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def make_encoder(config: ExperimentConfig):
    if config.checkpoint:
        params, vocab = load_checkpoint(config.checkpoint)
        return TrainedEncoder(params, vocab)
    return StructuralEncoder(config.structural_dim, config.seed)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def relation_key(ex: RelationExample, ds: Dataset, config: ExperimentConfig, encoder) -> np.ndarray:
    """Retrieval key for one example under the configured retriever and setting."""
    if config.retriever == "sentence":
        return np.asarray(ds.sentence_vector(ex), dtype=np.float64)
    g = graph_representation(ex.graph, ex.obj_node, ex.sub_node, config.rep_config, encoder)
    sent = None
    if config.setting == "supervised":
        sent = SentenceReRepresentation(np.asarray(ds.sentence_vector(ex), dtype=np.float64), ex.id)
    if config.normalize_parts:
        g = replace(g, vector=_unit(g.vector))
        sent = sent and replace(sent, vector=_unit(sent.vector))
    return relation_representation(g, sent).vector


def embed_examples(examples: Sequence[RelationExample], ds: Dataset, config: ExperimentConfig,
                   encoder) -> list[VectorRecord]:
    """Vector records for every example that can be keyed (unalignable ones are skipped for amr)."""
    out = []
    for ex in examples:
        if config.retriever == "amr" and not ex.alignable:
            continue
        out.append(VectorRecord(ex.id, relation_key(ex, ds, config, encoder), ex.label))
    return out


@dataclass(frozen=True)
class PromptJob:
    id: str
    gold: str
    prompt: Optional[str]
    neighbors: tuple[str, ...] = ()
    scores: tuple[float, ...] = ()
    unalignable: bool = False


def check_alignment(ds: Dataset, config: ExperimentConfig) -> None:
    if config.retriever != "amr":
        return
    bad = ds.unalignable()
    total = sum(len(v) for v in ds.splits.values())
    rate = len(bad) / total if total else 0.0
    if rate > config.max_unalignable_rate:
        raise ExperimentError(f"unalignable-entity rate {rate:.3f} exceeds {config.max_unalignable_rate}",
                              bad)


def prepare_prompts(config: ExperimentConfig, ds: Optional[Dataset] = None,
                    only: Optional[Sequence[str]] = None) -> tuple[Dataset, PromptSpec, list[PromptJob]]:
    """Retrieve demonstrations and render one prompt per test example, without querying."""
    ds = ds or ingest_dataset(config.manifest)
    check_alignment(ds, config)
    m = ds.manifest
    spec = PromptSpec.from_template(m.label_set, m.null_label, config.template)
    train = {ex.id: ex for ex in ds.train}
    tests = sorted(ds.test, key=lambda ex: ex.id)
    if only is not None:
        wanted = set(only)
        unknown = wanted - {ex.id for ex in tests}
        if unknown:
            raise DatasetError(f"unknown test id(s): {sorted(unknown)}")
        tests = [ex for ex in tests if ex.id in wanted]

    def demo(ex: RelationExample) -> Demonstration:
        return ex.demonstration(ex.label)

    jobs: list[PromptJob] = []
    if config.retriever == "random":
        store = [VectorRecord(ex.id, np.zeros(1), ex.label) for ex in ds.train]
        order = {ex.id: n for n, ex in enumerate(sorted(ds.test, key=lambda e: e.id))}
        for ex in tests:
            ids = stratified_random(store, config.k, [config.seed, order[ex.id]])
            prompt = build_prompt(spec, [demo(train[i]) for i in ids], ex.demonstration())
            jobs.append(PromptJob(ex.id, ex.label, prompt, tuple(ids), (), not ex.alignable))
        return ds, spec, jobs

    encoder = make_encoder(config)
    index = build_index(embed_examples(ds.train, ds, config, encoder), config.metric)
    for ex in tests:
        if config.retriever == "amr" and not ex.alignable:
            jobs.append(PromptJob(ex.id, ex.label, None, (), (), True))
            continue
        res = knn(index, relation_key(ex, ds, config, encoder), config.k)
        prompt = build_prompt(spec, [demo(train[i]) for i in res.ids], ex.demonstration())
        jobs.append(PromptJob(ex.id, ex.label, prompt, res.ids, res.scores, not ex.alignable))
    return ds, spec, jobs


def make_client(config: ExperimentConfig) -> LlmClient:
    if config.backend == "echo":
        return EchoClient(config.echo_text)
    if config.backend == "replay":
        if not config.fixtures:
            raise ExperimentError("replay backend needs a fixtures file")
        if not Path(config.fixtures).exists():
            raise FileNotFoundError(config.fixtures)
        return ReplayClient(FixtureStore(config.fixtures))
    client = HttpClient(max_in_flight=config.max_in_flight)
    if config.record:
        if not config.fixtures:
            raise ExperimentError("recording needs a fixtures file")
        return RecordingClient(client, FixtureStore(config.fixtures))
    return client


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def run_experiment(config: ExperimentConfig, client: Optional[LlmClient] = None,
                   progress: Optional[Callable[[str], None]] = None) -> EvalReport:
    """Retrieve, prompt, query, normalise and score every test example.

    Writes ``report.json`` and ``trace.jsonl`` into ``out_dir`` when set.
    Results do not depend on ``jobs``.
    """
    ds, spec, jobs = prepare_prompts(config)
    client = client or make_client(config)
    if isinstance(client, ReplayClient):
        missing = client.missing([j.prompt for j in jobs if j.prompt is not None])
        if missing:
            raise ExperimentError(f"{len(missing)} fixture(s) missing", missing)

    out_dir = Path(config.out_dir) if config.out_dir else None
    partial = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        partial = out_dir / "trace.jsonl.partial"
        partial.write_text("", encoding="utf-8")
    lock = threading.Lock()

    def run(job: PromptJob) -> dict:
        if job.prompt is None:
            raw, label, unparseable, key = "", spec.null_token, False, None
        else:
            raw = client.send(LlmRequest(job.prompt)).text
            label, unparseable = normalize_label(raw, spec)
            key = prompt_key(job.prompt)
        row = {"id": job.id, "gold": job.gold, "neighbors": list(job.neighbors),
               "scores": list(job.scores), "prompt_sha256": key, "raw_completion": raw,
               "label": label, "unparseable": unparseable, "unalignable": job.unalignable}
        if partial is not None:
            with lock, open(partial, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        if progress:
            progress(job.id)
        return row

    if config.jobs == 1:
        rows = [run(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            rows = list(pool.map(run, jobs))
    rows.sort(key=lambda r: r["id"])

    preds = {r["id"]: r["label"] for r in rows}
    golds = {r["id"]: r["gold"] for r in rows}
    report = micro_f1(preds, golds, ds.manifest.null_label, config.null_mode)
    train_label = {ex.id: ex.label for ex in ds.train}
    with_demos = [r for r in rows if r["neighbors"]]
    purity = (sum(sum(train_label[n] == r["gold"] for n in r["neighbors"]) / len(r["neighbors"])
                  for r in with_demos) / len(with_demos)) if with_demos else 0.0
    report = replace(
        report, config_fingerprint=config_fingerprint(config), k=config.k, retriever=config.retriever,
        extra={
            "dataset": ds.manifest.name,
            "setting": config.setting,
            "path_mode": config.path_mode,
            "pooling": config.pooling,
            "metric": config.metric,
            "encoder": "ct" if config.checkpoint else ("structural" if config.retriever == "amr" else "none"),
            "demo_label_purity": purity,
            "unalignable": sorted(r["id"] for r in rows if r["unalignable"]),
            "unalignable_train": sorted(ex.id for ex in ds.train if not ex.alignable),
            "unparseable": sorted(r["id"] for r in rows if r["unparseable"]),
            "label_set": list(ds.manifest.label_set),
            "null_label": ds.manifest.null_label,
        })
    if out_dir is not None:
        lines = partial.read_text("utf-8").splitlines()
        lines.sort(key=lambda s: json.loads(s)["id"])
        _atomic_write(out_dir / "trace.jsonl", "".join(s + "\n" for s in lines))
        partial.unlink()
        _atomic_write(out_dir / "report.json", report.to_json())
    return report
