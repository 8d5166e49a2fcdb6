"""Stage functions shared by the command line and the tests.

Each stage reads its inputs, writes its outputs into one directory and
drops a ``manifest.json`` there.  Every other file it writes carries the
manifest id, which hashes the configuration and the input contents but not
paths or wall-clock time, so reruns with the same inputs are byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time as _time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__, plotting
from .config import Settings
from .detect import (
    CONFUSION_PRED,
    CONFUSION_TRUTH,
    AnomalyVerdict,
    EvaluationReport,
    GaussianThreshold,
    UserMismatch,
    UserVerdict,
    aggregate_users,
    classify_scenario,
    evaluate,
    fit_threshold,
    judge,
    read_users,
    read_verdicts,
    score_samples,
    write_users,
    write_verdicts,
)
from .features import (
    KeyVocabulary,
    KeyedEvent,
    UnknownUser,
    assign_pcs,
    build_vocabulary,
    enrich,
    extract_key,
)
from .ingest import ErrorLedger, LogEvent, UserDirectory, day_of, load_ldap, read_corpus
from .neural import SequenceModel, load_model, save_model, train
from .sequence import DatasetSplit, UserDayWorkflow, all_windows, build_workflows, deduplicate, split
from .synthgen import AnswerKey, GeneratedCorpus, generate

log = logging.getLogger(__name__)

MODEL_FILE = "model.json"
VOCAB_FILE = "vocab.txt"
MANIFEST_FILE = "manifest.json"
ANSWERS_FILE = "answers.csv"


class DataError(Exception):
    """Bad or inconsistent input data; the command exits with status 2."""


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_digest(root) -> str:
    """Hash of every file under ``root`` keyed by its relative path."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file() and p.name != MANIFEST_FILE):
        h.update(path.relative_to(root).as_posix().encode())
        h.update(file_digest(path).encode())
    return h.hexdigest()


@dataclass
class RunManifest:
    stage: str
    config: dict
    inputs: dict[str, str]  # label -> content hash
    seeds: dict[str, int]
    vocab_hash: str = ""
    model_path: str = ""
    input_paths: dict[str, str] = field(default_factory=dict)
    tool_version: str = __version__
    created: str = ""

    @property
    def id(self) -> str:
        """Content id: everything except paths and the creation time."""
        core = {"stage": self.stage, "config": self.config, "inputs": self.inputs,
                "seeds": self.seeds, "vocab_hash": self.vocab_hash, "tool_version": self.tool_version}
        blob = json.dumps(core, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def write(self, out_dir) -> Path:
        self.created = _time.strftime("%Y-%m-%dT%H:%M:%SZ", _time.gmtime())
        doc = {"id": self.id, "stage": self.stage, "tool_version": self.tool_version,
               "created": self.created, "seeds": self.seeds, "vocab_hash": self.vocab_hash,
               "model_path": self.model_path, "input_paths": self.input_paths,
               "inputs": self.inputs, "config": self.config}
        path = Path(out_dir) / MANIFEST_FILE
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _seeds(settings: Settings) -> dict[str, int]:
    return {"generate": settings.generate.seed, "train": settings.train.seed}


def run_generate(settings: Settings, out_dir) -> tuple[GeneratedCorpus, RunManifest]:
    out = Path(out_dir)
    corpus = generate(settings.generate, out)
    manifest = RunManifest("generate", settings.snapshot()["generate"], {}, _seeds(settings))
    manifest.write(out)
    return corpus, manifest


@dataclass
class Prepared:
    """A parsed, enriched and keyed corpus plus its calendar split."""

    events: list[LogEvent]
    keyed: list[KeyedEvent]
    directory: UserDirectory
    pc_assignment: dict[str, str]
    answer_key: AnswerKey
    ledger: ErrorLedger
    periods: tuple[set[int], set[int], set[int]]
    days: list[int]

    @property
    def users(self) -> set[str]:
        return set(self.directory.records) | {e.user_id for e in self.events}

    def event_counts(self) -> Counter:
        return Counter(e.user_id for e in self.events)


def prepare(data_dir, settings: Settings, ledger: ErrorLedger | None = None) -> Prepared:
    """Parse sources and LDAP, assign PCs over the training days, enrich and key.

    Events of users missing from the directory go to the error ledger.
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"data directory {data_dir} does not exist")
    ledger = ledger if ledger is not None else ErrorLedger()
    try:
        events = read_corpus(data_dir, ledger)
        directory = load_ldap(data_dir / "LDAP", ledger)
    except (FileNotFoundError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    if not events:
        raise DataError(f"no parseable events in {data_dir}")
    answer_key = AnswerKey.read(data_dir / ANSWERS_FILE)
    days = sorted({day_of(e.timestamp) for e in events})
    periods = settings.split.partition(days)
    pcs = assign_pcs(events, periods[0])
    keyed = []
    for ev in events:
        try:
            keyed.append(extract_key(enrich(ev, settings.features, directory, pcs)))
        except UnknownUser:
            ledger.record(0, ev.kind.filename, f"event {ev.event_id}: user {ev.user_id} not in LDAP")
    return Prepared(events, keyed, directory, pcs, answer_key, ledger, periods, days)


def windows(prepared: Prepared, vocab: KeyVocabulary, settings: Settings
            ) -> tuple[list[UserDayWorkflow], DatasetSplit]:
    workflows = build_workflows((vocab.encode(k), k) for k in prepared.keyed)
    samples = all_windows(workflows, settings.window)
    try:
        ds = split(samples, prepared.answer_key.users(), settings.split, prepared.days)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    return workflows, ds


def _write_series(path, header: str, values: Iterable[float], manifest: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# manifest: {manifest}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", header])
        for k, v in enumerate(values, 1):
            w.writerow([k, repr(float(v))])


@dataclass
class TrainOutcome:
    model: SequenceModel
    vocab: KeyVocabulary
    losses: list[float]
    accuracies: list[float]
    n_train: int
    n_distinct: int
    manifest: RunManifest
    seconds: float


def run_train(data_dir, settings: Settings, out_dir, progress=None) -> TrainOutcome:
    """Build the vocabulary, train on benign training-period windows, save everything."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prepared = prepare(data_dir, settings)
    vocab = build_vocabulary(prepared.keyed)
    _, ds = windows(prepared, vocab, settings)
    X, y, counts = deduplicate(ds.train)
    manifest = RunManifest("train", settings.snapshot(), {"data": tree_digest(data_dir)}, _seeds(settings),
                           vocab_hash=vocab.hash, model_path=f"{MODEL_FILE}",
                           input_paths={"data": str(Path(data_dir))})
    mid = manifest.id
    started = _time.perf_counter()
    result = train(X, y, len(vocab), settings.train, counts=counts, progress=progress)
    seconds = _time.perf_counter() - started
    model = SequenceModel(result.params, settings.window, vocab.hash, mid)
    save_model(model, out / MODEL_FILE)
    vocab.save(out / VOCAB_FILE, manifest=mid)
    _write_series(out / "loss.csv", "avg_loss", result.losses, mid)
    _write_series(out / "accuracy.csv", "accuracy", result.accuracies, mid)
    plotting.plot_curve(result.losses, out / "loss.png", "average cross-entropy", "training loss", log_scale=True)
    plotting.plot_curve(result.accuracies, out / "accuracy.png", "top-1 accuracy", "training accuracy")
    prepared.ledger.write(out / "errors.csv", relative_to=data_dir, manifest=mid)
    manifest.write(out)
    return TrainOutcome(model, vocab, result.losses, result.accuracies, len(ds.train), len(X), manifest, seconds)


@dataclass
class DetectOutcome:
    threshold: GaussianThreshold
    verdicts: list[AnomalyVerdict]
    users: dict[str, UserVerdict]
    validation_scores: np.ndarray
    test_scores: np.ndarray
    manifest: RunManifest


def load_trained(model_dir) -> tuple[SequenceModel, KeyVocabulary]:
    """Model plus its vocabulary; refuses a model bound to another vocabulary."""
    model_dir = Path(model_dir)
    try:
        vocab = KeyVocabulary.load(model_dir / VOCAB_FILE)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read vocabulary: {exc}") from exc
    return load_model(model_dir / MODEL_FILE, expected_vocab_hash=vocab.hash), vocab


def run_detect(data_dir, model_dir, settings: Settings, out_dir) -> DetectOutcome:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model, vocab = load_trained(model_dir)
    if model.window != settings.window:
        log.warning("model window %d overrides configured window %d", model.window, settings.window)
        settings = dataclasses.replace(settings, window=model.window)
    prepared = prepare(data_dir, settings)
    _, ds = windows(prepared, vocab, settings)
    cfg = settings.detect
    manifest = RunManifest("detect", settings.snapshot(),
                           {"data": tree_digest(data_dir), "model": file_digest(Path(model_dir) / MODEL_FILE)},
                           _seeds(settings), vocab_hash=vocab.hash, model_path=str(Path(model_dir) / MODEL_FILE),
                           input_paths={"data": str(Path(data_dir)), "model": str(Path(model_dir))})
    mid = manifest.id

    val_scores, _ = score_samples(model.params, ds.validation)
    try:
        threshold = fit_threshold(val_scores, cfg.z, cfg.sigma_floor, cfg.min_validation)
    except ValueError as exc:
        raise DataError(f"cannot fit threshold: {exc}") from exc
    test_scores, ranks = score_samples(model.params, ds.test)
    verdicts = judge(ds.test, test_scores, ranks, threshold, cfg)

    users = aggregate_users(verdicts, prepared.users, cfg)
    counts = prepared.event_counts()
    by_user: dict[str, list] = {}
    for k in prepared.keyed:
        by_user.setdefault(k.user_id, []).append(k.event)
    for uid, uv in users.items():
        uv.n_events = counts.get(uid, 0)
        if uv.anomalous:
            first_bad = min(v.day for v in verdicts if v.user_id == uid and v.anomalous)
            uv.label = classify_scenario(uid, by_user.get(uid, []), prepared.directory,
                                         prepared.pc_assignment, cfg, split_day=first_bad).value

    write_verdicts(out / "verdicts.csv", verdicts, mid)
    write_users(out / "users.csv", users.values(), mid)
    with open(out / "flagged.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# manifest: {mid}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "label", "anomalous_samples", "max_daily"])
        for uv in users.values():
            if uv.anomalous:
                w.writerow([uv.user_id, uv.label, uv.n_anomalous, uv.max_daily])
    with open(out / "threshold.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# manifest: {mid}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "mu", "sigma", "z", "cutoff", "validation_samples", "test_samples"])
        w.writerow([cfg.mode, repr(threshold.mu), repr(threshold.sigma), repr(threshold.z),
                    repr(threshold.cutoff), len(ds.validation), len(ds.test)])
    plotting.plot_scores(val_scores, test_scores, threshold.cutoff, out / "scores.png")
    prepared.ledger.write(out / "errors.csv", relative_to=data_dir, manifest=mid)
    manifest.write(out)
    return DetectOutcome(threshold, verdicts, users, val_scores, test_scores, manifest)


def run_evaluate(detect_dir, answers_path, out_dir) -> tuple[EvaluationReport, RunManifest]:
    detect_dir, out = Path(detect_dir), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    verdicts_path, users_path = detect_dir / "verdicts.csv", detect_dir / "users.csv"
    for p in (verdicts_path, users_path, Path(answers_path)):
        if not p.is_file():
            raise DataError(f"missing input {p}")
    verdicts = read_verdicts(verdicts_path)
    users = read_users(users_path)
    key = AnswerKey.read(answers_path)
    orphans = ({v.user_id for v in verdicts} | set(key.scenarios)) - set(users)
    if orphans:
        raise DataError(str(UserMismatch(orphans)))
    report = evaluate(verdicts, users, key.scenarios, key.events)
    manifest = RunManifest("evaluate", {}, {"verdicts": file_digest(verdicts_path),
                                            "users": file_digest(users_path),
                                            "answers": file_digest(answers_path)}, {},
                           input_paths={"detect": str(detect_dir), "answers": str(answers_path)})
    mid = manifest.id
    (out / "report.txt").write_text(f"# manifest: {mid}\n" + report.render(), encoding="utf-8")
    report.write_table(out / "table.csv", mid)
    report.write_confusion(out / "confusion.csv", mid)
    plotting.plot_confusion(report.confusion, CONFUSION_TRUTH, CONFUSION_PRED, out / "confusion.png")
    manifest.write(out)
    return report, manifest


@dataclass
class PipelineOutcome:
    corpus: GeneratedCorpus
    training: TrainOutcome
    detection: DetectOutcome
    report: EvaluationReport


def run_pipeline(settings: Settings, out_dir, progress=None) -> PipelineOutcome:
    """generate -> train -> detect -> evaluate under ``out_dir/{data,model,detect,report}``."""
    out = Path(out_dir)
    corpus, _ = run_generate(settings, out / "data")
    training = run_train(out / "data", settings, out / "model", progress=progress)
    detection = run_detect(out / "data", out / "model", settings, out / "detect")
    report, _ = run_evaluate(out / "detect", out / "data" / ANSWERS_FILE, out / "report")
    return PipelineOutcome(corpus, training, detection, report)
