"""Scoring windows against the model, user verdicts, scenario labels and evaluation."""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .features import EmailDirection, EnrichedEvent, SiteCategory
from .ingest import (
    DeviceActivity,
    EmailActivity,
    HttpActivity,
    LogonActivity,
    RawDeviceEvent,
    RawEmailEvent,
    RawHttpEvent,
    RawLogonEvent,
    UserDirectory,
    day_of,
    to_datetime,
)
from .neural import LstmParams, forward
from .sequence import WindowSample

BENIGN = "Benign"
UNCLASSIFIED = "Unclassified"
VERDICT_HEADER = ("user", "date", "position", "mse", "anomalous", "reason", "event_id")
USERS_HEADER = ("user", "events", "samples", "anomalous_samples", "max_daily", "flagged", "label", "note")
SECONDS_PER_DAY = 86400
EPOCH_DATE = date(1970, 1, 1)


class Reason(str, Enum):
    NONE = ""
    ABOVE_CUTOFF = "AboveCutoff"
    OUT_OF_VOCABULARY = "OutOfVocabulary"
    OUTSIDE_TOP_G = "OutsideTopG"


class ScenarioLabel(str, Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    S4 = "S4"
    S5 = "S5"
    UNCLASSIFIED = UNCLASSIFIED

    @classmethod
    def for_scenario(cls, number: int) -> "ScenarioLabel":
        return cls(f"S{number}")


SCENARIO_LABELS = tuple(ScenarioLabel)[:5]
RULE_ORDER = (ScenarioLabel.S3, ScenarioLabel.S1, ScenarioLabel.S5, ScenarioLabel.S2, ScenarioLabel.S4)


class CannotFitThreshold(ValueError):
    pass


class UserMismatch(ValueError):
    """Answer-key users missing from the verdicts (or the reverse)."""

    def __init__(self, orphans: Sequence[str]):
        self.orphans = sorted(orphans)
        shown = ", ".join(self.orphans[:20]) + (" ..." if len(self.orphans) > 20 else "")
        super().__init__(f"{len(self.orphans)} user id(s) appear in only one input: {shown}")


@dataclass
class DetectConfig:
    z: float = 2.576
    sigma_floor: float = 1e-6
    min_validation: int = 30
    mode: str = "gaussian"  # or "top-g"
    top_g: int = 3
    min_anomalies_per_day: int = 3
    min_anomalies_total: int = 5
    window_days: int = 90
    mass_email_recipients: int = 20
    removable_multiplier: float = 3.0
    min_other_pcs: int = 3
    keylogger_indicators: tuple[str, ...] = ("keylog",)

    def __post_init__(self):
        if self.mode not in ("gaussian", "top-g"):
            raise ValueError(f"unknown detection mode {self.mode!r}")
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be positive")
        if self.top_g < 1 or self.min_anomalies_per_day < 1 or self.min_anomalies_total < 1:
            raise ValueError("top_g and anomaly counts must be >= 1")
        self.keylogger_indicators = tuple(s.lower() for s in self.keylogger_indicators)

    @classmethod
    def from_mapping(cls, raw: Mapping) -> "DetectConfig":
        kwargs = dict(raw)
        unknown = set(kwargs) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown detect options {sorted(unknown)}")
        if "keylogger_indicators" in kwargs:
            kwargs["keylogger_indicators"] = tuple(kwargs["keylogger_indicators"])
        return cls(**kwargs)


def mse(distribution: np.ndarray, target: int) -> float:
    """Mean squared error between a predicted distribution and the observed one-hot key."""
    diff = np.array(distribution, dtype=np.float64)
    diff[target] -= 1.0
    return float(np.dot(diff, diff) / len(diff))


def score_samples(params: LstmParams, samples: Sequence[WindowSample], batch: int = 2048
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample MSE and rank of the observed key (0 = most probable).

    Samples with an out-of-vocabulary key get ``nan`` and rank ``-1``.
    """
    scores = np.full(len(samples), np.nan)
    ranks = np.full(len(samples), -1, dtype=np.intp)
    ok = np.array([not s.has_oov for s in samples], dtype=bool)
    idx = np.flatnonzero(ok)
    for start in range(0, len(idx), batch):
        sel = idx[start:start + batch]
        X = np.array([samples[k].history for k in sel], dtype=np.intp)
        y = np.array([samples[k].target for k in sel], dtype=np.intp)
        probs, _ = forward(params, X)
        rows = np.arange(len(sel))
        observed = probs[rows, y]
        diff = probs.copy()
        diff[rows, y] -= 1.0
        scores[sel] = np.einsum("ij,ij->i", diff, diff) / params.n
        ranks[sel] = (probs > observed[:, None]).sum(axis=1)
    return scores, ranks


@dataclass(frozen=True)
class GaussianThreshold:
    mu: float
    sigma: float
    z: float

    @property
    def cutoff(self) -> float:
        return self.mu + self.z * self.sigma

    def exceeds(self, score: float) -> bool:
        return score > self.cutoff


def fit_threshold(scores: Iterable[float], z: float, sigma_floor: float = 1e-6,
                  min_samples: int = 30) -> GaussianThreshold:
    """Mean and population standard deviation of benign validation scores.

    ``nan`` entries (out-of-vocabulary windows) are ignored.
    """
    arr = np.asarray(list(scores), dtype=np.float64)
    arr = arr[~np.isnan(arr)]
    if len(arr) == 0:
        raise CannotFitThreshold("validation set is empty")
    if len(arr) < min_samples:
        raise CannotFitThreshold(f"need at least {min_samples} validation samples, got {len(arr)}")
    if z <= 0:
        raise ValueError("z must be positive")
    return GaussianThreshold(float(arr.mean()), max(float(arr.std()), sigma_floor), z)


@dataclass(frozen=True, slots=True)
class AnomalyVerdict:
    user_id: str
    day: int
    position: int
    mse: float | None
    anomalous: bool
    reason: Reason
    event_id: str = ""

    @property
    def date(self) -> str:
        return to_datetime(self.day * SECONDS_PER_DAY).date().isoformat()

    def to_row(self) -> list[str]:
        return [self.user_id, self.date, str(self.position), "" if self.mse is None else repr(self.mse),
                "1" if self.anomalous else "0", self.reason.value, self.event_id]


def judge(samples: Sequence[WindowSample], scores: np.ndarray, ranks: np.ndarray,
          threshold: GaussianThreshold, cfg: DetectConfig) -> list[AnomalyVerdict]:
    out = []
    for s, score, rank in zip(samples, scores, ranks):
        if math.isnan(score):
            out.append(AnomalyVerdict(s.user_id, s.day, s.position, None, True,
                                      Reason.OUT_OF_VOCABULARY, s.event_id))
            continue
        if cfg.mode == "top-g":
            bad, reason = rank >= cfg.top_g, Reason.OUTSIDE_TOP_G
        else:
            bad, reason = threshold.exceeds(score), Reason.ABOVE_CUTOFF
        out.append(AnomalyVerdict(s.user_id, s.day, s.position, float(score), bool(bad),
                                  reason if bad else Reason.NONE, s.event_id))
    return out


@dataclass
class UserVerdict:
    user_id: str
    n_events: int = 0
    n_samples: int = 0
    n_anomalous: int = 0
    max_daily: int = 0
    anomalous: bool = False
    label: str = BENIGN

    @property
    def no_samples(self) -> bool:
        return self.n_samples == 0

    def to_row(self) -> list[str]:
        return [self.user_id, str(self.n_events), str(self.n_samples), str(self.n_anomalous),
                str(self.max_daily), "1" if self.anomalous else "0", self.label,
                "no-samples" if self.no_samples else ""]


def detect_user(user_id: str, verdicts: Iterable[AnomalyVerdict], cfg: DetectConfig) -> UserVerdict:
    """Apply the per-day / overall anomaly-count rule to one user's verdicts.

    A user without any scored window is benign by absence; the report marks it.
    """
    per_day: Counter = Counter()
    uv = UserVerdict(user_id)
    for v in verdicts:
        uv.n_samples += 1
        if v.anomalous:
            uv.n_anomalous += 1
            per_day[v.day] += 1
    uv.max_daily = max(per_day.values(), default=0)
    uv.anomalous = uv.max_daily >= cfg.min_anomalies_per_day or uv.n_anomalous >= cfg.min_anomalies_total
    return uv


def aggregate_users(verdicts: Iterable[AnomalyVerdict], users: Iterable[str], cfg: DetectConfig
                    ) -> dict[str, UserVerdict]:
    grouped: dict[str, list[AnomalyVerdict]] = defaultdict(list)
    for v in verdicts:
        grouped[v.user_id].append(v)
    return {u: detect_user(u, grouped.get(u, ()), cfg) for u in sorted(set(users) | set(grouped))}


def _is_keylogger(url: str, indicators: Sequence[str]) -> bool:
    low = url.lower()
    return any(ind in low for ind in indicators)


def classify_scenario(user_id: str, events: Sequence[EnrichedEvent], directory: UserDirectory | None,
                      pc_assignment: Mapping[str, str], cfg: DetectConfig = DetectConfig(),
                      split_day: int | None = None) -> ScenarioLabel:
    """Label a flagged user with the first matching scenario rule.

    Rules are checked most-specific first over the user's events inside a
    trailing ``window_days`` window ending at their last event.  ``split_day``
    separates the removable-media baseline from the period under suspicion;
    it defaults to the midpoint of the window.
    """
    own = [e for e in events if e.user_id == user_id]
    if not own:
        return ScenarioLabel.UNCLASSIFIED
    end = max(e.timestamp for e in own)
    start = end - cfg.window_days * SECONDS_PER_DAY
    own = sorted((e for e in own if e.timestamp >= start), key=lambda e: (e.timestamp, e.base.event_id))
    departed = directory is not None and directory.departure(user_id) is not None

    connects = [e for e in own if isinstance(e.base, RawDeviceEvent) and e.base.activity is DeviceActivity.CONNECT]
    uploads = {e.site_category for e in own
               if isinstance(e.base, RawHttpEvent) and e.base.activity is HttpActivity.UPLOAD}
    job_visits = any(isinstance(e.base, RawHttpEvent) and e.site_category is SiteCategory.JOB_HUNTING for e in own)

    def s3() -> bool:
        keylogger = any(isinstance(e.base, RawHttpEvent) and e.base.activity is HttpActivity.DOWNLOAD
                        and _is_keylogger(e.base.url, cfg.keylogger_indicators) for e in own)
        sup = directory.supervisor_of(user_id) if directory is not None else None
        sup_pc = pc_assignment.get(sup) if sup else None
        on_sup = sup_pc is not None and any(e.base.pc_id == sup_pc for e in connects)
        mass = any(isinstance(e.base, RawEmailEvent) and e.base.activity is EmailActivity.SEND
                   and len(e.base.recipients) >= cfg.mass_email_recipients for e in own)
        return keylogger and on_sup and mass

    def s1() -> bool:
        return any(e.after_hours for e in connects) and SiteCategory.HACKTIVIST in uploads and departed

    def s5() -> bool:
        return SiteCategory.FILE_SHARING in uploads and departed

    def s2() -> bool:
        if not (job_visits and departed and connects):
            return False
        days = sorted({day_of(e.timestamp) for e in own})
        cut = split_day if split_day is not None else days[len(days) // 2]
        before_days = sum(1 for d in days if d < cut)
        after_days = len(days) - before_days
        before = sum(1 for e in connects if day_of(e.timestamp) < cut)
        after = len(connects) - before
        if after == 0 or after_days == 0:
            return False
        before_rate = before / before_days if before_days else 0.0
        return after / after_days > cfg.removable_multiplier * before_rate

    def s4() -> bool:
        mine = pc_assignment.get(user_id)
        foreign = {e.base.pc_id for e in own if isinstance(e.base, RawLogonEvent)
                   and e.base.activity is LogonActivity.LOGON and e.base.pc_id != mine}
        leak = any(isinstance(e.base, RawEmailEvent) and e.base.activity is EmailActivity.SEND
                   and e.base.attachments > 0 and e.email_direction is EmailDirection.EXTERNAL for e in own)
        return len(foreign) >= cfg.min_other_pcs and leak

    rules = {ScenarioLabel.S3: s3, ScenarioLabel.S1: s1, ScenarioLabel.S5: s5,
             ScenarioLabel.S2: s2, ScenarioLabel.S4: s4}
    for label in RULE_ORDER:
        if rules[label]():
            return label
    return ScenarioLabel.UNCLASSIFIED


def _manifest_line(manifest: str) -> str:
    return f"# manifest: {manifest}\n" if manifest else ""


def _data_lines(fh):
    return (line for line in fh if not line.startswith("#"))


def write_verdicts(path, verdicts: Iterable[AnomalyVerdict], manifest: str = "") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_manifest_line(manifest))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VERDICT_HEADER)
        for v in verdicts:
            w.writerow(v.to_row())


def read_verdicts(path) -> list[AnomalyVerdict]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(_data_lines(fh)):
            day = (date.fromisoformat(row["date"]) - EPOCH_DATE).days
            out.append(AnomalyVerdict(row["user"], day, int(row["position"]),
                                      float(row["mse"]) if row["mse"] else None,
                                      row["anomalous"] == "1", Reason(row["reason"]), row.get("event_id", "")))
    return out


def write_users(path, users: Iterable[UserVerdict], manifest: str = "") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_manifest_line(manifest))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(USERS_HEADER)
        for uv in users:
            w.writerow(uv.to_row())


def read_users(path) -> dict[str, UserVerdict]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(_data_lines(fh)):
            out[row["user"]] = UserVerdict(row["user"], int(row["events"]), int(row["samples"]),
                                           int(row["anomalous_samples"]), int(row["max_daily"]),
                                           row["flagged"] == "1", row["label"])
    return out


TABLE_CLASSES = ("Total", BENIGN) + tuple(f"S-{k}" for k in range(1, 6)) + (UNCLASSIFIED,)
CONFUSION_TRUTH = (BENIGN,) + tuple(l.value for l in SCENARIO_LABELS)
CONFUSION_PRED = CONFUSION_TRUTH + (UNCLASSIFIED,)


def _table_class(label: str) -> str:
    return f"S-{label[1:]}" if label in CONFUSION_TRUTH[1:] else label


@dataclass
class TableRow:
    label: str
    predicted_users: int
    predicted_logs: int
    true_users: int
    true_logs: int


@dataclass
class EvaluationReport:
    n_samples: int
    event_accuracy: float
    user_accuracy: float
    event_precision: float
    event_recall: float
    table: list[TableRow]
    confusion: dict[tuple[str, str], int]
    per_scenario: dict[str, tuple[float, float, int]] = field(default_factory=dict)
    no_sample_users: list[str] = field(default_factory=list)

    def row(self, label: str) -> TableRow:
        return next(r for r in self.table if r.label == label)

    def scenarios_recovered(self) -> list[str]:
        """Scenario labels assigned correctly to a strict majority of their users."""
        out = []
        for lab in CONFUSION_TRUTH[1:]:
            support = sum(self.confusion[(lab, p)] for p in CONFUSION_PRED)
            if support and self.confusion[(lab, lab)] * 2 > support:
                out.append(lab)
        return out

    def render(self) -> str:
        lines = [
            f"samples scored       {self.n_samples}",
            f"event-level accuracy {self.event_accuracy:.4f}",
            f"event precision      {self.event_precision:.4f}",
            f"event recall         {self.event_recall:.4f}",
            f"user-level accuracy  {self.user_accuracy:.4f}",
            f"scenarios recovered  {len(self.scenarios_recovered())}/5 {' '.join(self.scenarios_recovered())}",
            "",
            f"{'class':<14}{'pred users':>11}{'pred logs':>11}{'true users':>11}{'true logs':>11}",
        ]
        for r in self.table:
            lines.append(f"{r.label:<14}{r.predicted_users:>11}{r.predicted_logs:>11}"
                         f"{r.true_users:>11}{r.true_logs:>11}")
        lines += ["", "per-scenario (user level)   precision  recall  support"]
        for lab, (p, r, n) in self.per_scenario.items():
            lines.append(f"  {lab:<26}{p:>9.3f}{r:>8.3f}{n:>9}")
        lines += ["", "confusion (rows truth, columns predicted)",
                  " " * 12 + "".join(f"{p:>13}" for p in CONFUSION_PRED)]
        for t in CONFUSION_TRUTH:
            lines.append(f"{t:<12}" + "".join(f"{self.confusion[(t, p)]:>13}" for p in CONFUSION_PRED))
        if self.no_sample_users:
            lines += ["", f"users without scored windows (benign by absence): {len(self.no_sample_users)}"]
        return "\n".join(lines) + "\n"

    def write_table(self, path, manifest: str = "") -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(_manifest_line(manifest))
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "user_count", "log_count", "true_user_count", "true_log_count"])
            for r in self.table:
                w.writerow([r.label, r.predicted_users, r.predicted_logs, r.true_users, r.true_logs])

    def write_confusion(self, path, manifest: str = "") -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(_manifest_line(manifest))
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["truth"] + list(CONFUSION_PRED))
            for t in CONFUSION_TRUTH:
                w.writerow([t] + [self.confusion[(t, p)] for p in CONFUSION_PRED])


def _ratio(num: float, den: float, empty: float = 1.0) -> float:
    return num / den if den else empty


def evaluate(verdicts: Sequence[AnomalyVerdict], users: Mapping[str, UserVerdict],
             scenarios: Mapping[str, int], malicious_events: Mapping[str, Iterable[str]]) -> EvaluationReport:
    """Score verdicts and user labels against the answer key.

    ``scenarios`` maps insider ids to scenario numbers and
    ``malicious_events`` maps them to their planted event ids.
    """
    orphans = set(scenarios) - set(users)
    if orphans:
        raise UserMismatch(orphans)
    malicious = {e for ids in malicious_events.values() for e in ids}
    truth_label = {u: (f"S{scenarios[u]}" if u in scenarios else BENIGN) for u in users}
    pred_label = {u: (uv.label if uv.anomalous else BENIGN) for u, uv in users.items()}

    tp = fp = fn = correct = 0
    for v in verdicts:
        bad = v.event_id in malicious
        correct += v.anomalous == bad
        tp += v.anomalous and bad
        fp += v.anomalous and not bad
        fn += bad and not v.anomalous
    n = len(verdicts)

    confusion = {(t, p): 0 for t in CONFUSION_TRUTH for p in CONFUSION_PRED}
    for u in users:
        confusion[(truth_label[u], pred_label[u])] += 1
    user_acc = _ratio(sum(truth_label[u] == pred_label[u] for u in users), len(users))

    per_scenario = {}
    for lab in CONFUSION_TRUTH[1:]:
        hit = confusion[(lab, lab)]
        predicted = sum(confusion[(t, lab)] for t in CONFUSION_TRUTH)
        support = sum(confusion[(lab, p)] for p in CONFUSION_PRED)
        per_scenario[lab] = (_ratio(hit, predicted), _ratio(hit, support), support)

    total_logs = sum(uv.n_events for uv in users.values())
    pred_users: Counter = Counter(_table_class(pred_label[u]) for u in users)
    pred_logs: Counter = Counter()
    for u, uv in users.items():
        if pred_label[u] != BENIGN:
            pred_logs[_table_class(pred_label[u])] += uv.n_anomalous
    true_users: Counter = Counter(_table_class(truth_label[u]) for u in users)
    true_logs: Counter = Counter()
    for u, ids in malicious_events.items():
        true_logs[_table_class(truth_label.get(u, BENIGN))] += len(list(ids))
    pred_logs[BENIGN] = total_logs - sum(pred_logs.values())
    true_logs[BENIGN] = total_logs - sum(true_logs.values())
    table = [TableRow("Total", len(users), total_logs, len(users), total_logs)]
    for cls in TABLE_CLASSES[1:]:
        table.append(TableRow(cls, pred_users[cls], pred_logs[cls], true_users[cls], true_logs[cls]))

    return EvaluationReport(
        n_samples=n,
        event_accuracy=_ratio(correct, n),
        user_accuracy=user_acc,
        event_precision=_ratio(tp, tp + fp),
        event_recall=_ratio(tp, tp + fn),
        table=table,
        confusion=confusion,
        per_scenario=per_scenario,
        no_sample_users=sorted(u for u, uv in users.items() if uv.no_samples),
    )
