"""Per-user daily workflows, fixed-length history windows, and the day-based split."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .features import OOV, KeyedEvent
from .ingest import day_of, to_datetime


@dataclass(frozen=True)
class UserDayWorkflow:
    user_id: str
    day: int  # days since epoch
    keys: tuple[int, ...]
    events: tuple[KeyedEvent, ...]

    @property
    def date(self) -> str:
        return to_datetime(self.day * 86400).date().isoformat()

    def __len__(self) -> int:
        return len(self.keys)


@dataclass(frozen=True, slots=True)
class WindowSample:
    history: tuple[int, ...]
    target: int
    user_id: str
    day: int
    position: int  # index of the target inside its workflow
    event_id: str = ""  # id of the target event

    @property
    def date(self) -> str:
        return to_datetime(self.day * 86400).date().isoformat()

    @property
    def has_oov(self) -> bool:
        return self.target == OOV or OOV in self.history


def build_workflows(encoded: Iterable[tuple[int, KeyedEvent]]) -> list[UserDayWorkflow]:
    """Group ``(key_id, event)`` pairs by user and calendar day, time-ordered.

    Sorting is stable, so events sharing a timestamp keep their input order.
    """
    groups: dict[tuple[str, int], list[tuple[int, KeyedEvent]]] = defaultdict(list)
    for key_id, ev in encoded:
        groups[(ev.user_id, day_of(ev.timestamp))].append((key_id, ev))
    out = []
    for (user, day) in sorted(groups):
        items = sorted(groups[(user, day)], key=lambda kv: kv[1].timestamp)
        out.append(UserDayWorkflow(user, day, tuple(k for k, _ in items), tuple(e for _, e in items)))
    return out


def make_windows(workflow: UserDayWorkflow, h: int) -> list[WindowSample]:
    if h < 1:
        raise ValueError("window length must be >= 1")
    keys, events = workflow.keys, workflow.events
    return [WindowSample(keys[i:i + h], keys[i + h], workflow.user_id, workflow.day, i + h,
                         events[i + h].event_id if events else "")
            for i in range(len(keys) - h)]


def all_windows(workflows: Iterable[UserDayWorkflow], h: int) -> list[WindowSample]:
    return [s for wf in workflows for s in make_windows(wf, h)]


@dataclass(frozen=True)
class SplitPolicy:
    train_fraction: float = 0.70
    validation_fraction: float = 0.15

    def __post_init__(self):
        if not (0 < self.train_fraction and 0 < self.validation_fraction
                and self.train_fraction + self.validation_fraction < 1):
            raise ValueError("fractions must be positive and leave room for a test period")

    def partition(self, days: Iterable[int]) -> tuple[set[int], set[int], set[int]]:
        """Split sorted distinct days into train / validation / test periods.

        Period lengths are ``floor(fraction * D)``, every period at least one day when
        ``D >= 3``; the test period takes the remainder.
        """
        ordered = sorted(set(days))
        D = len(ordered)
        n_train = max(1, math.floor(self.train_fraction * D)) if D >= 3 else D
        n_val = max(1, math.floor(self.validation_fraction * D)) if D >= 3 else 0
        if D >= 3:
            n_train = min(n_train, D - n_val - 1)
        return (set(ordered[:n_train]), set(ordered[n_train:n_train + n_val]),
                set(ordered[n_train + n_val:]))

    def describe(self) -> str:
        return (f"by-day: train first {self.train_fraction:.0%} of days (benign users only), "
                f"validation next {self.validation_fraction:.0%} (benign), test the rest plus "
                f"every sample of answer-key users")


@dataclass
class DatasetSplit:
    train: list[WindowSample]
    validation: list[WindowSample]
    test: list[WindowSample]
    policy: SplitPolicy
    periods: tuple[set[int], set[int], set[int]]


def split(samples: Sequence[WindowSample], answer_key: Iterable[str], policy: SplitPolicy = SplitPolicy(),
          days: Iterable[int] | None = None) -> DatasetSplit:
    """Route samples into train / validation / test.

    ``days`` fixes the calendar used for the periods (defaults to the days
    the samples cover); the pipeline passes the days of the whole corpus.
    """
    malicious = set(answer_key)
    periods = policy.partition(days if days is not None else (s.day for s in samples))
    train_days, val_days, _ = periods
    train, val, test = [], [], []
    for s in samples:
        if s.user_id in malicious:
            test.append(s)
        elif s.day in train_days:
            train.append(s)
        elif s.day in val_days:
            val.append(s)
        else:
            test.append(s)
    if not train:
        raise ValueError("no benign samples available for training")
    return DatasetSplit(train, val, test, policy, periods)


def to_arrays(samples: Sequence[WindowSample], h: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        return np.zeros((0, h or 0), dtype=np.intp), np.zeros(0, dtype=np.intp)
    return (np.array([s.history for s in samples], dtype=np.intp),
            np.array([s.target for s in samples], dtype=np.intp))


def deduplicate(samples: Sequence[WindowSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distinct (history, target) rows with multiplicities, in first-seen order."""
    counts: dict[tuple, int] = {}
    for s in samples:
        key = s.history + (s.target,)
        counts[key] = counts.get(key, 0) + 1
    rows = np.array(list(counts), dtype=np.intp)
    return rows[:, :-1], rows[:, -1], np.array(list(counts.values()), dtype=np.float64)


def dump_samples(samples: Iterable[WindowSample], path) -> None:
    """Debug dump: ``history(comma-sep) TAB target TAB user TAB date`` per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(f"{','.join(map(str, s.history))}\t{s.target}\t{s.user_id}\t{s.date}\n")
