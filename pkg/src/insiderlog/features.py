"""Derived per-event flags and the mapping from events to log-key templates."""

from __future__ import annotations

import hashlib
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date, time
from enum import Enum
from pathlib import Path
from typing import Iterable
from urllib.parse import urlsplit

from .ingest import (
    LogEvent,
    LogonActivity,
    RawDeviceEvent,
    RawEmailEvent,
    RawFileEvent,
    RawHttpEvent,
    RawLogonEvent,
    SourceKind,
    UserDirectory,
    day_of,
    to_datetime,
)

OOV = -1
VOCAB_HEADER = "# insiderlog-vocabulary v1"
WEEKDAYS = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")


class SiteCategory(str, Enum):
    HACKTIVIST = "hacktivist"
    FILE_SHARING = "file-sharing"
    JOB_HUNTING = "job-hunting"
    NEUTRAL = "neutral"


class EmailDirection(str, Enum):
    INTERNAL = "internal"
    EXTERNAL = "external"


class RemovableFlow(str, Enum):
    NONE = "none"
    TO_REMOVABLE = "to removable"
    FROM_REMOVABLE = "from removable"


DEFAULT_JOB_SITES = (
    "careerbuilder.com", "monster.com", "indeed.com", "simplyhired.com",
    "glassdoor.com", "jobhuntersbible.com", "linkedinjobs.com",
)


def _default_categories() -> dict[SiteCategory, tuple[str, ...]]:
    return {
        SiteCategory.HACKTIVIST: ("wikileaks.org",),
        SiteCategory.FILE_SHARING: ("dropbox.com",),
        SiteCategory.JOB_HUNTING: DEFAULT_JOB_SITES,
    }


@dataclass
class EnrichmentConfig:
    work_start: time = time(8, 0)
    work_end: time = time(18, 0)
    weekend_days: frozenset[int] = frozenset({5, 6})
    holidays: frozenset[date] = frozenset()
    org_email_domain: str = "dtaa.com"
    site_categories: dict[SiteCategory, tuple[str, ...]] = field(default_factory=_default_categories)

    def __post_init__(self):
        if not self.work_start < self.work_end:
            raise ValueError("work_start must be earlier than work_end")
        seen: dict[str, SiteCategory] = {}
        for cat, patterns in self.site_categories.items():
            if cat is SiteCategory.NEUTRAL:
                raise ValueError("neutral is the fallback category and takes no patterns")
            for p in patterns:
                p = p.lower()
                if p in seen and seen[p] is not cat:
                    raise ValueError(f"domain {p} listed under both {seen[p].value} and {cat.value}")
                seen[p] = cat

    @classmethod
    def from_mapping(cls, raw: dict) -> "EnrichmentConfig":
        """Build from a config-file section (times as ``HH:MM``, lists as arrays)."""
        kwargs = {}
        if "work_start" in raw:
            kwargs["work_start"] = time.fromisoformat(raw["work_start"])
        if "work_end" in raw:
            kwargs["work_end"] = time.fromisoformat(raw["work_end"])
        if "weekend_days" in raw:
            kwargs["weekend_days"] = frozenset(WEEKDAYS.index(str(d).lower()[:3]) for d in raw["weekend_days"])
        if "holidays" in raw:
            kwargs["holidays"] = frozenset(date.fromisoformat(str(d)) for d in raw["holidays"])
        if "org_email_domain" in raw:
            kwargs["org_email_domain"] = raw["org_email_domain"]
        if "site_categories" in raw:
            cats = _default_categories()
            for name, patterns in raw["site_categories"].items():
                cats[SiteCategory(name.replace("_", "-"))] = tuple(patterns)
            kwargs["site_categories"] = cats
        return cls(**kwargs)


def is_after_hours(timestamp: int, cfg: EnrichmentConfig) -> bool:
    dt = to_datetime(timestamp)
    if dt.weekday() in cfg.weekend_days or dt.date() in cfg.holidays:
        return True
    return not (cfg.work_start <= dt.time() < cfg.work_end)


def url_host(url: str) -> str:
    host = urlsplit(url if "//" in url else "//" + url).hostname or ""
    return host.lower()


def site_category(url: str, cfg: EnrichmentConfig) -> SiteCategory:
    host = url_host(url)
    for cat, patterns in cfg.site_categories.items():
        for p in patterns:
            p = p.lower()
            if host == p or host.endswith("." + p):
                return cat
    return SiteCategory.NEUTRAL


def _domain(address: str) -> str:
    return address.rpartition("@")[2].strip().lower()


def email_direction(event: RawEmailEvent, org_domain: str) -> EmailDirection:
    org = org_domain.lower()
    parties = event.recipients + ((event.sender,) if event.sender else ())
    if any(_domain(a) != org for a in parties):
        return EmailDirection.EXTERNAL
    return EmailDirection.INTERNAL


class UnknownUser(KeyError):
    pass


@dataclass(frozen=True, slots=True)
class EnrichedEvent:
    base: LogEvent
    after_hours: bool
    own_pc: bool
    site_category: SiteCategory | None = None
    email_direction: EmailDirection | None = None
    removable_flow: RemovableFlow | None = None

    @property
    def kind(self) -> SourceKind:
        return self.base.kind

    @property
    def user_id(self) -> str:
        return self.base.user_id

    @property
    def timestamp(self) -> int:
        return self.base.timestamp


def assign_pcs(events: Iterable[LogEvent], days: set[int] | None = None) -> dict[str, str]:
    """Each user's most frequent logon PC, counted over ``days`` when given.

    Users with no logon inside ``days`` fall back to all of their logons;
    ties go to the lexicographically smallest PC id.
    """
    window: dict[str, Counter] = defaultdict(Counter)
    overall: dict[str, Counter] = defaultdict(Counter)
    for ev in events:
        if isinstance(ev, RawLogonEvent) and ev.activity is LogonActivity.LOGON:
            overall[ev.user_id][ev.pc_id] += 1
            if days is None or day_of(ev.timestamp) in days:
                window[ev.user_id][ev.pc_id] += 1
    out = {}
    for user, counts in overall.items():
        use = window.get(user) or counts
        out[user] = min(use.items(), key=lambda kv: (-kv[1], kv[0]))[0]
    return out


def enrich(event: LogEvent, cfg: EnrichmentConfig, directory: UserDirectory | None,
           pc_assignment: dict[str, str]) -> EnrichedEvent:
    if directory is not None and event.user_id not in directory:
        raise UnknownUser(event.user_id)
    assigned = pc_assignment.get(event.user_id)
    own = assigned is None or assigned == event.pc_id
    after = is_after_hours(event.timestamp, cfg)
    if isinstance(event, RawHttpEvent):
        return EnrichedEvent(event, after, own, site_category=site_category(event.url, cfg))
    if isinstance(event, RawEmailEvent):
        return EnrichedEvent(event, after, own, email_direction=email_direction(event, cfg.org_email_domain))
    if isinstance(event, RawFileEvent):
        if event.to_removable:
            flow = RemovableFlow.TO_REMOVABLE
        elif event.from_removable:
            flow = RemovableFlow.FROM_REMOVABLE
        else:
            flow = RemovableFlow.NONE
        return EnrichedEvent(event, after, own, removable_flow=flow)
    return EnrichedEvent(event, after, own)


@dataclass(frozen=True)
class LogKey:
    key_id: int
    template: str


@dataclass(frozen=True, slots=True)
class KeyedEvent:
    template: str
    values: tuple
    event: EnrichedEvent

    @property
    def timestamp(self) -> int:
        return self.event.base.timestamp

    @property
    def user_id(self) -> str:
        return self.event.base.user_id

    @property
    def event_id(self) -> str:
        return self.event.base.event_id


_BASE_TEMPLATES = {
    SourceKind.LOGON: {"Logon": "Logon to *", "Logoff": "Logoff from *"},
    SourceKind.DEVICE: {"Connect": "Connect device on *", "Disconnect": "Disconnect device from *"},
}


def key_template(ev: EnrichedEvent) -> str:
    """Composite template: base message, then qualifiers for non-default flags.

    An in-hours event on the user's own PC with a neutral category has no
    qualifier, so it reads like the plain log message (``"Logoff from *"``).
    """
    base = ev.base
    activity = base.activity.value
    tags = []
    if base.kind in _BASE_TEMPLATES:
        text = _BASE_TEMPLATES[base.kind][activity]
    elif base.kind is SourceKind.HTTP:
        text = f"{activity} *"
        if ev.site_category is not SiteCategory.NEUTRAL:
            tags.append(ev.site_category.value)
    elif base.kind is SourceKind.EMAIL:
        text = f"{activity} email *"
        if ev.email_direction is EmailDirection.EXTERNAL:
            tags.append("external")
    else:
        text = f"{activity} *"
        if ev.removable_flow is not RemovableFlow.NONE:
            tags.append(ev.removable_flow.value)
    if not ev.own_pc:
        tags.append("other pc")
    if ev.after_hours:
        tags.append("after hours")
    return text + "".join(f" [{t}]" for t in tags)


def key_values(ev: EnrichedEvent) -> tuple:
    base = ev.base
    if isinstance(base, (RawLogonEvent, RawDeviceEvent)):
        return (base.timestamp, base.pc_id)
    if isinstance(base, RawHttpEvent):
        return (base.timestamp, url_host(base.url))
    if isinstance(base, RawEmailEvent):
        return (base.timestamp, base.size, base.attachments)
    return (base.timestamp, base.filename)


def extract_key(ev: EnrichedEvent) -> KeyedEvent:
    return KeyedEvent(key_template(ev), key_values(ev), ev)


class KeyVocabulary:
    """Frozen, ordered set of key templates; position is the key id."""

    def __init__(self, templates: Iterable[str]):
        self.templates: tuple[str, ...] = tuple(templates)
        self._index = {t: i for i, t in enumerate(self.templates)}
        if len(self._index) != len(self.templates):
            raise ValueError("duplicate template in vocabulary")
        for t in self.templates:
            if "\n" in t:
                raise ValueError("template contains a newline")

    def __len__(self) -> int:
        return len(self.templates)

    def __iter__(self):
        return iter(self.templates)

    def __eq__(self, other) -> bool:
        return isinstance(other, KeyVocabulary) and self.templates == other.templates

    def encode(self, item: KeyedEvent | str) -> int:
        template = item if isinstance(item, str) else item.template
        return self._index.get(template, OOV)

    def decode(self, key_id: int) -> str:
        return self.templates[key_id]

    def key(self, key_id: int) -> LogKey:
        return LogKey(key_id, self.templates[key_id])

    @property
    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.templates).encode("utf-8")).hexdigest()

    def save(self, path, manifest: str = "") -> None:
        lines = [VOCAB_HEADER + (f" manifest={manifest}" if manifest else "")]
        lines.extend(self.templates)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "KeyVocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith(VOCAB_HEADER):
            raise ValueError(f"{path} is not a vocabulary file (missing '{VOCAB_HEADER}')")
        return cls(lines[1:])


def build_vocabulary(events: Iterable[KeyedEvent | str]) -> KeyVocabulary:
    seen: dict[str, None] = {}
    for ev in events:
        seen.setdefault(ev if isinstance(ev, str) else ev.template, None)
    if not seen:
        raise ValueError("cannot build a vocabulary from an empty event stream")
    return KeyVocabulary(seen)


def key_frequencies(events: Iterable[KeyedEvent]) -> dict[str, float]:
    """Empirical template frequencies (diagnostic only)."""
    counts = Counter(ev.template for ev in events)
    total = sum(counts.values())
    return {t: c / total for t, c in counts.most_common()}
