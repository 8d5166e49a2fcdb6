"""Streaming readers for the CERT r5.2 log sources and the LDAP snapshots."""

from __future__ import annotations

import csv
import heapq
import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Union

log = logging.getLogger(__name__)

TIME_FORMAT = "%m/%d/%Y %H:%M:%S"
EPOCH = datetime(1970, 1, 1)


class SourceKind(str, Enum):
    # declaration order is the tie-break order for simultaneous events
    LOGON = "logon"
    DEVICE = "device"
    FILE = "file"
    HTTP = "http"
    EMAIL = "email"

    @property
    def rank(self) -> int:
        return list(SourceKind).index(self)

    @property
    def filename(self) -> str:
        return f"{self.value}.csv"


class LogonActivity(str, Enum):
    LOGON = "Logon"
    LOGOFF = "Logoff"


class DeviceActivity(str, Enum):
    CONNECT = "Connect"
    DISCONNECT = "Disconnect"


class HttpActivity(str, Enum):
    VISIT = "Visit"
    DOWNLOAD = "Download"
    UPLOAD = "Upload"


class EmailActivity(str, Enum):
    SEND = "Send"
    RECEIVE = "Receive"
    VIEW = "View"


class FileActivity(str, Enum):
    OPEN = "Open"
    COPY = "Copy"
    WRITE = "Write"
    DELETE = "Delete"


# text written back out for each activity; parsing also accepts the bare name
_ACTIVITY_TEXT = {
    HttpActivity: "WWW {}",
    FileActivity: "File {}",
}


def _activity_text(activity: Enum) -> str:
    return _ACTIVITY_TEXT.get(type(activity), "{}").format(activity.value)


def _parse_activity(enum_cls, text: str):
    key = text.strip().lower()
    for prefix in ("www ", "file "):
        if key.startswith(prefix):
            key = key[len(prefix):]
    for member in enum_cls:
        if member.value.lower() == key:
            return member
    raise ValueError(f"unknown {enum_cls.__name__} {text!r}")


def parse_timestamp(text: str) -> int:
    """``MM/DD/YYYY HH:MM:SS`` to integer seconds since 1970-01-01 (no timezone)."""
    dt = datetime.strptime(text.strip(), TIME_FORMAT)
    return int((dt - EPOCH).total_seconds())


def format_timestamp(seconds: int) -> str:
    return (EPOCH + timedelta(seconds=seconds)).strftime(TIME_FORMAT)


def to_datetime(seconds: int) -> datetime:
    return EPOCH + timedelta(seconds=seconds)


def day_of(seconds: int) -> int:
    """Calendar day index (days since epoch) of a timestamp."""
    return seconds // 86400


def parse_bool(text: str) -> bool:
    key = text.strip().lower()
    if key in ("true", "1", "yes", "t", "y"):
        return True
    if key in ("false", "0", "no", "f", "n", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _split_addresses(text: str) -> tuple[str, ...]:
    return tuple(a.strip() for a in text.split(";") if a.strip())


@dataclass(frozen=True, slots=True)
class RawLogonEvent:
    event_id: str
    timestamp: int
    user_id: str
    pc_id: str
    activity: LogonActivity
    kind = SourceKind.LOGON


@dataclass(frozen=True, slots=True)
class RawDeviceEvent:
    event_id: str
    timestamp: int
    user_id: str
    pc_id: str
    file_tree: str
    activity: DeviceActivity
    kind = SourceKind.DEVICE


@dataclass(frozen=True, slots=True)
class RawHttpEvent:
    event_id: str
    timestamp: int
    user_id: str
    pc_id: str
    url: str
    activity: HttpActivity
    content: str = ""
    kind = SourceKind.HTTP


@dataclass(frozen=True, slots=True)
class RawEmailEvent:
    event_id: str
    timestamp: int
    user_id: str
    pc_id: str
    to: tuple[str, ...]
    cc: tuple[str, ...]
    bcc: tuple[str, ...]
    sender: str
    activity: EmailActivity
    size: int
    attachments: int
    content: str = ""
    kind = SourceKind.EMAIL

    @property
    def recipients(self) -> tuple[str, ...]:
        return self.to + self.cc + self.bcc


@dataclass(frozen=True, slots=True)
class RawFileEvent:
    event_id: str
    timestamp: int
    user_id: str
    pc_id: str
    filename: str
    activity: FileActivity
    to_removable: bool
    from_removable: bool
    content: str = ""
    kind = SourceKind.FILE


LogEvent = Union[RawLogonEvent, RawDeviceEvent, RawHttpEvent, RawEmailEvent, RawFileEvent]

HEADERS: dict[SourceKind, tuple[str, ...]] = {
    SourceKind.LOGON: ("id", "date", "user", "pc", "activity"),
    SourceKind.DEVICE: ("id", "date", "user", "pc", "file_tree", "activity"),
    SourceKind.HTTP: ("id", "date", "user", "pc", "url", "activity", "content"),
    SourceKind.EMAIL: ("id", "date", "user", "pc", "to", "cc", "bcc", "from", "activity",
                       "size", "attachments", "content"),
    SourceKind.FILE: ("id", "date", "user", "pc", "filename", "activity",
                      "to_removable_media", "from_removable_media", "content"),
}


def _nonneg_int(text: str, name: str) -> int:
    value = int(text.strip())
    if value < 0:
        raise ValueError(f"{name} must be non-negative, got {value}")
    return value


def event_from_row(kind: SourceKind, row: dict[str, str]) -> LogEvent:
    """Build one typed event from a header-keyed row; raises ValueError on bad data."""
    event_id = row["id"].strip()
    if not event_id:
        raise ValueError("empty event id")
    common = (event_id, parse_timestamp(row["date"]), row["user"].strip(), row["pc"].strip())
    if kind is SourceKind.LOGON:
        return RawLogonEvent(*common, _parse_activity(LogonActivity, row["activity"]))
    if kind is SourceKind.DEVICE:
        return RawDeviceEvent(*common, row["file_tree"], _parse_activity(DeviceActivity, row["activity"]))
    if kind is SourceKind.HTTP:
        url = row["url"].strip()
        if not url:
            raise ValueError("empty url")
        return RawHttpEvent(*common, url, _parse_activity(HttpActivity, row["activity"]), row["content"])
    if kind is SourceKind.EMAIL:
        activity = _parse_activity(EmailActivity, row["activity"])
        to = _split_addresses(row["to"])
        if activity is EmailActivity.SEND and not to:
            raise ValueError("Send event without recipients")
        return RawEmailEvent(*common, to, _split_addresses(row["cc"]), _split_addresses(row["bcc"]),
                             row["from"].strip(), activity, _nonneg_int(row["size"], "size"),
                             _nonneg_int(row["attachments"], "attachments"), row["content"])
    if kind is SourceKind.FILE:
        return RawFileEvent(*common, row["filename"], _parse_activity(FileActivity, row["activity"]),
                            parse_bool(row["to_removable_media"]), parse_bool(row["from_removable_media"]),
                            row["content"])
    raise ValueError(f"unknown source kind {kind}")


def event_to_row(event: LogEvent) -> list[str]:
    """Inverse of :func:`event_from_row`, in the column order of ``HEADERS``."""
    head = [event.event_id, format_timestamp(event.timestamp), event.user_id, event.pc_id]
    activity = _activity_text(event.activity)
    if isinstance(event, RawLogonEvent):
        return head + [activity]
    if isinstance(event, RawDeviceEvent):
        return head + [event.file_tree, activity]
    if isinstance(event, RawHttpEvent):
        return head + [event.url, activity, event.content]
    if isinstance(event, RawEmailEvent):
        return head + [";".join(event.to), ";".join(event.cc), ";".join(event.bcc), event.sender,
                       activity, str(event.size), str(event.attachments), event.content]
    return head + [event.filename, activity, str(event.to_removable), str(event.from_removable),
                   event.content]


@dataclass
class ErrorLedger:
    """Rows that could not be parsed or modeled; the run continues past them."""

    entries: list[tuple[int, str, str]] = field(default_factory=list)

    def record(self, row: int, source: str, reason: str) -> None:
        self.entries.append((row, source, reason))

    def __len__(self) -> int:
        return len(self.entries)

    def count(self, source: str) -> int:
        return sum(1 for _, s, _ in self.entries if s == source)

    def write(self, path, relative_to=None, manifest: str = "") -> None:
        """Write ``row,file,reason``; file names under ``relative_to`` are shortened."""
        base = Path(relative_to).resolve() if relative_to is not None else None
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if manifest:
                fh.write(f"# manifest: {manifest}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "file", "reason"])
            for row, source, reason in self.entries:
                if base is not None:
                    try:
                        source = Path(source).resolve().relative_to(base).as_posix()
                    except ValueError:
                        pass
                w.writerow([row, source, reason])


def parse_source(path, kind: SourceKind, ledger: ErrorLedger | None = None) -> Iterator[LogEvent]:
    """Yield typed events from one source file in file order.

    A header row is optional (the raw r5.2 ``http.csv`` ships without one);
    without it columns are taken positionally.  Bad rows go to ``ledger``
    with their line number.  Opening the file is the only fatal step.
    """
    kind = SourceKind(kind)
    ledger = ledger if ledger is not None else ErrorLedger()
    expected = HEADERS[kind]
    name = str(path)
    fh = open(path, newline="", encoding="utf-8")
    with fh:
        reader = csv.reader(fh)
        columns = expected
        first = True
        for row in reader:
            line = reader.line_num
            if first:
                first = False
                if row and row[0].strip().lower() == "id":
                    lowered = tuple(c.strip().lower() for c in row)
                    missing = set(expected) - set(lowered)
                    if missing:
                        raise ValueError(f"{name}: header lacks columns {sorted(missing)}")
                    columns = lowered
                    continue
            if len(row) != len(columns):
                ledger.record(line, name, f"expected {len(columns)} columns, got {len(row)}")
                continue
            try:
                yield event_from_row(kind, dict(zip(columns, row)))
            except (ValueError, KeyError) as exc:
                ledger.record(line, name, str(exc))


def count_data_rows(path) -> int:
    """Number of CSV records in a source file, excluding a header row."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        total = 0
        for k, row in enumerate(reader):
            if k == 0 and row and row[0].strip().lower() == "id":
                continue
            total += 1
    return total


def write_events(path, kind: SourceKind, events: Iterable[LogEvent]) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADERS[kind])
        for ev in events:
            w.writerow(event_to_row(ev))
            n += 1
    return n


def sort_key(event: LogEvent) -> tuple[int, int, str]:
    return (event.timestamp, event.kind.rank, event.event_id)


def _checked(stream: Iterable[LogEvent]) -> Iterator[LogEvent]:
    last = None
    for ev in stream:
        key = sort_key(ev)
        if last is not None and key < last:
            raise ValueError(f"input stream not time-ordered at event {ev.event_id}; sort it first")
        last = key
        yield ev


def merge_streams(streams: Iterable[Iterable[LogEvent]]) -> Iterator[LogEvent]:
    """Merge individually time-ordered streams into one globally ordered stream.

    Ties on timestamp are broken by source kind (logon, device, file, http,
    email) and then by event id.
    """
    return heapq.merge(*(_checked(s) for s in streams), key=sort_key)


def read_corpus(data_dir, ledger: ErrorLedger | None = None) -> list[LogEvent]:
    """Parse every source present in ``data_dir`` and merge them."""
    data_dir = Path(data_dir)
    streams = []
    for kind in SourceKind:
        path = data_dir / kind.filename
        if not path.exists():
            log.warning("source %s missing from %s", kind.filename, data_dir)
            continue
        streams.append(sorted(parse_source(path, kind, ledger), key=sort_key))
    return list(merge_streams(streams))


# ---------------------------------------------------------------------------
# LDAP

LDAP_HEADER = ("employee_name", "user_id", "email", "role", "projects", "business_unit",
               "functional_unit", "department", "team", "supervisor")


@dataclass(frozen=True)
class LdapRecord:
    employee_name: str
    user_id: str
    email: str
    role: str
    projects: str = ""
    business_unit: str = ""
    functional_unit: str = ""
    department: str = ""
    team: str = ""
    supervisor: str = ""


@dataclass
class UserDirectory:
    records: dict[str, LdapRecord]
    months: list[str]
    first_month: dict[str, str]
    departures: dict[str, str]
    supervisors: dict[str, str | None]

    def __contains__(self, user_id: str) -> bool:
        return user_id in self.records

    def __len__(self) -> int:
        return len(self.records)

    def departure(self, user_id: str) -> str | None:
        return self.departures.get(user_id)

    def supervisor_of(self, user_id: str) -> str | None:
        return self.supervisors.get(user_id)


def load_ldap(ldap_dir, ledger: ErrorLedger | None = None) -> UserDirectory:
    """Read monthly snapshots (``<YYYY-MM>.csv``, sorted by name) into one directory.

    A user's departure month is the first snapshot after their first
    appearance that no longer lists them.
    """
    ledger = ledger if ledger is not None else ErrorLedger()
    paths = sorted(Path(ldap_dir).glob("*.csv"))
    if not paths:
        raise FileNotFoundError(f"no LDAP snapshots in {ldap_dir}")
    records: dict[str, LdapRecord] = {}
    first_month: dict[str, str] = {}
    present: dict[str, set[str]] = {}
    months = [p.stem for p in paths]
    for path, month in zip(paths, months):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            members = present.setdefault(month, set())
            for row in reader:
                try:
                    rec = LdapRecord(**{k: (row.get(k) or "").strip() for k in LDAP_HEADER})
                except TypeError as exc:
                    ledger.record(reader.line_num, str(path), str(exc))
                    continue
                if not rec.user_id:
                    ledger.record(reader.line_num, str(path), "empty user_id")
                    continue
                prior = records.get(rec.user_id)
                if prior is not None and prior.employee_name != rec.employee_name:
                    ledger.record(reader.line_num, str(path),
                                  f"user_id {rec.user_id} reused for {rec.employee_name!r}")
                    members.add(rec.user_id)
                    continue
                records.setdefault(rec.user_id, rec)
                first_month.setdefault(rec.user_id, month)
                members.add(rec.user_id)
    departures = {}
    for uid, start in first_month.items():
        for month in months[months.index(start) + 1:]:
            if uid not in present[month]:
                departures[uid] = month
                break
    by_name = {}
    for uid, rec in records.items():
        by_name.setdefault(rec.employee_name, uid)
    supervisors = {uid: by_name.get(rec.supervisor) if rec.supervisor else None
                   for uid, rec in records.items()}
    return UserDirectory(records, months, first_month, departures, supervisors)


def write_ldap_snapshot(path, records: Iterable[LdapRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LDAP_HEADER)
        for rec in records:
            w.writerow([getattr(rec, k) for k in LDAP_HEADER])
