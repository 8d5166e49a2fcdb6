"""Seeded generator for a small CERT-r5.2-shaped corpus with planted insiders.

Benign users repeat the daily routine of their role: logon, a fixed
sequence of web/email/file actions, logoff.  Day-to-day variation comes
from two Poisson-sized slots of extra actions, optional per-user habits
(job-board browsing, a removable-drive backup) and occasional late stays,
which supply the benign after-hours noise.

Each insider keeps the routine and overlays the behaviour of one scenario:

1. after-hours removable-drive copies and uploads to wikileaks.org, then leaves
2. job-board browsing, a removable-drive spike, a competitor email, then leaves
3. keylogger download, drive plugged into the supervisor's PC, mass email from
   the supervisor's PC at night, then leaves
4. logons to colleagues' PCs and files mailed to a personal address
5. uploads to dropbox.com, then laid off
"""

from __future__ import annotations

import base64
import csv
import hashlib
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta
from pathlib import Path

import numpy as np

from .ingest import (
    EPOCH,
    DeviceActivity,
    EmailActivity,
    FileActivity,
    HttpActivity,
    LdapRecord,
    LogEvent,
    LogonActivity,
    RawDeviceEvent,
    RawEmailEvent,
    RawFileEvent,
    RawHttpEvent,
    RawLogonEvent,
    SourceKind,
    sort_key,
    write_events,
    write_ldap_snapshot,
)

log = logging.getLogger(__name__)

SCENARIOS = (1, 2, 3, 4, 5)

# routine body per role; letters are the action codes in CODE_TEMPLATES
ROLE_ROUTINES = {
    "Salesman": "EVSXVEOSWVXESVOE",
    "ITAdmin": "EOWDVOWSEDRWOSEV",
    "Engineer": "VEOWOWVSEOWRDOWS",
    "Manager": "ESSVEXSOVESXEVSO",
    "Accountant": "EOWOWSVEXOWRSWVE",
    "Scientist": "VDDEOWVSDEOWVXVS",
    "Technician": "EVOSVRWEOVDSEVWO",
    "Administrator": "ESEVOWSXVEOWSEVR",
}
# action repeated a Poisson number of times in the morning / afternoon slot
ROLE_SLOTS = {
    "Salesman": ("V", "E"),
    "ITAdmin": ("V", "O"),
    "Engineer": ("E", "V"),
    "Manager": ("E", "V"),
    "Accountant": ("V", "E"),
    "Scientist": ("O", "E"),
    "Technician": ("E", "V"),
    "Administrator": ("V", "O"),
}
MORNING_SLOT = 2      # slot sits after this many routine actions
AFTERNOON_SLOT = 11
JOB_SLOT = 7
DEVICE_SLOT = 13
DEVICE_BLOCK = "CTTN"
OVERTIME_BLOCK = "EOW"

# in-hours, own-PC template of every action code
CODE_TEMPLATES = {
    "L": "Logon to *",
    "F": "Logoff from *",
    "V": "Visit *",
    "J": "Visit * [job-hunting]",
    "D": "Download *",
    "K": "Download *",              # keylogger, neutral-category host
    "H": "Upload * [hacktivist]",
    "B": "Upload * [file-sharing]",
    "E": "View email *",
    "S": "Send email *",
    "M": "Send email *",            # mass internal email
    "X": "Send email * [external]",
    "A": "Send email * [external]",  # attachment to a personal address
    "P": "Send email * [external]",  # competitor contact
    "O": "Open *",
    "W": "Write *",
    "R": "Delete *",
    "T": "Copy * [to removable]",
    "Y": "Copy * [from removable]",
    "C": "Connect device on *",
    "N": "Disconnect device from *",
}

NEUTRAL_SITES = (
    "google.com", "cnn.com", "bbc.co.uk", "nytimes.com", "espn.com", "weather.com",
    "amazon.com", "wikipedia.org", "yahoo.com", "msn.com", "ebay.com", "reddit.com",
    "youtube.com", "craigslist.org", "imdb.com", "bankofamerica.com", "webmd.com",
)
JOB_SITES = ("careerbuilder.com", "monster.com", "indeed.com", "simplyhired.com", "jobhuntersbible.com")
KEYLOGGER_URLS = ("http://www.keylogger-pro.com/download/keylogger.exe",
                  "http://www.refog-keylog.com/files/keylog_setup.exe")
EXTERNAL_DOMAINS = ("gmail.com", "yahoo.com", "hotmail.com", "comcast.net", "aol.com")
COMPETITOR_DOMAINS = ("lockheed.com", "northrop.com", "raytheon.com")
FIRST_NAMES = ("James", "Mary", "John", "Linda", "Robert", "Susan", "Michael", "Karen", "David",
               "Nancy", "Ralph", "Olga", "Quentin", "Ursula", "Victor", "Wanda", "Xavier", "Yolanda",
               "Zachary", "Irene", "Hector", "Gloria", "Felix", "Edith", "Dorian", "Celeste")
LAST_NAMES = ("Abbott", "Baxter", "Carver", "Dalton", "Ellison", "Fuentes", "Garrison", "Holloway",
              "Ingram", "Jennings", "Keller", "Lambert", "Mercer", "Norris", "Ortega", "Pruitt",
              "Quinn", "Ramsey", "Sutton", "Talbot", "Underwood", "Vaughn", "Whitaker", "Yates")
FILE_EXTS = (".doc", ".pdf", ".xls", ".txt", ".jpg", ".zip")
FILE_HEADERS = {".doc": "D0-CF-11-E0-A1-B1-1A-E1", ".pdf": "25-50-44-46-2D", ".xls": "D0-CF-11-E0-A1-B1-1A-E1",
                ".txt": "", ".jpg": "FF-D8", ".zip": "50-4B-03-04"}
WORDS = ("report", "budget", "meeting", "project", "schedule", "client", "review", "draft",
         "quarterly", "status", "invoice", "design", "contract", "update", "proposal")
MASS_EMAIL_RECIPIENTS = 25


@dataclass
class GenConfig:
    seed: int = 42
    n_users: int = 200
    n_days: int = 30
    start_date: date = date(2010, 1, 4)
    insiders: dict[int, int] = field(default_factory=lambda: {s: 2 for s in SCENARIOS})
    org_domain: str = "dtaa.com"
    work_start: time = time(8, 0)
    work_end: time = time(18, 0)
    logon_time: time = time(8, 30)
    logoff_time: time = time(17, 30)
    jitter_minutes: int = 45
    morning_extra_rate: float = 0.5
    afternoon_extra_rate: float = 0.0
    after_hours_fraction: float = 0.02
    job_roles: tuple[str, ...] = ("Salesman",)
    device_roles: tuple[str, ...] = ("Technician",)

    def __post_init__(self):
        if self.n_users < 0 or self.n_days < 0:
            raise ValueError("n_users and n_days must be non-negative")
        if any(c < 0 for c in self.insiders.values()):
            raise ValueError("insider counts must be non-negative")
        if set(self.insiders) - set(SCENARIOS):
            raise ValueError(f"unknown scenarios {sorted(set(self.insiders) - set(SCENARIOS))}")
        if self.total_insiders > self.n_users:
            raise ValueError(f"{self.total_insiders} insiders requested but only {self.n_users} users")
        for name in ("morning_extra_rate", "afternoon_extra_rate", "after_hours_fraction"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        self.job_roles = tuple(self.job_roles)
        self.device_roles = tuple(self.device_roles)
        unknown = set(self.job_roles + self.device_roles) - set(ROLE_ROUTINES)
        if unknown:
            raise ValueError(f"unknown roles {sorted(unknown)}")

    @property
    def total_insiders(self) -> int:
        return sum(self.insiders.values())

    @classmethod
    def from_mapping(cls, raw: dict) -> "GenConfig":
        kwargs = dict(raw)
        if "start_date" in kwargs:
            kwargs["start_date"] = date.fromisoformat(str(kwargs["start_date"]))
        for key in ("work_start", "work_end", "logon_time", "logoff_time"):
            if key in kwargs:
                kwargs[key] = time.fromisoformat(str(kwargs[key]))
        if "insiders" in kwargs:
            ins = kwargs["insiders"]
            if isinstance(ins, dict):
                kwargs["insiders"] = {int(str(k).lower().lstrip("s-")): int(v) for k, v in ins.items()}
            else:
                kwargs["insiders"] = {s: int(ins) for s in SCENARIOS}
        unknown = set(kwargs) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown generate options {sorted(unknown)}")
        return cls(**kwargs)

    def workdays(self) -> list[date]:
        days = (self.start_date + timedelta(days=k) for k in range(self.n_days))
        return [d for d in days if d.weekday() < 5]

    def months(self) -> list[str]:
        """Snapshot months: every month the corpus touches plus the following one."""
        if self.n_days == 0:
            return []
        last = self.start_date + timedelta(days=self.n_days - 1)
        out = []
        y, m = self.start_date.year, self.start_date.month
        while (y, m) <= (last.year, last.month):
            out.append(f"{y:04d}-{m:02d}")
            y, m = (y + 1, 1) if m == 12 else (y, m + 1)
        out.append(f"{y:04d}-{m:02d}")
        return out

    def late_day_probability(self) -> float:
        """Chance of a late stay so that after-hours events make up ``after_hours_fraction``."""
        per_late_day = len(OVERTIME_BLOCK) + 1
        p = self.after_hours_fraction * self.expected_day_length() / per_late_day
        return min(p, 1.0)

    def expected_day_length(self) -> float:
        return (2 + 16 + self.morning_extra_rate + self.afternoon_extra_rate
                + self.role_share(self.job_roles) + len(DEVICE_BLOCK) * self.role_share(self.device_roles))

    def role_share(self, roles) -> float:
        """Fraction of users whose (round-robin) role is in ``roles``."""
        if self.n_users == 0:
            return 0.0
        names = list(ROLE_ROUTINES)
        return sum(names[k % len(names)] in roles for k in range(self.n_users)) / self.n_users


@dataclass
class User:
    index: int
    user_id: str
    name: str
    email: str
    role: str
    pc: str
    team: int
    supervisor: int | None
    job_hunter: bool = False
    device_user: bool = False
    scenario: int | None = None


@dataclass
class Step:
    code: str
    pc: str | None = None      # overrides the user's own PC
    late: bool = False
    malicious: bool = False
    night: bool = False


@dataclass
class AnswerKey:
    scenarios: dict[str, int] = field(default_factory=dict)
    events: dict[str, list[str]] = field(default_factory=dict)

    def users(self) -> set[str]:
        return set(self.scenarios)

    def malicious_ids(self) -> set[str]:
        return {e for ids in self.events.values() for e in ids}

    def write(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user", "scenario", "event_id"])
            for user in sorted(self.scenarios):
                ids = self.events.get(user) or [""]
                for eid in ids:
                    w.writerow([user, self.scenarios[user], eid])

    @classmethod
    def read(cls, path) -> "AnswerKey":
        key = cls()
        path = Path(path)
        if not path.exists():
            return key
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(line for line in fh if not line.startswith("#")):
                user, scen = row["user"].strip(), int(row["scenario"])
                key.scenarios[user] = scen
                ids = key.events.setdefault(user, [])
                if row.get("event_id"):
                    ids.append(row["event_id"].strip())
        return key


class _Ids:
    def __init__(self, seed: int):
        self.seed = seed
        self.counter = 0

    def next(self) -> str:
        self.counter += 1
        digest = hashlib.sha1(f"{self.seed}:{self.counter}".encode()).digest()
        return base64.b32encode(digest).decode()[:20]


def _seconds(day: date, t: time | float) -> int:
    if isinstance(t, time):
        t = t.hour * 3600 + t.minute * 60 + t.second
    return int((datetime.combine(day, time()) - EPOCH).total_seconds()) + int(t)


def _tod(t: time) -> int:
    return t.hour * 3600 + t.minute * 60 + t.second


def _make_users(cfg: GenConfig, rng: np.random.Generator) -> list[User]:
    roles = list(ROLE_ROUTINES)
    pcs = rng.permutation(10000)[:cfg.n_users]
    users = []
    for idx in range(cfg.n_users):
        first = FIRST_NAMES[int(rng.integers(len(FIRST_NAMES)))]
        last = LAST_NAMES[int(rng.integers(len(LAST_NAMES)))]
        name = f"{first} {last} {idx:04d}"
        uid = f"{first[0]}{last[:2].upper()}{idx:04d}"
        team = idx // 10
        lead = team * 10
        supervisor = None if idx == 0 else (0 if idx == lead else lead)
        users.append(User(idx, uid, name, f"{first}.{last}.{idx:04d}@{cfg.org_domain}".lower(),
                          roles[idx % len(roles)], f"PC-{int(pcs[idx]):04d}", team, supervisor))
    return users


def _assign_insiders(cfg: GenConfig, users: list[User], rng: np.random.Generator) -> None:
    # prefer staff (not team leads) whose role carries no habitual job or device activity
    habits = set(cfg.job_roles) | set(cfg.device_roles)
    tiers = (
        [u.index for u in users if u.supervisor is not None and u.index % 10 != 0 and u.role not in habits],
        [u.index for u in users if u.supervisor is not None and u.index % 10 != 0],
        [u.index for u in users if u.supervisor is not None],
        [u.index for u in users],
    )
    candidates = next(t for t in tiers if len(t) >= cfg.total_insiders)
    picks = list(rng.choice(candidates, size=cfg.total_insiders, replace=False)) if cfg.total_insiders else []
    k = 0
    for scen in SCENARIOS:
        for _ in range(cfg.insiders.get(scen, 0)):
            u = users[int(picks[k])]
            u.scenario = scen
            if scen == 3:
                u.role = "ITAdmin"
            k += 1
    for u in users:
        if u.scenario is None:
            u.job_hunter = u.role in cfg.job_roles
            u.device_user = u.role in cfg.device_roles


def _routine(user: User, rng: np.random.Generator, cfg: GenConfig) -> list[Step]:
    body = ROLE_ROUTINES[user.role]
    am, pm = ROLE_SLOTS[user.role]
    steps: list[Step] = []
    for k, code in enumerate(body):
        if k == MORNING_SLOT:
            steps.extend(Step(am) for _ in range(int(rng.poisson(cfg.morning_extra_rate))))
        if k == AFTERNOON_SLOT:
            steps.extend(Step(pm) for _ in range(int(rng.poisson(cfg.afternoon_extra_rate))))
        if k == JOB_SLOT and user.job_hunter:
            steps.append(Step("J"))
        if k == DEVICE_SLOT and user.device_user:
            steps.extend(Step(c) for c in DEVICE_BLOCK)
        steps.append(Step(code))
    return steps


def _insert_midday(steps: list[Step], block: list[Step], rng: np.random.Generator, lo: int = 10) -> None:
    """Insert ``block`` at a random point no earlier than day position ``lo``.

    Day position counts the logon, so routine index ``lo - 1`` is position ``lo``.
    """
    start = max(0, min(lo - 1, len(steps)))
    at = int(rng.integers(start, len(steps) + 1))
    steps[at:at] = block


@dataclass
class _Timeline:
    workdays: list[date]
    active_until: int  # index into workdays, inclusive, for departing users
    malicious_days: list[int]


def _timeline(cfg: GenConfig) -> _Timeline:
    days = cfg.workdays()
    months = {d.strftime("%Y-%m") for d in days}
    if len(months) >= 2:
        last_month = max(months)
        until = max(k for k, d in enumerate(days) if d.strftime("%Y-%m") < last_month)
    else:
        until = len(days) - 1
    start = min(int(0.45 * len(days)), until)
    return _Timeline(days, until, list(range(start, until + 1)))


def _spread(rng: np.random.Generator, pool: list[int], k: int) -> list[int]:
    k = min(k, len(pool))
    return sorted(int(x) for x in rng.choice(pool, size=k, replace=False)) if k else []


def _scenario_plan(user: User, users: list[User], cfg: GenConfig, tl: _Timeline,
                   rng: np.random.Generator) -> dict[int, list[tuple[str, list[Step]]]]:
    """Per workday index, the insider blocks to overlay: ("midday"|"night", steps)."""
    plan: dict[int, list[tuple[str, list[Step]]]] = defaultdict(list)
    days = tl.malicious_days
    scen = user.scenario
    if not days:
        return plan
    if scen == 1:
        for d in _spread(rng, days, 3):
            n_copy = int(rng.integers(2, 4))
            block = [Step("C", night=True)] + [Step("T", night=True) for _ in range(n_copy)]
            block += [Step("H", night=True), Step("N", night=True)]
            for s in block:
                s.malicious = True
            plan[d].append(("night", block))
    elif scen == 2:
        for d in days:
            plan[d].append(("midday", [Step("J", malicious=True) for _ in range(int(rng.integers(1, 3)))]))
        tail = days[len(days) // 2:]
        for d in tail:
            block = [Step("C"), Step("T"), Step("T"), Step("T"), Step("N")]
            for s in block:
                s.malicious = True
            plan[d].append(("midday", block))
        plan[tail[0]].append(("midday", [Step("P", malicious=True)]))
    elif scen == 3:
        sup_pc = users[user.supervisor].pc if user.supervisor is not None else None
        picks = _spread(rng, days, 3)
        while len(picks) < 3:
            picks.append(picks[-1])
        plan[picks[0]].append(("midday", [Step("K", malicious=True)]))
        block = [Step("L", pc=sup_pc), Step("C", pc=sup_pc), Step("Y", pc=sup_pc),
                 Step("N", pc=sup_pc), Step("F", pc=sup_pc)]
        for s in block:
            s.malicious = True
        plan[picks[1]].append(("midday", block))
        night = [Step("L", pc=sup_pc, night=True), Step("M", pc=sup_pc, night=True),
                 Step("M", pc=sup_pc, night=True), Step("F", pc=sup_pc, night=True)]
        for s in night:
            s.malicious = True
        plan[picks[2]].append(("night", night))
    elif scen == 4:
        others = [u.pc for u in users if u.index != user.index]
        victims = list(rng.choice(others, size=min(4, len(others)), replace=False)) if others else []
        chosen = _spread(rng, days, 6)
        for k, d in enumerate(chosen):
            if victims:
                pc = str(victims[k % len(victims)])
                block = [Step("L", pc=pc), Step("O", pc=pc), Step("O", pc=pc), Step("F", pc=pc)]
                for s in block:
                    s.malicious = True
                plan[d].append(("midday", block))
            if k % 2 == 1:
                plan[d].append(("midday", [Step("A", malicious=True)]))
    elif scen == 5:
        for d in _spread(rng, days[-5:], 3):
            plan[d].append(("midday", [Step("B", malicious=True) for _ in range(int(rng.integers(2, 4)))]))
    return plan


class _Writer:
    """Turns steps into typed events with fresh ids."""

    def __init__(self, cfg: GenConfig, users: list[User], ids: _Ids):
        self.cfg = cfg
        self.users = users
        self.ids = ids
        self.by_kind: dict[SourceKind, list[LogEvent]] = defaultdict(list)
        self.malicious: dict[str, list[str]] = defaultdict(list)
        self.teams: dict[int, list[User]] = defaultdict(list)
        for u in users:
            self.teams[u.team].append(u)

    def emit(self, user: User, step: Step, ts: int, rng: np.random.Generator) -> None:
        pc = step.pc or user.pc
        eid = self.ids.next()
        code = step.code
        team = [u for u in self.teams[user.team] if u.index != user.index] or [user]
        ev: LogEvent
        if code in "LF":
            act = LogonActivity.LOGON if code == "L" else LogonActivity.LOGOFF
            ev = RawLogonEvent(eid, ts, user.user_id, pc, act)
        elif code in "CN":
            act = DeviceActivity.CONNECT if code == "C" else DeviceActivity.DISCONNECT
            tree = "R:\\;R:\\Documents;R:\\Backup" if code == "C" else ""
            ev = RawDeviceEvent(eid, ts, user.user_id, pc, tree, act)
        elif code in "VJDKHB":
            if code == "V":
                url, act = f"http://www.{_pick(rng, NEUTRAL_SITES)}/{_word(rng)}/{_word(rng)}.html", HttpActivity.VISIT
            elif code == "J":
                url, act = f"http://www.{_pick(rng, JOB_SITES)}/jobs/{_word(rng)}.aspx", HttpActivity.VISIT
            elif code == "D":
                url, act = f"http://www.{_pick(rng, NEUTRAL_SITES)}/files/{_word(rng)}.pdf", HttpActivity.DOWNLOAD
            elif code == "K":
                url, act = _pick(rng, KEYLOGGER_URLS), HttpActivity.DOWNLOAD
            elif code == "H":
                url, act = f"http://wikileaks.org/submit/{_word(rng)}.php", HttpActivity.UPLOAD
            else:
                url, act = f"http://www.dropbox.com/upload/{_word(rng)}", HttpActivity.UPLOAD
            ev = RawHttpEvent(eid, ts, user.user_id, pc, url, act, " ".join(_word(rng) for _ in range(3)))
        elif code in "ESMXAP":
            colleague = team[int(rng.integers(len(team)))]
            size = int(rng.integers(2000, 60000))
            attachments = 0
            if code == "E":
                to, sender, act = (user.email,), colleague.email, EmailActivity.VIEW
            elif code == "S":
                to, sender, act = (colleague.email,), user.email, EmailActivity.SEND
            elif code == "M":
                pool = [u.email for u in self.users if u.index != user.index]
                k = min(MASS_EMAIL_RECIPIENTS, len(pool))
                to = tuple(pool[int(i)] for i in rng.choice(len(pool), size=k, replace=False)) or (user.email,)
                sender, act = user.email, EmailActivity.SEND
            elif code == "X":
                to = (f"contact{int(rng.integers(100))}@{_pick(rng, EXTERNAL_DOMAINS)}",)
                sender, act = user.email, EmailActivity.SEND
            elif code == "A":
                local = user.email.split("@")[0]
                to, sender, act = (f"{local}@{_pick(rng, EXTERNAL_DOMAINS)}",), user.email, EmailActivity.SEND
                attachments, size = int(rng.integers(1, 4)), int(rng.integers(200000, 2000000))
            else:
                to = (f"recruiting@{_pick(rng, COMPETITOR_DOMAINS)}",)
                sender, act = user.email, EmailActivity.SEND
                attachments = 1
            ev = RawEmailEvent(eid, ts, user.user_id, pc, to, (), (), sender, act, size, attachments,
                               " ".join(_word(rng) for _ in range(4)))
        else:
            act = {"O": FileActivity.OPEN, "W": FileActivity.WRITE, "R": FileActivity.DELETE,
                   "T": FileActivity.COPY, "Y": FileActivity.COPY}[code]
            ext = _pick(rng, FILE_EXTS)
            fname = f"C:\\{_word(rng)}\\{_word(rng).upper()}{int(rng.integers(1000))}{ext}"
            ev = RawFileEvent(eid, ts, user.user_id, pc, fname, act, code == "T", code == "Y",
                              f"{FILE_HEADERS[ext]} {_word(rng)} {_word(rng)}".strip())
        self.by_kind[ev.kind].append(ev)
        if step.malicious:
            self.malicious[user.user_id].append(eid)


def _pick(rng: np.random.Generator, seq):
    return seq[int(rng.integers(len(seq)))]


def _word(rng: np.random.Generator) -> str:
    return WORDS[int(rng.integers(len(WORDS)))]


def _sorted_times(rng: np.random.Generator, lo: int, hi: int, k: int) -> list[int]:
    if k == 0:
        return []
    hi = max(hi, lo + k + 1)
    return sorted(int(x) + lo for x in rng.choice(hi - lo, size=k, replace=False))


def _user_days(user: User, users: list[User], cfg: GenConfig, tl: _Timeline, writer: _Writer) -> int:
    """Emit every event of one user; returns the event count."""
    rng = np.random.default_rng([cfg.seed, user.index])
    plan = _scenario_plan(user, users, cfg, tl, rng) if user.scenario else {}
    departs = user.scenario in (1, 2, 3, 5)
    p_late = cfg.late_day_probability()
    jitter = cfg.jitter_minutes * 60
    ws, we = _tod(cfg.work_start), _tod(cfg.work_end)
    count = 0
    for k, day in enumerate(tl.workdays):
        if departs and k > tl.active_until:
            break
        steps = _routine(user, rng, cfg)
        late = bool(rng.random() < p_late)
        night: list[Step] = []
        for where, block in plan.get(k, []):
            if where == "night":
                night.extend(block)
            else:
                _insert_midday(steps, block, rng)
        if night:
            late = False
        start = _tod(cfg.logon_time) + int(np.clip(rng.normal(0, jitter / 3), -jitter, jitter))
        start = max(start, ws + 60)
        end = _tod(cfg.logoff_time) + int(np.clip(rng.normal(0, jitter / 3), -jitter, jitter))
        end = min(end, we - 120)
        times = _sorted_times(rng, start + 1, end, len(steps))
        writer.emit(user, Step("L"), _seconds(day, start), rng)
        for step, t in zip(steps, times):
            writer.emit(user, step, _seconds(day, t), rng)
        count += 1 + len(steps)
        tail: list[Step] = []
        if late:
            tail = [Step(c) for c in OVERTIME_BLOCK]
            t0 = we + int(rng.integers(5 * 60, 30 * 60))
            t1 = t0 + int(rng.integers(30 * 60, 150 * 60))
        elif night:
            tail = night
            t0 = _tod(time(19, 30)) + int(rng.integers(0, 3600))
            t1 = min(t0 + int(rng.integers(3600, 3 * 3600)), 86400 - 120)
        else:
            t0 = t1 = end
        for step, t in zip(tail, _sorted_times(rng, t0, t1, len(tail))):
            writer.emit(user, step, _seconds(day, t), rng)
        logoff_at = t1 + 60 if tail else end + 60
        writer.emit(user, Step("F"), _seconds(day, logoff_at), rng)
        count += len(tail) + 1
    return count


def _ldap_records(cfg: GenConfig, users: list[User], month: str, departed: dict[str, str]) -> list[LdapRecord]:
    out = []
    for u in users:
        leave = departed.get(u.user_id)
        if leave is not None and month >= leave:
            continue
        sup = users[u.supervisor].name if u.supervisor is not None else ""
        out.append(LdapRecord(u.name, u.user_id, u.email, u.role, f"Project {u.team % 7 + 1}",
                              "1", "Operations" if u.team % 2 else "Research",
                              f"Department {u.team % 5 + 1}", f"Team {u.team}", sup))
    return out


@dataclass
class GeneratedCorpus:
    out_dir: Path
    users: list[User]
    answer_key: AnswerKey
    counts: dict[str, int]
    per_user: dict[str, int]


def generate(cfg: GenConfig, out_dir) -> GeneratedCorpus:
    """Write the six sources, ``LDAP/<YYYY-MM>.csv`` and ``answers.csv`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    users = _make_users(cfg, rng)
    _assign_insiders(cfg, users, rng)
    tl = _timeline(cfg)
    writer = _Writer(cfg, users, _Ids(cfg.seed))
    per_user = {u.user_id: _user_days(u, users, cfg, tl, writer) for u in users}

    counts = {}
    for kind in SourceKind:
        events = sorted(writer.by_kind.get(kind, []), key=sort_key)
        counts[kind.value] = write_events(out / kind.filename, kind, events)

    months = cfg.months()
    departed = {}
    if tl.workdays:
        leave_month = _next_month(tl.workdays[tl.active_until])
        departed = {u.user_id: leave_month for u in users if u.scenario in (1, 2, 3, 5)}
    ldap_dir = out / "LDAP"
    ldap_dir.mkdir(exist_ok=True)
    for month in months:
        write_ldap_snapshot(ldap_dir / f"{month}.csv", _ldap_records(cfg, users, month, departed))

    key = AnswerKey({u.user_id: u.scenario for u in users if u.scenario},
                    {u.user_id: list(writer.malicious.get(u.user_id, [])) for u in users if u.scenario})
    key.write(out / "answers.csv")
    log.info("generated %d events for %d users in %s", sum(counts.values()), len(users), out)
    return GeneratedCorpus(out, users, key, counts, per_user)


def _next_month(d: date) -> str:
    y, m = (d.year + 1, 1) if d.month == 12 else (d.year, d.month + 1)
    return f"{y:04d}-{m:02d}"


@dataclass
class Plan:
    templates: list[str]
    expected_events: float
    workdays: int
    late_day_probability: float

    def render(self) -> str:
        lines = [f"workdays: {self.workdays}",
                 f"expected events: {self.expected_events:.0f}",
                 f"late-stay probability per day: {self.late_day_probability:.4f}",
                 f"key templates ({len(self.templates)}):"]
        lines += [f"  {t}" for t in self.templates]
        return "\n".join(lines)


def _with_tags(template: str, other_pc: bool = False, after: bool = False) -> str:
    return template + (" [other pc]" if other_pc else "") + (" [after hours]" if after else "")


# insider templates per scenario, written out by hand from the injectors above
SCENARIO_TEMPLATES = {
    1: ["Connect device on * [after hours]", "Copy * [to removable] [after hours]",
        "Upload * [hacktivist] [after hours]", "Disconnect device from * [after hours]",
        "Logoff from * [after hours]"],
    2: ["Visit * [job-hunting]", "Connect device on *", "Copy * [to removable]",
        "Disconnect device from *", "Send email * [external]"],
    3: ["Download *", "Logon to * [other pc]", "Connect device on * [other pc]",
        "Copy * [from removable] [other pc]", "Disconnect device from * [other pc]",
        "Logoff from * [other pc]", "Logon to * [other pc] [after hours]",
        "Send email * [other pc] [after hours]", "Logoff from * [other pc] [after hours]",
        "Logoff from * [after hours]"],
    4: ["Logon to * [other pc]", "Open * [other pc]", "Logoff from * [other pc]",
        "Send email * [external]"],
    5: ["Upload * [file-sharing]"],
}


def describe(cfg: GenConfig) -> Plan:
    """Templates the corpus can emit and its expected event volume."""
    days = cfg.workdays()
    if cfg.n_users == 0 or not days:
        return Plan([], 0.0, len(days), cfg.late_day_probability())
    roles = list(ROLE_ROUTINES)[:min(cfg.n_users, len(ROLE_ROUTINES))]
    if cfg.insiders.get(3):
        roles = list(dict.fromkeys(roles + ["ITAdmin"]))
    codes = ["L"]
    for r in roles:
        codes.extend(ROLE_ROUTINES[r])
        if cfg.morning_extra_rate > 0:
            codes.append(ROLE_SLOTS[r][0])
        if cfg.afternoon_extra_rate > 0:
            codes.append(ROLE_SLOTS[r][1])
    benign = cfg.n_users - cfg.total_insiders
    if benign and set(cfg.job_roles) & set(roles):
        codes.append("J")
    if benign and set(cfg.device_roles) & set(roles):
        codes.extend(DEVICE_BLOCK)
    codes.append("F")
    templates = [CODE_TEMPLATES[c] for c in codes]
    if cfg.after_hours_fraction > 0:
        templates += [_with_tags(CODE_TEMPLATES[c], after=True) for c in OVERTIME_BLOCK + "F"]
    for scen in SCENARIOS:
        if cfg.insiders.get(scen):
            templates += SCENARIO_TEMPLATES[scen]
    templates = list(dict.fromkeys(templates))

    per_day = cfg.expected_day_length() + cfg.late_day_probability() * len(OVERTIME_BLOCK)
    expected = cfg.n_users * len(days) * per_day
    tl = _timeline(cfg)
    lost_days = len(days) - 1 - tl.active_until
    expected -= sum(cfg.insiders.get(s, 0) for s in (1, 2, 3, 5)) * lost_days * per_day
    n_mal = len(tl.malicious_days)
    extra = {1: 3 * 6, 2: n_mal * 1.5 + (n_mal - n_mal // 2) * 5 + 1, 3: 1 + 5 + 4,
             4: min(6, n_mal) * 4 + min(6, n_mal) // 2, 5: 3 * 3}
    expected += sum(cfg.insiders.get(s, 0) * extra[s] for s in SCENARIOS)
    return Plan(templates, expected, len(days), cfg.late_day_probability())
