from datetime import date, time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from insiderlog.features import (
    OOV,
    EmailDirection,
    EnrichmentConfig,
    SiteCategory,
    UnknownUser,
    assign_pcs,
    build_vocabulary,
    email_direction,
    enrich,
    extract_key,
    is_after_hours,
    key_template,
    site_category,
    KeyVocabulary,
)
from insiderlog.ingest import (
    EmailActivity,
    FileActivity,
    HttpActivity,
    LogonActivity,
    RawEmailEvent,
    RawFileEvent,
    RawHttpEvent,
    RawLogonEvent,
    parse_timestamp,
)

CFG = EnrichmentConfig()
MON_9AM = parse_timestamp("01/04/2010 09:00:00")  # a Monday
MON_8PM = parse_timestamp("01/04/2010 20:00:00")


def _logon(ts, pc="PC-1", user="U1", act=LogonActivity.LOGON, eid="l"):
    return RawLogonEvent(eid, ts, user, pc, act)


def _email(to, sender="a@dtaa.com", cc=(), bcc=()):
    return RawEmailEvent("e", MON_9AM, "U1", "PC-1", tuple(to), tuple(cc), tuple(bcc), sender,
                         EmailActivity.SEND, 100, 0)


class TestAfterHours:
    @given(st.integers(min_value=0, max_value=4_102_444_799))
    def test_matches_clock_and_calendar(self, ts):
        """Default policy: weekdays 08:00 to 18:00 are working hours."""
        seconds_of_day = ts % 86400
        weekday = (ts // 86400 + 3) % 7  # 1970-01-01 was a Thursday
        working = weekday < 5 and 8 * 3600 <= seconds_of_day < 18 * 3600
        assert is_after_hours(ts, CFG) == (not working)

    def test_holiday(self):
        cfg = EnrichmentConfig(holidays=frozenset({date(2010, 1, 4)}))
        assert is_after_hours(MON_9AM, cfg)

    def test_inverted_hours_rejected(self):
        with pytest.raises(ValueError):
            EnrichmentConfig(work_start=time(18), work_end=time(8))


class TestCategories:
    @pytest.mark.parametrize("url,cat", [
        ("http://wikileaks.org/x", SiteCategory.HACKTIVIST),
        ("http://www.wikileaks.org/x", SiteCategory.HACKTIVIST),
        ("http://notwikileaks.org/x", SiteCategory.NEUTRAL),
        ("https://DROPBOX.com/up", SiteCategory.FILE_SHARING),
        ("monster.com/jobs", SiteCategory.JOB_HUNTING),
        ("http://news.example.com", SiteCategory.NEUTRAL),
    ])
    def test_site_category(self, url, cat):
        assert site_category(url, CFG) is cat

    def test_domain_in_two_categories_rejected(self):
        with pytest.raises(ValueError, match="both"):
            EnrichmentConfig(site_categories={SiteCategory.HACKTIVIST: ("x.org",),
                                              SiteCategory.FILE_SHARING: ("x.org",)})

    def test_email_direction(self):
        assert email_direction(_email(["b@dtaa.com"]), "dtaa.com") is EmailDirection.INTERNAL
        assert email_direction(_email(["b@dtaa.com"], bcc=["c@gmail.com"]), "dtaa.com") is EmailDirection.EXTERNAL
        assert email_direction(_email(["b@dtaa.com"], sender="me@yahoo.com"), "dtaa.com") is EmailDirection.EXTERNAL


class TestTemplates:
    def test_plain_logoff(self):
        ev = enrich(_logon(MON_9AM, act=LogonActivity.LOGOFF), CFG, None, {"U1": "PC-1"})
        assert key_template(ev) == "Logoff from *"

    def test_qualifiers(self):
        up = RawHttpEvent("h", MON_8PM, "U1", "PC-1", "http://wikileaks.org/p", HttpActivity.UPLOAD)
        assert key_template(enrich(up, CFG, None, {"U1": "PC-1"})) == "Upload * [hacktivist] [after hours]"

    def test_other_pc(self):
        ev = enrich(_logon(MON_9AM, pc="PC-9"), CFG, None, {"U1": "PC-1"})
        assert key_template(ev) == "Logon to * [other pc]"

    def test_removable_copy(self):
        f = RawFileEvent("f", MON_9AM, "U1", "PC-1", "a.doc", FileActivity.COPY, True, False)
        assert key_template(enrich(f, CFG, None, {})) == "Copy * [to removable]"

    def test_external_email(self):
        ev = enrich(_email(["x@gmail.com"]), CFG, None, {"U1": "PC-1"})
        assert key_template(ev) == "Send email * [external]"

    def test_values_keep_variable_parts(self):
        k = extract_key(enrich(_logon(MON_9AM, pc="PC-7"), CFG, None, {}))
        assert k.values == (MON_9AM, "PC-7")


class TestVocabulary:
    def test_round_trip_and_oov(self):
        v = build_vocabulary(["b", "a", "b", "c"])
        assert list(v) == ["b", "a", "c"]
        assert [v.decode(v.encode(t)) for t in v] == list(v)
        assert v.encode("never seen") == OOV

    def test_save_load(self, tmp_path):
        v = build_vocabulary(["Logon to *", "Upload * [hacktivist]"])
        v.save(tmp_path / "vocab.txt", manifest="m1")
        w = KeyVocabulary.load(tmp_path / "vocab.txt")
        assert w == v and w.hash == v.hash

    def test_hash_depends_on_order(self):
        assert build_vocabulary(["a", "b"]).hash != build_vocabulary(["b", "a"]).hash

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            build_vocabulary([])

    def test_load_rejects_other_files(self, tmp_path):
        (tmp_path / "x.txt").write_text("a\nb\n")
        with pytest.raises(ValueError, match="not a vocabulary"):
            KeyVocabulary.load(tmp_path / "x.txt")


class TestAssignPcs:
    def test_most_frequent_with_tie_to_smallest(self):
        evs = [_logon(1, "PC-2"), _logon(2, "PC-1"), _logon(3, "PC-3", user="U2"),
               _logon(4, "PC-1", user="U2"), _logon(5, "PC-3", user="U2")]
        assert assign_pcs(evs) == {"U1": "PC-1", "U2": "PC-3"}

    def test_logoffs_ignored(self):
        evs = [_logon(1, "PC-2"), _logon(2, "PC-1", act=LogonActivity.LOGOFF)]
        assert assign_pcs(evs) == {"U1": "PC-2"}

    def test_days_restrict_with_fallback(self):
        evs = [_logon(10, "PC-1"), _logon(86400 + 10, "PC-2"), _logon(86400 + 20, "PC-2"),
               _logon(30, "PC-5", user="U2")]
        assert assign_pcs(evs, days={0}) == {"U1": "PC-1", "U2": "PC-5"}
        assert assign_pcs(evs, days={1}) == {"U1": "PC-2", "U2": "PC-5"}

    def test_unknown_user(self, small_corpus):
        from insiderlog.ingest import load_ldap
        corpus, _ = small_corpus
        directory = load_ldap(corpus.out_dir / "LDAP")
        with pytest.raises(UnknownUser):
            enrich(_logon(MON_9AM, user="NOBODY"), CFG, directory, {})
