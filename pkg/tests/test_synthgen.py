import csv
from collections import Counter

import pytest

from insiderlog.config import load_settings
from insiderlog.detect import ScenarioLabel, classify_scenario
from insiderlog.features import SiteCategory
from insiderlog.ingest import ErrorLedger, SourceKind, count_data_rows
from insiderlog.pipeline import prepare
from insiderlog.synthgen import AnswerKey, GenConfig, describe, generate

SETTINGS = load_settings(None, {})


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    """The default benchmark corpus (200 users, 30 days, seed 42)."""
    out = tmp_path_factory.mktemp("bench")
    corpus = generate(GenConfig(), out)
    return corpus, prepare(out, SETTINGS)


def _recount(out_dir):
    """Per-user event totals straight from the CSV files, without the parser."""
    per_user = Counter()
    for kind in SourceKind:
        with open(out_dir / kind.filename, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                per_user[row["user"]] += 1
    return per_user


class TestConfig:
    def test_too_many_insiders(self):
        with pytest.raises(ValueError, match="insiders requested"):
            GenConfig(n_users=3, insiders={1: 2, 2: 2})

    def test_unknown_role(self):
        with pytest.raises(ValueError, match="unknown roles"):
            GenConfig(job_roles=("Astronaut",))

    def test_from_mapping(self):
        cfg = GenConfig.from_mapping({"n_users": 5, "insiders": {"s1": 1}, "start_date": "2011-03-01"})
        assert cfg.insiders == {1: 1} and cfg.start_date.year == 2011


class TestGenerate:
    def test_same_seed_same_bytes(self, tmp_path):
        cfg = GenConfig(seed=3, n_users=12, n_days=8, insiders={1: 1, 4: 1})
        generate(cfg, tmp_path / "a")
        generate(cfg, tmp_path / "b")
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
        assert files
        for rel in files:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel

    def test_no_insiders(self, tmp_path):
        corpus = generate(GenConfig(seed=1, n_users=15, n_days=10, insiders={}), tmp_path)
        assert corpus.answer_key.scenarios == {}
        assert AnswerKey.read(tmp_path / "answers.csv").scenarios == {}
        p = prepare(tmp_path, SETTINGS)
        cats = {k.event.site_category for k in p.keyed if k.event.site_category is not None}
        assert cats <= {SiteCategory.NEUTRAL, SiteCategory.JOB_HUNTING}

    def test_event_ids_unique(self, small_corpus):
        corpus, _ = small_corpus
        ids = []
        for kind in SourceKind:
            with open(corpus.out_dir / kind.filename, newline="") as fh:
                ids += [row["id"] for row in csv.DictReader(fh)]
        assert len(ids) == len(set(ids))

    def test_answer_key_round_trip(self, small_corpus):
        corpus, cfg = small_corpus
        key = AnswerKey.read(corpus.out_dir / "answers.csv")
        assert key == corpus.answer_key
        assert len(key.scenarios) == cfg.total_insiders and all(key.events.values())

    def test_round_trip_loses_nothing(self, small_corpus):
        corpus, _ = small_corpus
        ledger = ErrorLedger()
        p = prepare(corpus.out_dir, SETTINGS, ledger)
        assert len(ledger) == 0
        assert len(p.events) == len(p.keyed) == sum(corpus.counts.values())
        for kind in SourceKind:
            assert count_data_rows(corpus.out_dir / kind.filename) == corpus.counts[kind.value]

    def test_each_insider_matches_its_scenario(self, small_corpus):
        corpus, _ = small_corpus
        p = prepare(corpus.out_dir, SETTINGS)
        for user, scen in corpus.answer_key.scenarios.items():
            evs = [k.event for k in p.keyed if k.user_id == user]
            label = classify_scenario(user, evs, p.directory, p.pc_assignment)
            assert label is ScenarioLabel.for_scenario(scen), user


class TestDescribe:
    def test_empty_plan(self):
        plan = describe(GenConfig(n_users=0, insiders={}))
        assert plan.templates == [] and plan.expected_events == 0

    def test_templates_cover_output(self, small_corpus):
        corpus, cfg = small_corpus
        observed = {k.template for k in prepare(corpus.out_dir, SETTINGS).keyed}
        assert observed <= set(describe(cfg).templates)

    def test_render_lists_templates(self):
        plan = describe(GenConfig(n_users=5, n_days=5, insiders={}))
        assert all(t in plan.render() for t in plan.templates)


class TestBenchmarkCorpus:
    def test_recount(self, benchmark):
        corpus, _ = benchmark
        per_user = _recount(corpus.out_dir)
        assert dict(per_user) == {u: n for u, n in corpus.per_user.items() if n}
        assert sum(per_user.values()) == sum(corpus.counts.values())

    def test_volume_estimate_within_ten_percent(self, benchmark):
        corpus, _ = benchmark
        expected = describe(GenConfig()).expected_events
        assert abs(sum(corpus.counts.values()) - expected) <= 0.10 * expected

    def test_templates_cover_output(self, benchmark):
        _, p = benchmark
        assert {k.template for k in p.keyed} <= set(describe(GenConfig()).templates)

    def test_benign_after_hours_near_two_percent(self, benchmark):
        corpus, p = benchmark
        insiders = corpus.answer_key.users()
        benign = [k for k in p.keyed if k.user_id not in insiders]
        share = sum(k.event.after_hours for k in benign) / len(benign)
        assert 0.01 <= share <= 0.03
