import pytest

from insiderlog.synthgen import GenConfig, generate

_CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture
def record_criterion():
    """Log one acceptance line; the lines are printed at the end of the run."""

    def record(name: str, ok: bool, detail: str = "") -> bool:
        _CRITERIA.append((name, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A quick corpus with one insider per scenario (40 users, 20 days)."""
    cfg = GenConfig(seed=7, n_users=40, n_days=20, insiders={s: 1 for s in range(1, 6)})
    out = tmp_path_factory.mktemp("small_corpus")
    return generate(cfg, out), cfg
