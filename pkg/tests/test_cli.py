import csv

import pytest

from insiderlog.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from insiderlog.detect import USERS_HEADER, VERDICT_HEADER

TINY = """
[generate]
seed = 5
n_users = 24
n_days = 12
insiders = { s1 = 1, s5 = 1 }

[train]
hidden = 8
epochs = 3
"""


def _data_rows(path):
    return [r for r in csv.reader(l for l in path.read_text().splitlines() if not l.startswith("#"))][1:]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny corpus and a model trained on it, both made through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.toml"
    cfg.write_text(TINY)
    assert main(["generate", "--config", str(cfg), "--out", str(root / "data"), "-q"]) == EXIT_OK
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--epochs", "10",
                 "--out", str(root / "model"), "-q"]) == EXIT_OK
    return root, cfg


class TestGenerate:
    def test_writes_sources(self, workspace):
        root, _ = workspace
        names = {p.name for p in (root / "data").iterdir()}
        assert {"logon.csv", "device.csv", "http.csv", "email.csv", "file.csv", "answers.csv", "LDAP"} <= names
        assert any((root / "data" / "LDAP").glob("*.csv"))

    def test_missing_config(self, tmp_path, capsys):
        rc = main(["generate", "--config", str(tmp_path / "absent.toml"), "--out", str(tmp_path)])
        assert rc == EXIT_USAGE
        assert "not found" in capsys.readouterr().err

    def test_missing_out_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["generate"])
        assert exc.value.code == EXIT_USAGE
        assert "usage" in capsys.readouterr().err

    def test_bad_config_value(self, tmp_path):
        (tmp_path / "c.toml").write_text("[train]\nepochs = 0\n")
        assert main(["generate", "--config", str(tmp_path / "c.toml"), "--out", str(tmp_path / "o")]) == EXIT_USAGE


class TestTrain:
    def test_epochs_override_sets_rows(self, workspace):
        root, _ = workspace
        loss = root / "model" / "loss.csv"
        assert loss.read_text().startswith("# manifest: ")
        rows = _data_rows(loss)
        assert [int(r[0]) for r in rows] == list(range(1, 11))
        assert (root / "model" / "loss.png").stat().st_size > 0

    def test_rerun_gives_same_model(self, workspace, tmp_path):
        root, cfg = workspace
        assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--epochs", "10",
                     "--out", str(tmp_path), "-q"]) == EXIT_OK
        assert (tmp_path / "model.json").read_bytes() == (root / "model" / "model.json").read_bytes()

    def test_missing_data_dir(self, tmp_path, workspace):
        _, cfg = workspace
        rc = main(["train", "--config", str(cfg), "--data", str(tmp_path / "none"), "--out", str(tmp_path), "-q"])
        assert rc == EXIT_DATA


def _copy_model(src, dst):
    dst.mkdir()
    for p in src.iterdir():
        (dst / p.name).write_bytes(p.read_bytes())


class TestDetect:
    def test_outputs_carry_manifest(self, workspace, tmp_path):
        root, cfg = workspace
        assert main(["detect", "--config", str(cfg), "--data", str(root / "data"), "--model", str(root / "model"),
                     "--out", str(tmp_path), "-q"]) == EXIT_OK
        for name in ("verdicts.csv", "users.csv", "flagged.csv", "threshold.csv", "errors.csv"):
            assert (tmp_path / name).read_text().startswith("# manifest: "), name
        assert (tmp_path / "scores.png").exists() and (tmp_path / "manifest.json").exists()

    def test_corrupt_model(self, workspace, tmp_path, capsys):
        root, cfg = workspace
        _copy_model(root / "model", tmp_path / "m")
        text = (tmp_path / "m" / "model.json").read_text()
        (tmp_path / "m" / "model.json").write_text(text[: len(text) // 3])
        rc = main(["detect", "--config", str(cfg), "--data", str(root / "data"), "--model", str(tmp_path / "m"),
                   "--out", str(tmp_path / "o")])
        assert rc == EXIT_DATA
        assert "corrupt model" in capsys.readouterr().err

    def test_vocabulary_mismatch(self, workspace, tmp_path, capsys):
        root, cfg = workspace
        _copy_model(root / "model", tmp_path / "m")
        with open(tmp_path / "m" / "vocab.txt", "a") as fh:
            fh.write("Teleport to *\n")
        rc = main(["detect", "--config", str(cfg), "--data", str(root / "data"), "--model", str(tmp_path / "m"),
                   "--out", str(tmp_path / "o")])
        assert rc == EXIT_DATA
        assert "mismatch" in capsys.readouterr().err


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


class TestEvaluate:
    def _detect_dir(self, tmp_path, flagged):
        d = tmp_path / "det"
        d.mkdir()
        _write(d / "verdicts.csv", VERDICT_HEADER,
               [["A", "2010-01-05", "11", "0.4", "1", "AboveCutoff", "m1"],
                ["B", "2010-01-05", "11", "0.0", "0", "", "b1"]])
        _write(d / "users.csv", USERS_HEADER,
               [["A", "12", "1", "1", "1", "1" if flagged else "0", "S1" if flagged else "Benign", ""],
                ["B", "12", "1", "0", "0", "0", "Benign", ""]])
        return d

    def test_perfect_verdicts(self, tmp_path, capsys):
        _write(tmp_path / "answers.csv", ["user", "scenario", "event_id"], [["A", "1", "m1"]])
        rc = main(["evaluate", "--detect", str(self._detect_dir(tmp_path, True)),
                   "--answers", str(tmp_path / "answers.csv"), "--out", str(tmp_path / "rep")])
        out = capsys.readouterr().out
        assert rc == EXIT_OK
        assert "event-level accuracy 1.0000" in out and "user-level accuracy  1.0000" in out
        rows = {r[0]: r for r in _data_rows(tmp_path / "rep" / "table.csv")}
        assert list(rows) == ["Total", "Benign", "S-1", "S-2", "S-3", "S-4", "S-5", "Unclassified"]
        assert rows["S-1"][1:] == ["1", "1", "1", "1"]

    def test_empty_key_all_benign(self, tmp_path, capsys):
        _write(tmp_path / "answers.csv", ["user", "scenario", "event_id"], [])
        d = self._detect_dir(tmp_path, False)
        # no planted events, so the anomalous window is the only mistake at event level
        rc = main(["evaluate", "--detect", str(d), "--answers", str(tmp_path / "answers.csv"),
                   "--out", str(tmp_path / "rep")])
        assert rc == EXIT_OK
        assert "user-level accuracy  1.0000" in capsys.readouterr().out

    def test_orphans_listed(self, tmp_path, capsys):
        _write(tmp_path / "answers.csv", ["user", "scenario", "event_id"], [["GHOST", "2", "x"]])
        rc = main(["evaluate", "--detect", str(self._detect_dir(tmp_path, True)),
                   "--answers", str(tmp_path / "answers.csv"), "--out", str(tmp_path / "rep")])
        assert rc == EXIT_DATA
        assert "GHOST" in capsys.readouterr().err

    def test_needs_answers(self, tmp_path):
        assert main(["evaluate", "--detect", str(tmp_path), "--out", str(tmp_path / "r")]) == EXIT_USAGE


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert "insiderlog" in capsys.readouterr().out
