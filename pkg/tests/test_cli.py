import json

import pytest

from mobllm import cli

TINY = """
model.dim=8
vimn.hidden=8
vimn.r=2
htpp.K=2
heads.components=3
backbone.layers=1
backbone.heads=2
train.max_epochs=2
train.batch_size=32
synth.users=5
synth.pois=20
synth.sequences=60
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "tiny.cfg").write_text(TINY)
    return tmp_path


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def archive(workdir):
    assert run("synth", "--out", workdir / "ds.gz", "--config", workdir / "tiny.cfg",
               "--raw", workdir / "raw.tsv") == 0
    return workdir / "ds.gz"


class TestData:
    def test_synth_and_preprocess_deterministic(self, workdir, archive):
        cfg = workdir / "tiny.cfg"
        cfg.write_text(TINY + "min_poi_visits=1\n")
        for name in ("a.gz", "b.gz"):
            assert run("preprocess", "--data", workdir / "raw.tsv", "--out", workdir / name, "--config", cfg) == 0
        assert (workdir / "a.gz").read_bytes() == (workdir / "b.gz").read_bytes()

    def test_preprocess_prints_summary(self, workdir, archive, capsys):
        capsys.readouterr()
        run("preprocess", "--data", workdir / "raw.tsv", "--out", workdir / "a.gz", "--config", workdir / "tiny.cfg")
        summary = json.loads(capsys.readouterr().out)
        assert set(summary) == {"samples", "users", "pois", "train", "valid", "test"}

    def test_empty_dataset(self, workdir, capsys):
        raw = workdir / "few.tsv"
        raw.write_text("u\t1000\t1\t1\tp\tBar\nu\t2000\t1\t1\tp\tBar\n")
        assert run("preprocess", "--data", raw, "--out", workdir / "x.gz") == 2
        assert "empty dataset" in capsys.readouterr().err

    def test_missing_input(self, workdir):
        assert run("preprocess", "--data", workdir / "nope.tsv", "--out", workdir / "x.gz") == 2


class TestTrainEval:
    def test_train_twice_identical(self, workdir, archive):
        for d in ("r1", "r2"):
            assert run("train", "--task", "lp", "--data", archive, "--out", workdir / d, "--seed", 1,
                       "--config", workdir / "tiny.cfg") == 0
        for f in ("history.jsonl", "report.json", "history.tsv", "config.txt"):
            assert (workdir / "r1" / f).read_bytes() == (workdir / "r2" / f).read_bytes(), f
        for f in ("params.pt", "learning_curve.png", "report.txt", "run.json", "valid_report.json"):
            assert (workdir / "r1" / f).exists()
        assert not (workdir / "r1" / ".lock").exists()

    def test_ablation_recorded(self, workdir, archive):
        assert run("train", "--task", "tul", "--data", archive, "--out", workdir / "r", "--config",
                   workdir / "tiny.cfg", "--ablate", "no_htpp") == 0
        assert "# ablate=no_htpp" in (workdir / "r" / "config.txt").read_text()
        assert json.loads((workdir / "r" / "run.json").read_text())["ablations"] == ["no_htpp"]
        report = json.loads((workdir / "r" / "report.json").read_text())
        assert report["meta"]["ablations"] == ["no_htpp"] and report["task"] == "tul"

    def test_eval(self, workdir, archive, capsys):
        run("train", "--task", "tp", "--data", archive, "--out", workdir / "r", "--config", workdir / "tiny.cfg")
        train_report = json.loads((workdir / "r" / "report.json").read_text())
        capsys.readouterr()
        assert run("eval", "--run", workdir / "r", "--data", archive) == 0
        assert "TP / test" in capsys.readouterr().out
        ev = json.loads((workdir / "r" / "eval_test.json").read_text())
        assert ev["metrics"] == train_report["metrics"]
        assert run("eval", "--run", workdir / "r", "--data", archive, "--task", "lp") == 2

    def test_eval_missing_params(self, workdir, archive):
        run("train", "--task", "lp", "--data", archive, "--out", workdir / "r", "--config", workdir / "tiny.cfg")
        (workdir / "r" / "params.pt").unlink()
        assert run("eval", "--run", workdir / "r", "--data", archive) == 2

    def test_locked_run_dir(self, workdir, archive):
        (workdir / "r").mkdir()
        (workdir / "r" / ".lock").write_text("123")
        assert run("train", "--task", "lp", "--data", archive, "--out", workdir / "r") == 2

    def test_divergence_exit_code(self, workdir, archive, monkeypatch):
        from mobllm import pipeline
        from mobllm.train import TrainingDivergence

        def boom(*a, **k):
            raise TrainingDivergence("non-finite loss")

        monkeypatch.setattr(pipeline, "train", boom)
        assert run("train", "--task", "lp", "--data", archive, "--out", workdir / "r",
                   "--config", workdir / "tiny.cfg") == 3


class TestExperiments:
    def test_fewshot(self, workdir, archive):
        assert run("fewshot", "--task", "lp", "--data", archive, "--out", workdir / "fs",
                   "--config", workdir / "tiny.cfg") == 0
        for name in ("frac_0.01", "frac_0.05", "frac_0.2"):
            assert (workdir / "fs" / name / "report.json").exists()
        rows = (workdir / "fs" / "fewshot.tsv").read_text().splitlines()
        assert rows[0].split("\t")[0] == "fraction" and len(rows) == 4
        assert (workdir / "fs" / "fewshot.png").stat().st_size > 0

    def test_ablate(self, workdir, archive):
        assert run("ablate", "--task", "tul", "--data", archive, "--out", workdir / "ab", "--config",
                   workdir / "tiny.cfg", "--seed", 1, "--seed", 2, "--ablate", "no_htpp") == 0
        rows = (workdir / "ab" / "ablation.tsv").read_text().splitlines()
        assert len(rows) == 5
        assert (workdir / "ab" / "ablation.png").exists()


class TestUsage:
    @pytest.mark.parametrize("argv", [
        [],
        ["train", "--task", "xx", "--data", "d", "--out", "o"],
        ["train", "--data", "d", "--out", "o"],
        ["fewshot", "--task", "lp", "--data", "d", "--out", "o", "--fraction", "0"],
    ])
    def test_usage_errors(self, argv):
        with pytest.raises(SystemExit) as e:
            cli.main(argv)
        assert e.value.code == 1

    def test_bad_config_key(self, workdir, archive):
        (workdir / "bad.cfg").write_text("bogus.key=1\n")
        assert run("train", "--task", "lp", "--data", archive, "--out", workdir / "r", "--config", workdir / "bad.cfg") == 1
