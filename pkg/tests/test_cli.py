import csv
import json

import numpy as np
import pytest

from cstarnet import cli, flows

ARTIFACTS = ("manifest.json", "metrics.csv", "density.csv", "density.png", "nll_table.csv")


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    argv = ["density", "--method", "standard,discrete,ours", "--repeats", "1", "--epochs", "1",
            "--grid", "6", "--n-mc-eval", "90", "--out", str(out)]
    code = cli.main(argv)
    (sub,) = list(out.iterdir())
    return code, sub, argv


class TestDensity:
    def test_smoke_exit_and_artifacts(self, smoke):
        code, sub, _ = smoke
        assert code == 0
        for name in ARTIFACTS:
            assert (sub / name).stat().st_size > 0

    def test_manifest_contents(self, smoke):
        _, sub, _ = smoke
        m = json.loads((sub / "manifest.json").read_text())
        assert m["hash"] == sub.name == cli.config_hash(m["config"])
        assert set(m["results"]) == {"standard", "discrete", "ours"}
        assert m["runs"]["ours"]["mu"] == 0.1
        assert m["runs"]["ours"]["lambda_tilde"] == 0.3
        assert m["runs"]["discrete"]["lambda_tilde"] == 0.0
        assert m["measure_D"]["radius"] == 0.05
        assert m["prng"] == "numpy.random.PCG64"
        assert "swiss" == m["dataset"]["name"]

    def test_nll_table(self, smoke):
        _, sub, _ = smoke
        with open(sub / "nll_table.csv") as fh:
            rows = list(csv.DictReader(fh))
        methods = {r["method"] for r in rows}
        assert methods == {"standard", "discrete", "ours"}
        assert all(np.isfinite(float(r["test_nll"])) for r in rows)

    def test_density_csv_header(self, smoke):
        _, sub, _ = smoke
        with open(sub / "density.csv") as fh:
            head = next(csv.reader(fh))
        assert head == ["method", "x", "y", "p"]

    def test_rerun_from_manifest_is_bitwise(self, smoke, tmp_path):
        _, sub, _ = smoke
        assert cli.main(["density", "--config", str(sub / "manifest.json"), "--out", str(tmp_path)]) == 0
        (again,) = list(tmp_path.iterdir())
        assert again.name == sub.name
        for name in ("metrics.csv", "nll_table.csv", "density.csv"):
            a = (sub / name).read_text().splitlines()
            b = (again / name).read_text().splitlines()
            if name == "nll_table.csv":
                # the last column is wall time
                a = [r.rsplit(",", 1)[0] for r in a]
                b = [r.rsplit(",", 1)[0] for r in b]
            assert a == b

    def test_invalid_method(self, tmp_path):
        assert cli.main(["density", "--method", "bogus", "--out", str(tmp_path)]) == 2

    def test_flags_beat_config_file(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"epochs": 7, "repeats": 2}))
        eff = cli._merge({"epochs": 3, "repeats": None}, json.loads(cfg.read_text()),
                         cli.DENSITY_DEFAULTS)
        assert eff["epochs"] == 3
        assert eff["repeats"] == 2
        assert eff["dataset"] == "swiss"


class TestFewShot:
    def test_single_classical_run(self, tmp_path, capsys):
        code = cli.main(["fewshot", "--l", "1", "--tasks", "1", "--seeds", "1", "--steps", "5",
                         "--out", str(tmp_path)])
        assert code == 0
        (sub,) = list(tmp_path.iterdir())
        with open(sub / "fewshot.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert rows[0]["l"] == "1"
        assert "accuracy" in (sub / "summary.txt").read_text()

    def test_bad_l(self, tmp_path):
        assert cli.main(["fewshot", "--l", "12", "--out", str(tmp_path)]) == 2


class TestValidate:
    def test_clean_tree_passes(self, capsys):
        assert cli.main(["validate"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert out.count("[PASS]") >= 9

    def test_injected_gradient_bug_fails(self, monkeypatch, capsys):
        real = flows.nll_and_grad

        def broken(*args, **kw):
            loss, grad = real(*args, **kw)
            return loss, 1.01 * grad
        monkeypatch.setattr(flows, "nll_and_grad", broken)
        assert cli.main(["validate"]) != 0
        assert "[FAIL] flow gradient" in capsys.readouterr().out


class TestOtherCommands:
    def test_appendix_c(self, capsys):
        assert cli.main(["appendix-c"]) == 0
        out = capsys.readouterr().out
        assert "separate" in out and "simultaneous" in out

    def test_export_data(self, tmp_path):
        path = tmp_path / "d" / "circles.csv"
        assert cli.main(["export-data", "--dataset", "circles", "-o", str(path)]) == 0
        assert len(path.read_text().splitlines()) == 1001

    def test_thread_cap(self, monkeypatch):
        monkeypatch.setenv("CSTAR_THREADS", "1")
        assert cli.worker_count(10) == 1
        monkeypatch.setenv("CSTAR_THREADS", "x")
        with pytest.raises(SystemExit):
            cli.worker_count(10)
        monkeypatch.delenv("CSTAR_THREADS")
        assert 1 <= cli.worker_count(3) <= 3

    def test_hash_is_stable(self):
        a = cli.config_hash({"b": 1, "a": [1, 2]})
        assert a == cli.config_hash({"a": [1, 2], "b": 1})
        assert len(a) == 12
