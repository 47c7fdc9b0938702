import csv
import json
import math
import subprocess
import sys

import pytest

from larope.cli import main
from larope.rotary import RotaryConfig, frequencies

SMALL_CONFIG = {"steps": 30, "eval_interval": 10, "batch_size": 2}


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def write_config(tmp_path, name="cfg.json", **fields):
    path = tmp_path / name
    path.write_text(json.dumps({**SMALL_CONFIG, **fields}))
    return path


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"steps": 100, "eval_interval": 50}))
    assert main(["train", "--config", str(cfg), "--out", str(root / "out")]) == 0
    return root / "out"


class TestFreqs:
    def test_d4(self, capsys):
        assert main(["freqs", "--d", "4"]) == 0
        assert capsys.readouterr().out == "j,theta\n0,1\n1,0.01\n"

    def test_d2_single_row(self, capsys):
        assert main(["freqs", "--d", "2"]) == 0
        assert capsys.readouterr().out.splitlines() == ["j,theta", "0,1"]

    def test_full_precision_round_trip(self, tmp_path):
        out = tmp_path / "f.csv"
        assert main(["freqs", "--d", "64", "--out", str(out)]) == 0
        rows = read_csv(out)[1:]
        assert len(rows) == 32
        exact = frequencies(RotaryConfig(64))
        for j, value in rows:
            assert float(value) == exact[int(j)]
            assert float(value) == pytest.approx(10000.0 ** (-2 * int(j) / 64), rel=1e-15)

    def test_odd_dimension(self, capsys):
        assert main(["freqs", "--d", "3"]) == 2
        assert "even" in capsys.readouterr().err

    def test_lf_line_endings(self, tmp_path):
        out = tmp_path / "f.csv"
        main(["freqs", "--d", "8", "--out", str(out)])
        assert b"\r" not in out.read_bytes()


class TestBounds:
    def test_fig1_grid(self, tmp_path):
        out = tmp_path / "b.csv"
        assert main(["bounds", "--lq", "64", "--lk", "256", "--d", "64", "--out", str(out)]) == 0
        rows = read_csv(out)
        assert rows[0] == ["m", "n", "value"]
        assert len(rows) == 1 + 64 * 256
        side = json.loads((tmp_path / "b.json").read_text())
        assert side["ridge_deviation"] <= 2 / 256
        assert side["variant"] == "larope" and side["sj_mode"] == "partial-sum"

    def test_reduction_case(self, tmp_path):
        args = ["bounds", "--lq", "8", "--lk", "8", "--gamma", "8"]
        main([*args, "--variant", "rope", "--out", str(tmp_path / "r.csv")])
        main([*args, "--variant", "larope", "--out", str(tmp_path / "l.csv")])
        a, b = read_csv(tmp_path / "r.csv")[1:], read_csv(tmp_path / "l.csv")[1:]
        assert len(a) == len(b) == 64
        for ra, rb in zip(a, b):
            assert ra[:2] == rb[:2]
            assert abs(float(ra[2]) - float(rb[2])) <= 1e-12

    def test_magnitudes_mode(self, tmp_path):
        out = tmp_path / "m.csv"
        assert main(["bounds", "--lq", "4", "--lk", "6", "--d", "8", "--sj-mode", "magnitudes",
                     "--out", str(out)]) == 0
        values = [float(r[2]) for r in read_csv(out)[1:]]
        assert len(values) == 24
        assert all(abs(v - 10.0) <= 1e-12 for v in values)

    def test_unwritable_path(self, tmp_path):
        assert main(["bounds", "--lq", "4", "--lk", "4", "--out", str(tmp_path / "missing" / "b.csv")]) == 4

    def test_deterministic(self, tmp_path):
        for name in ("a.csv", "b.csv"):
            main(["bounds", "--lq", "16", "--lk", "24", "--out", str(tmp_path / name)])
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_bad_sizes(self, tmp_path):
        assert main(["bounds", "--lq", "0", "--out", str(tmp_path / "b.csv")]) == 2


class TestTrain:
    def test_outputs(self, tmp_path):
        cfg = write_config(tmp_path)
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
        rows = read_csv(tmp_path / "o" / "records.csv")
        assert rows[0] == ["step", "train_loss", "eval_loss", "eval_alignment_error"]
        assert [r[0] for r in rows[1:]] == ["0", "10", "20", "30"]
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["status"] == "ok" and summary["variant"] == "larope" and summary["seed"] == 0
        assert summary["final_eval_alignment_error"] == float(rows[-1][3])

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(tmp_path)
        for name in ("a", "b"):
            main(["train", "--config", str(cfg), "--out", str(tmp_path / name)])
        for f in ("records.csv", "state.json", "summary.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_zero_learning_rate(self, tmp_path):
        cfg = write_config(tmp_path, lr=0.0)
        main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")])
        rows = read_csv(tmp_path / "o" / "records.csv")[1:]
        assert len({tuple(r[2:]) for r in rows}) == 1

    def test_malformed_field(self, tmp_path, capsys):
        cfg = write_config(tmp_path, lr="fast")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "lr" in capsys.readouterr().err

    def test_not_json(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{steps: 3")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_missing_config(self, tmp_path):
        assert main(["train", "--out", str(tmp_path / "o")]) == 2
        assert main(["train", "--config", str(tmp_path / "nope.json")]) == 2

    def test_divergence(self, tmp_path):
        cfg = write_config(tmp_path, lr=50.0, steps=100, eval_interval=10)
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
        assert json.loads((tmp_path / "o" / "summary.json").read_text())["status"] == "diverged"

    def test_variant_override_and_seed(self, tmp_path):
        cfg = write_config(tmp_path)
        main(["train", "--config", str(cfg), "--override-variant", "rope", "--seed", "4",
              "--out", str(tmp_path / "o")])
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert (summary["variant"], summary["seed"]) == ("rope", 4)


class TestDuration:
    def test_identity_factor(self, trained_dir, tmp_path):
        out = tmp_path / "d.csv"
        assert main(["duration", "--state", str(trained_dir), "--factors", "1.0", "--out", str(out)]) == 0
        rows = read_csv(out)
        summary = json.loads((trained_dir / "summary.json").read_text())
        assert rows[0] == ["factor", "alignment_error"]
        assert abs(float(rows[1][1]) - summary["final_eval_alignment_error"]) <= 1e-12

    def test_default_factors_in_order(self, trained_dir, tmp_path):
        out = tmp_path / "d.csv"
        main(["duration", "--state", str(trained_dir / "state.json"), "--out", str(out)])
        assert [float(r[0]) for r in read_csv(out)[1:]] == [0.7, 0.85, 1.0, 1.2, 1.4]

    def test_degenerate_factor(self, trained_dir, tmp_path, caplog):
        out = tmp_path / "d.csv"
        with caplog.at_level("WARNING"):
            assert main(["duration", "--state", str(trained_dir), "--factors", "1e-9", "--out", str(out)]) == 0
        assert read_csv(out) == [["factor", "alignment_error"]]
        assert any(r.levelname == "WARNING" for r in caplog.records)

    def test_missing_state(self, tmp_path):
        assert main(["duration", "--state", str(tmp_path / "none")]) == 2
        assert main(["duration"]) == 2

    @pytest.mark.parametrize("factors", ["0", "-1", "abc", ",", "nan"])
    def test_bad_factors(self, trained_dir, factors):
        assert main(["duration", "--state", str(trained_dir), "--factors", factors]) == 2


class TestMapsAndCompare:
    def test_maps(self, trained_dir, tmp_path):
        out = tmp_path / "maps.csv"
        assert main(["maps", "--state", str(trained_dir), "--lq", "12", "--lk", "5", "--count", "4",
                     "--exclude-keys", "0", "--out", str(out)]) == 0
        rows = read_csv(out)[1:]
        assert len(rows) == 12 * 4
        assert {int(r[1]) for r in rows} == {1, 2, 3, 4}
        for m in range(12):
            assert math.isclose(sum(float(r[2]) for r in rows if int(r[0]) == m), 1.0, abs_tol=1e-12)

    def test_maps_excluding_all_keys(self, trained_dir):
        assert main(["maps", "--state", str(trained_dir), "--lk", "2", "--exclude-keys", "0,1"]) == 2

    def test_compare_pairs(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        for variant in ("rope", "larope"):
            main(["train", "--config", str(cfg), "--override-variant", variant, "--out", str(tmp_path / variant)])
        capsys.readouterr()
        assert main(["compare", str(tmp_path / "rope"), str(tmp_path / "larope" / "summary.json")]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "variant,seed,final_eval_loss,final_eval_alignment_error"
        assert [ln.split(",")[:2] for ln in lines[1:]] == [
            ["rope", "0"], ["larope", "0"], ["larope", "median"], ["rope", "median"]]

    def test_compare_missing(self, tmp_path):
        assert main(["compare", str(tmp_path / "nothing.json")]) == 2


class TestCheck:
    def test_clean(self, capsys):
        assert main(["check"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert "failed: 0" in out and "max_err=" in out

    def test_corrupted_theta(self, capsys):
        assert main(["check", "--inject-fault", "corrupt-theta"]) != 0
        captured = capsys.readouterr()
        assert "FAIL" in captured.out
        assert "frequency table" in captured.err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "larope", "freqs", "--d", "4"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout == "j,theta\n0,1\n1,0.01\n"


def test_usage_error_exit_code():
    proc = subprocess.run([sys.executable, "-m", "larope", "bounds", "--sj-mode", "bogus"], capture_output=True)
    assert proc.returncode == 2
