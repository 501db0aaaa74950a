"""Tests for the command-line entry point and report files."""
import json

import pytest

from tessera.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, _ints, build_parser, config_from_args, main
from tessera.services.reporting import read_csv_rows, strip_header


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip() else None


class TestParsing:
    def test_int_ranges(self):
        assert _ints("1:4") == [1, 2, 3, 4]
        assert _ints("2,4,8") == [2, 4, 8]

    def test_flags_override_config_file(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps({"sampling": {"metric": "l1", "trials": 7}, "p": 0.3}))
        args = build_parser().parse_args(["cross", "--config", str(path), "--p", "0.6", "--p-grid", "0.2,0.8"])
        config = config_from_args(args)
        assert config.metric == "l1" and config.trials == 7
        assert config.p == 0.6 and config.p_grid == [0.2, 0.8]

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["percolate"])


class TestExitCodes:
    """Test the 0 / 2 / 3 exit codes."""

    def test_bad_config_value(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"metric": "chebyshev"}))
        code, _ = run(["cross", "--config", str(path)], capsys)
        assert code == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path, capsys):
        code, _ = run(["cross", "--config", str(tmp_path / "nope.json")], capsys)
        assert code == EXIT_CONFIG

    def test_tolerance_floor(self, capsys):
        code, _ = run(["pc", "--tolerance", "0.01"], capsys)
        assert code == EXIT_CONFIG

    def test_domain_error(self, tmp_path, capsys):
        code, _ = run(["couple", "--s", "0.5", "--trials", "1", "--out", str(tmp_path / "c.json")], capsys)
        assert code == EXIT_CONFIG

    def test_failed_check(self, tmp_path, capsys):
        out = tmp_path / "h.csv"
        code, summary = run(["hilhorst", "--k-min", "5", "--k-max", "6", "--trials", "10", "--check",
                             "--out", str(out)], capsys)
        assert code == EXIT_CHECK
        assert summary["output"] == str(out) and out.exists()
        # ten cells give too few hits for a ratio at k = 6
        assert summary["summary"]["reference_k"] == 6
        assert summary["summary"]["reference_deviation"] is None

    def test_hilhorst_without_reference_k(self, tmp_path, capsys):
        code, summary = run(["hilhorst", "--k-min", "4", "--k-max", "5", "--trials", "10", "--check",
                             "--out", str(tmp_path / "h.csv")], capsys)
        assert code == EXIT_CHECK

    def test_couple_check_fails_when_every_run_falls_back(self, tmp_path, capsys):
        # with the default a = 0.1 every cluster is potentially adjacent to more than a log s seeds
        code, summary = run(["couple", "--s", "4", "--eps-prime", "0.322", "--p1", "0.25", "--p2", "0.75",
                             "--trials", "2", "--check", "--out", str(tmp_path / "c.json")], capsys)
        assert code == EXIT_CHECK
        assert summary["summary"]["non_fallback_runs"] == 0
        assert summary["summary"]["fallback_runs"] == 2

    def test_passed_check(self, tmp_path, capsys):
        code, summary = run(["cross", "--p", "1.0", "--s", "6", "--trials", "2", "--check",
                             "--out", str(tmp_path / "c.csv")], capsys)
        assert code == EXIT_OK
        assert summary["summary"]["estimates"]["1.0"]["estimate"] == 1.0


class TestOutputs:
    def test_cross_csv(self, tmp_path, capsys):
        out = tmp_path / "cross.csv"
        code, _ = run(["cross", "--p-grid", "0.0,1.0", "--s", "6", "--trials", "2", "--seed", "4",
                       "--out", str(out)], capsys)
        assert code == EXIT_OK
        text = out.read_text()
        lines = text.splitlines()
        assert lines[0].startswith("# generated_at:")
        assert json.loads(lines[1][len("# config:"):])["p_grid"] == [0.0, 1.0]
        rows = read_csv_rows(text)
        assert len(rows) == 4
        assert [(r["p"], r["Hb"]) for r in rows if r["trial_index"] == "0"] == [("0.0", "0"), ("1.0", "1")]

    def test_reproducible_body(self, tmp_path, capsys):
        out = tmp_path / "cross.csv"
        argv = ["cross", "--p", "0.5", "--s", "6", "--trials", "3", "--seed", "11", "--out", str(out)]
        run(argv, capsys)
        first = out.read_text()
        run(argv, capsys)
        assert strip_header(out.read_text()) == strip_header(first)

    def test_couple_json(self, tmp_path, capsys):
        out = tmp_path / "couple.json"
        code, _ = run(["couple", "--s", "4", "--eps-prime", "0.322", "--p1", "0.25", "--p2", "0.75",
                       "--trials", "1", "--out", str(out)], capsys)
        assert code == EXIT_OK
        doc = json.loads(out.read_text())
        assert set(doc) == {"generated_at", "config", "body"}
        assert doc["config"]["eps_prime"] == 0.322
        assert len(doc["body"]["runs"]) == 1
        assert doc["body"]["runs"][0]["monotone"] is True
        summary = doc["body"]["summary"]
        assert summary["shift_bound_misses"] == 0
        assert summary["delta"] == pytest.approx(4.0 ** -0.3)
        assert doc["body"]["runs"][0]["delta"] == pytest.approx(4.0 ** -0.3)
        assert {"shift_failures", "shift_failures_conservative", "crude_flips", "crude_max_lag_z"} <= set(summary)

    def test_couple_delta_flag(self, tmp_path, capsys):
        out = tmp_path / "couple.json"
        code, _ = run(["couple", "--s", "4", "--eps-prime", "0.322", "--p1", "0.25", "--p2", "0.75", "--eps", "1.5",
                       "--trials", "1", "--out", str(out)], capsys)
        assert code == EXIT_OK
        doc = json.loads(out.read_text())
        assert doc["config"]["eps"] == 1.5
        assert doc["body"]["summary"]["delta"] == pytest.approx(4.0 ** -1.5)

    def test_tail_summary(self, tmp_path, capsys):
        code, summary = run(["tail", "--p", "0.0", "--sizes", "1:3", "--trials", "4", "--s", "6",
                             "--angular-budget", "32", "--out", str(tmp_path / "tail.csv")], capsys)
        assert code == EXIT_OK
        body = summary["summary"]
        assert body["theta"] == 0.0 and body["chi"] == 0.0
        assert body["censored_count"] == 0

    def test_render_svg(self, tmp_path, capsys):
        out = tmp_path / "frame.svg"
        code, summary = run(["render", "--s", "6", "--no-fill", "--out", str(out)], capsys)
        assert code == EXIT_OK
        text = out.read_text()
        assert text.lstrip().startswith("<svg") or text.lstrip().startswith("<?xml")
        assert 'fill="black"' not in text
        assert summary["summary"]["seeds"] > 0
