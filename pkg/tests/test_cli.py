import csv
import json
from pathlib import Path

import pytest

from ketslab.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, METRICS_HEADER, TRUST_HEADER, main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
FILES = ("metrics.csv", "trust.csv", "summary.json")


def write_cfg(tmp_path, text):
    p = tmp_path / "exp.cfg"
    p.write_text(text)
    return str(p)


def small_cfg(tmp_path, extra=""):
    return write_cfg(tmp_path, "n_samples = 400\nn_clients = 8\nclients_per_round = 8\nglobal_epochs = 3\n" + extra)


class TestRun:
    def test_writes_schemas(self, tmp_path):
        assert main(["run", "--config", small_cfg(tmp_path, "attack = min_max\n"), "--out", str(tmp_path / "o")]) == EXIT_OK
        with open(tmp_path / "o" / "metrics.csv") as f:
            rows = list(csv.reader(f))
        assert rows[0] == METRICS_HEADER and len(rows) == 4
        assert rows[1][1].count(".") == 1 and len(rows[1][1].split(".")[1]) == 6
        with open(tmp_path / "o" / "trust.csv") as f:
            rows = list(csv.reader(f))
        assert rows[0] == TRUST_HEADER and len(rows) == 1 + 3 * 8
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["config"]["attack"] == "min_max" and summary["config"]["n_clients"] == 8

    def test_byte_identical_reruns(self, tmp_path):
        cfg = small_cfg(tmp_path, "attack = sign_flip\ndefense = ketsv2\n")
        main(["run", "--config", cfg, "--out", str(tmp_path / "a")])
        main(["run", "--config", cfg, "--out", str(tmp_path / "b")])
        for name in FILES:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_zero_rounds_header_only(self, tmp_path):
        assert main(["run", "--config", write_cfg(tmp_path, "global_epochs = 0\n"), "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o" / "metrics.csv").read_text() == ",".join(METRICS_HEADER) + "\n"
        assert (tmp_path / "o" / "trust.csv").read_text() == ",".join(TRUST_HEADER) + "\n"
        assert json.loads((tmp_path / "o" / "summary.json").read_text())["final_accuracy"] is None

    def test_minimal_config_echoes_defaults(self, tmp_path):
        main(["run", "--config", str(CONFIGS / "minimal.cfg"), "--out", str(tmp_path / "o"), ])
        flat = json.loads((tmp_path / "o" / "summary.json").read_text())["config"]
        assert flat["seed"] == 1 and flat["alpha"] == 0.5 and flat["hidden"] == [256]

    def test_seed_override(self, tmp_path):
        main(["--seed", "7", "run", "--config", small_cfg(tmp_path), "--out", str(tmp_path / "o")])
        assert json.loads((tmp_path / "o" / "summary.json").read_text())["config"]["seed"] == 7

    def test_tpr_matches_trust_csv(self, tmp_path):
        out = tmp_path / "o"
        main(["run", "--config", str(CONFIGS / "minmax_kets.cfg"), "--out", str(out)])
        summary = json.loads((out / "summary.json").read_text())
        with open(out / "trust.csv") as f:
            rows = list(csv.DictReader(f))
        zeroed = {int(r["client_id"]) for r in rows if float(r["trust"]) == 0.0}
        attackers = {int(r["client_id"]) for r in rows if r["is_attacker"] == "1"}
        benign = {int(r["client_id"]) for r in rows} - attackers
        assert summary["tpr"] == pytest.approx(len(zeroed & attackers) / len(attackers))
        assert summary["fpr"] == pytest.approx(len(zeroed & benign) / len(benign))


class TestExitCodes:
    def test_validation_error(self, tmp_path, capsys):
        assert main(["run", "--config", write_cfg(tmp_path, "attacker_fraction = 0.6\n"), "--out", str(tmp_path)]) == EXIT_INVALID
        assert "attacker_fraction" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["run", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == EXIT_INVALID

    def test_runtime_error(self, tmp_path):
        cfg = write_cfg(tmp_path, "dataset = csv\ncsv_path = " + str(tmp_path / "missing.csv") + "\n")
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_RUNTIME

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["run", "--config", small_cfg(tmp_path), "--out", str(blocker / "sub")]) == EXIT_RUNTIME


class TestSweep:
    def test_alpha_sweep_subdirectories(self, tmp_path):
        out = tmp_path / "s"
        rc = main(["sweep", "--config", small_cfg(tmp_path), "--key", "alpha", "--values", "0.05,0.5,5", "--out", str(out)])
        assert rc == EXIT_OK
        assert sorted(p.name for p in out.iterdir()) == ["alpha=0.05", "alpha=0.5", "alpha=5"]
        for sub in out.iterdir():
            assert all((sub / name).exists() for name in FILES)
        assert json.loads((out / "alpha=5" / "summary.json").read_text())["config"]["alpha"] == 5.0

    def test_unknown_key(self, tmp_path):
        assert main(["sweep", "--config", small_cfg(tmp_path), "--key", "nope", "--values", "1", "--out", str(tmp_path)]) == EXIT_INVALID

    def test_invalid_value_rejected_before_running(self, tmp_path):
        out = tmp_path / "s"
        rc = main(["sweep", "--config", small_cfg(tmp_path), "--key", "alpha", "--values", "0.5,-1", "--out", str(out)])
        assert rc == EXIT_INVALID and not out.exists()
