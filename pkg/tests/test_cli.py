import csv
import json

import pytest

import fkbench.models
from fkbench.cli import main
from fkbench.datakit import load_dataset
from fkbench.exceptions import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_SELF_CHECK
from fkbench.report import cross_validate, read_report_csv, read_report_json


def test_exit_codes_are_disjoint():
    assert len({EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_SELF_CHECK}) == 4


# ==================== run ====================


def test_run_missing_config(tmp_path, capsys):
    missing = tmp_path / "absent.json"
    assert main(["run", str(missing)]) == EXIT_CONFIG
    assert "absent.json" in capsys.readouterr().err


def test_run_rejects_invalid_override(tiny_config_file, tmp_path):
    assert main(["run", str(tiny_config_file), "--out", str(tmp_path), "--local.epochs=0"]) == EXIT_CONFIG


def test_run_rejects_unknown_key(tmp_path):
    path = tmp_path / "typo.json"
    path.write_text(json.dumps({"rouns": 3}))
    assert main(["run", str(path)]) == EXIT_CONFIG


def test_run_writes_consistent_reports(tiny_config_file, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", str(tiny_config_file), "--out", str(out), "--threads", "1", "--rounds=2"])
    assert code == EXIT_OK
    document = read_report_json(out / "report.json")
    assert document["config"]["rounds"] == 2
    cross_validate(document, read_report_csv(out / "report.csv"))
    assert "kan-1" in capsys.readouterr().out


def test_run_is_byte_reproducible(tiny_config_file, tmp_path):
    for name in ("a", "b"):
        assert main(["run", str(tiny_config_file), "--out", str(tmp_path / name), "--threads", "1"]) == 0
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_run_ignores_thread_count(tiny_config_file, tmp_path, monkeypatch):
    monkeypatch.setenv("FKB_THREADS", "1")
    assert main(["run", str(tiny_config_file), "--out", str(tmp_path / "one")]) == 0
    monkeypatch.setenv("FKB_THREADS", "4")
    assert main(["run", str(tiny_config_file), "--out", str(tmp_path / "four")]) == 0
    assert (tmp_path / "one" / "report.json").read_bytes() == (tmp_path / "four" / "report.json").read_bytes()


def test_all_seeds_diverged_exits_runtime(tiny_config_file, tmp_path, monkeypatch):
    from fkbench.engine import FederatedSimulation
    from fkbench.exceptions import DivergenceError

    def diverge(self):
        raise DivergenceError("loss is nan")

    monkeypatch.setattr(FederatedSimulation, "run", diverge)
    assert main(["run", str(tiny_config_file), "--out", str(tmp_path), "--threads", "1"]) == EXIT_RUNTIME


# ==================== sweep ====================


def test_sweep_file(tiny_document, tmp_path):
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps({"name": "mini", "base": tiny_document, "axes": {"algorithm": ["fedavg", "fedgamma"]}}))
    out = tmp_path / "sweep"
    assert main(["sweep", str(path), "--out", str(out), "--threads", "1", "--rounds=2"]) == EXIT_OK
    with (out / "summary.csv").open() as handle:
        assert len(list(csv.DictReader(handle))) == 2
    assert read_report_csv(out / "sweep.csv")


def test_sweep_missing_file(tmp_path):
    assert main(["sweep", str(tmp_path / "nope.json")]) == EXIT_CONFIG


# ==================== gradcheck ====================


@pytest.mark.parametrize("args", [["--preset", "kan-d3", "--grid", "5"], ["--preset", "mlp-3"]])
def test_gradcheck_passes(args, capsys):
    assert main(["gradcheck", *args]) == EXIT_OK
    assert "max relative error" in capsys.readouterr().out


def test_gradcheck_unknown_preset():
    assert main(["gradcheck", "--preset", "kan-42"]) == EXIT_CONFIG


def test_gradcheck_corrupted_backward(monkeypatch, capsys):
    original = fkbench.models.backward

    def corrupted(model, cache, dlogits):
        grad = original(model, cache, dlogits)
        return grad.with_values(grad.values * 0.5)

    monkeypatch.setattr(fkbench.models, "backward", corrupted)
    assert main(["gradcheck", "--preset", "kan-d3"]) == EXIT_SELF_CHECK
    assert "layers.0.weight" in capsys.readouterr().out


# ==================== partition-stats ====================


def test_partition_stats_histogram(tmp_path):
    out = tmp_path / "hist.csv"
    assert main(["partition-stats", "--clients", "100", "--alpha", "1.0", "--out", str(out)]) == EXIT_OK
    with out.open() as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["client"] + [f"class_{c}" for c in range(8)]
    assert len(rows) == 101
    assert sum(int(v) for row in rows[1:] for v in row[1:]) == 4000


def test_partition_stats_single_client(tmp_path, capsys):
    out = tmp_path / "one.csv"
    assert main(["partition-stats", "--clients", "1", "--alpha", "0.5", "--out", str(out)]) == EXIT_OK
    assert "heterogeneity: 0.0" in capsys.readouterr().out


def test_partition_stats_impossible_split(tmp_path):
    out = tmp_path / "x.csv"
    assert main(["partition-stats", "--clients", "3000", "--out", str(out)]) == EXIT_RUNTIME


def test_partition_stats_missing_dataset(tmp_path):
    assert main(["partition-stats", "--dataset", str(tmp_path / "gone.fkb")]) == EXIT_RUNTIME


# ==================== export / report ====================


def test_export_writes_loadable_file(tmp_path):
    out = tmp_path / "blobs.fkb"
    code = main(
        [
            "export",
            "--out",
            str(out),
            "--dataset.num_classes=3",
            "--dataset.dim=5",
            "--dataset.per_class=10",
        ]
    )
    assert code == EXIT_OK
    dataset = load_dataset(out)
    assert (len(dataset), dataset.dim, dataset.num_classes) == (30, 5, 3)


def test_exported_file_drives_a_run(tiny_document, tmp_path):
    data = tmp_path / "blobs.fkb"
    assert main(["export", "--out", str(data), "--dataset.num_classes=3", "--dataset.dim=4", "--dataset.per_class=40"]) == 0
    tiny_document["dataset"] = {"kind": "fkb", "path": str(data), "test_fraction": 0.25}
    config = tmp_path / "fkb.json"
    config.write_text(json.dumps(tiny_document))
    assert main(["run", str(config), "--out", str(tmp_path / "out"), "--threads", "1"]) == EXIT_OK


def test_report_command(tiny_config_file, tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(tiny_config_file), "--out", str(out), "--threads", "1"]) == 0
    merged = tmp_path / "merged.csv"
    code = main(["report", str(out / "report.csv"), "--json", str(out / "report.json"), "--out", str(merged)])
    assert code == EXIT_OK
    assert merged.read_text() == (out / "report.csv").read_text()


def test_report_command_detects_mismatch(tiny_config_file, tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(tiny_config_file), "--out", str(out), "--threads", "1"]) == 0
    lines = (out / "report.csv").read_text().splitlines()
    fields = lines[1].split(",")
    fields[6] = "0.0" if fields[6] != "0.0" else "1.0"
    lines[1] = ",".join(fields)
    (out / "report.csv").write_text("\n".join(lines) + "\n")
    assert main(["report", str(out / "report.csv"), "--json", str(out / "report.json")]) == EXIT_RUNTIME
