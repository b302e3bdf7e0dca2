import hashlib
import json

import pytest

from ffcac import cli
from ffcac import encoder as enc
from ffcac.audio import read_manifest
from ffcac.config import ast_base_config, load_config, parse_config_text

TOY_CONFIG = """\
# desk-scale settings for fast CLI runs
train.epochs = 2
run.repeats = 2
run.seed = 7
classifier.lambda = 0.1
synth.num_classes = 10
synth.clips_per_class = 12
synth.train_per_class = 7
"""


@pytest.fixture
def toy_config(tmp_path):
    path = tmp_path / "toy.cfg"
    path.write_text(TOY_CONFIG)
    return path


def _dir_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# synth-data


def test_synth_data_counts_and_manifest(tmp_path, capsys):
    out = tmp_path / "data"
    rc = cli.main(["synth-data", "--classes", "4", "--per-class", "6",
                   "--out", str(out), "--seed", "3"])
    assert rc == 0
    wavs = sorted(out.glob("*.wav"))
    assert len(wavs) == 24
    rows = read_manifest(out / "manifest.csv")
    assert len(rows) == 24
    assert {r.label for r in rows} == {f"class{c:02d}" for c in range(4)}
    assert {r.split for r in rows} == {"train", "test"}


def test_synth_data_rerun_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert cli.main(["synth-data", "--classes", "3", "--per-class", "4",
                         "--out", str(out), "--seed", "9"]) == 0
    assert _dir_digest(a) == _dir_digest(b)


def test_synth_data_zero_classes_is_config_error(tmp_path, capsys):
    rc = cli.main(["synth-data", "--classes", "0", "--per-class", "4",
                   "--out", str(tmp_path / "x")])
    assert rc == 2
    assert "error" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# run


def test_run_emits_reports_and_weights(toy_config, tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(toy_config), "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["sessions"] == 2  # base + one incremental
    assert len(doc["aggregate"]["mean_accuracies"]) == 2
    assert len(doc["runs"]) == 2
    csv_lines = (out / "report.csv").read_text().splitlines()
    assert csv_lines[0] == "run,A_0,A_1,AA,PD"
    assert len(csv_lines) == 1 + 2 + 2  # header + runs + mean/std
    # weights readable under the config used for the run
    cfg = load_config(toy_config)
    params = enc.load_params(out / "mee.weights", cfg.encoder_config())
    assert params.patch_weight.values.shape == (256, cfg.encoder.dim)


def test_run_byte_identical_reports(toy_config, tmp_path):
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for out in outs:
        assert cli.main(["run", "--config", str(toy_config), "--out", str(out)]) == 0
    a = (outs[0] / "report.json").read_bytes()
    b = (outs[1] / "report.json").read_bytes()
    assert a == b
    assert (outs[0] / "report.csv").read_bytes() == (outs[1] / "report.csv").read_bytes()


def test_run_missing_config_is_io_error(tmp_path, capsys):
    rc = cli.main(["run", "--config", str(tmp_path / "ghost.cfg"), "--out", str(tmp_path / "o")])
    assert rc == 3


def test_run_bad_config_lists_every_key(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("train.epochs = -3\nrun.repeats = 0\nnosuch.key = 1\n")
    rc = cli.main(["run", "--config", str(path), "--out", str(tmp_path / "o")])
    assert rc == 2
    err = capsys.readouterr().err
    assert "nosuch.key" in err
    # both range violations reported in the same pass once the key is known
    path.write_text("train.epochs = -3\nrun.repeats = 0\n")
    rc = cli.main(["run", "--config", str(path), "--out", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert rc == 2 and "train.epochs" in err and "run.repeats" in err


def test_run_numeric_failure_exit_code(tmp_path, capsys):
    # lam = 0 with far fewer samples than dimensions: singular normal equations
    path = tmp_path / "sing.cfg"
    path.write_text(TOY_CONFIG.replace("classifier.lambda = 0.1", "classifier.lambda = 0")
                    .replace("train.epochs = 2", "train.epochs = 0"))
    rc = cli.main(["run", "--config", str(path), "--out", str(tmp_path / "o")])
    assert rc == 4
    assert "lam" in capsys.readouterr().err


def test_run_on_manifest_data(tmp_path, capsys):
    data = tmp_path / "data"
    assert cli.main(["synth-data", "--classes", "10", "--per-class", "8",
                     "--out", str(data), "--seed", "5", "--train-fraction", "0.75"]) == 0
    cfg_path = tmp_path / "manifest.cfg"
    cfg_path.write_text(
        "data.source = manifest\n"
        f"data.manifest = {data / 'manifest.csv'}\n"
        "train.epochs = 1\nrun.repeats = 1\nclassifier.lambda = 0.1\n"
    )
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["sessions"] == 2


# ---------------------------------------------------------------------------
# count-complexity


def test_count_complexity_json(toy_config, capsys):
    assert cli.main(["count-complexity", "--config", str(toy_config), "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    cfg = parse_config_text(TOY_CONFIG)
    expected = enc.count_params_macs(cfg.encoder_config(), cfg.synth.num_classes)
    assert doc["num_params"] == expected.num_params
    assert doc["macs"] == expected.macs


def test_count_complexity_full_scale_preset(capsys):
    assert cli.main(["count-complexity", "--preset", "ast-base", "--json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["num_params"] == enc.count_params_macs(ast_base_config(), 100).num_params
    assert abs(doc["num_params"] - 86.84e6) / 86.84e6 <= 0.05


# ---------------------------------------------------------------------------
# ablate


def test_default_config_is_the_fusion_rrc_case():
    # the best ablation cell is exactly what `run` uses out of the box
    from ffcac.config import ExperimentConfig

    cfg = ExperimentConfig()
    assert cfg.encoder.use_fusion is True
    assert cfg.classifier.kind == "rrc"


def test_ablate_emits_four_rows(toy_config, tmp_path, capsys):
    fast = tmp_path / "fast.cfg"
    fast.write_text(TOY_CONFIG.replace("run.repeats = 2", "run.repeats = 1")
                    .replace("train.epochs = 2", "train.epochs = 1"))
    table_path = tmp_path / "ablation.csv"
    assert cli.main(["ablate", "--config", str(fast), "--out", str(table_path)]) == 0
    lines = table_path.read_text().splitlines()
    assert len(lines) == 5  # header + 2x2 grid
    assert lines[0].startswith("fusion,classifier,A_0")
    cases = {tuple(l.split(",")[:2]) for l in lines[1:]}
    assert cases == {("off", "pbc"), ("on", "pbc"), ("off", "rrc"), ("on", "rrc")}


# ---------------------------------------------------------------------------
# report re-render


def test_report_rerender_matches_run_csv(toy_config, tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(toy_config), "--out", str(out)]) == 0
    rendered = tmp_path / "rendered.csv"
    assert cli.main(["report", str(out / "report.json"), "--csv", str(rendered)]) == 0
    assert rendered.read_bytes() == (out / "report.csv").read_bytes()


def test_report_missing_file(tmp_path):
    assert cli.main(["report", str(tmp_path / "none.json")]) == 3


# ---------------------------------------------------------------------------
# threads env fallback


def test_threads_env_fallback(toy_config, tmp_path, monkeypatch):
    monkeypatch.setenv("FFCAC_THREADS", "2")
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(toy_config), "--out", str(out)]) == 0
    serial = tmp_path / "serial"
    monkeypatch.delenv("FFCAC_THREADS")
    assert cli.main(["run", "--config", str(toy_config), "--out", str(serial)]) == 0
    a = json.loads((out / "report.json").read_text())
    b = json.loads((serial / "report.json").read_text())
    assert a["runs"] == b["runs"]  # same runs regardless of scheduling
