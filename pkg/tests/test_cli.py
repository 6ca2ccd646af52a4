import json

import pytest
import yaml

from hieronst import cli
from hieronst.classifier import TrainingDivergedError
from hieronst.provenance import read_meta


def run(cfg, *args, extra=()):
    return cli.main(["--config", str(cfg), *extra, *args])


def summaries(capsys):
    return [json.loads(line) for line in capsys.readouterr().out.splitlines() if line.startswith("{")]


def edit(cfg, **sections):
    data = yaml.safe_load(cfg.read_text())
    for key, value in sections.items():
        if isinstance(value, dict):
            data.setdefault(key, {}).update(value)
        else:
            data[key] = value
    cfg.write_text(yaml.safe_dump(data))


def test_full_pipeline_and_artifacts(toy_project, capsys):
    out = toy_project.parent / "out"
    assert run(toy_project, "pipeline") == 0
    s = {d["command"]: d for d in summaries(capsys)}
    assert s["curate"]["classes"] == 3 and s["synthesize"]["failed"] == 0
    assert s["train"]["checkpoints"] == 7
    assert sorted(p.name for p in (out / "models").glob("*.pt")) == [
        "Font_0.pt", "NST_0.pt", "NST_1.pt", "NST_2.pt", "Unas_0.pt", "Unas_1.pt", "Unas_2.pt"]
    meta = read_meta(out / "manifests" / "unas.jsonl")
    assert meta["seed"] == 3 and len(meta["config_hash"]) == 16
    header = json.loads((out / "nst" / "plan.jsonl").read_text().splitlines()[0])
    assert header["config_hash"] and header["jobs"] == 24
    assert (out / "eval" / "metrics.csv").is_file() and (out / "report" / "summary.md").is_file()
    # rerunning synthesis resumes: nothing left to do
    assert run(toy_project, "synthesize") == 0
    assert summaries(capsys)[0]["skipped"] == 24


def test_missing_input_dir_is_config_error(toy_project, capsys):
    edit(toy_project, paths={"photos": "nowhere"})
    assert run(toy_project, "curate") == 2
    assert "nowhere" in capsys.readouterr().err


def test_missing_weights(toy_project, capsys):
    assert run(toy_project, "curate") == 0
    edit(toy_project, paths={"backbone": "missing.pt"})
    assert run(toy_project, "synthesize") == 2
    assert "missing.pt" in capsys.readouterr().err


def test_unknown_key_and_bad_values(toy_project, tmp_path):
    edit(toy_project, bogus=1)
    assert run(toy_project, "curate") == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: {initial_lr: -1}\n")
    assert run(bad, "curate") == 2
    assert cli.main(["--config", str(tmp_path / "absent.yaml"), "curate"]) == 2


def test_plan_hash_mismatch_aborts(toy_project, capsys):
    assert run(toy_project, "curate") == 0
    assert run(toy_project, "synthesize") == 0
    edit(toy_project, nst={"steps": 2})
    assert run(toy_project, "synthesize") == 2
    assert "delete the plan" in capsys.readouterr().err


def test_partial_synthesis_failure(toy_project, tmp_path, toy_data):
    styles = tmp_path / "styles"
    styles.mkdir()
    (styles / "broken.png").write_bytes(b"not an image")
    (styles / "ok.png").write_bytes((toy_data / "styles" / "style_000.png").read_bytes())
    edit(toy_project, paths={"styles": str(styles)})
    assert run(toy_project, "curate") == 0
    assert run(toy_project, "synthesize") == 3


def test_training_divergence_exit_code(toy_project, monkeypatch):
    assert run(toy_project, "curate") == 0
    assert run(toy_project, "augment") == 0

    def diverge(*args, **kwargs):
        raise TrainingDivergedError("non-finite loss at epoch 0")

    monkeypatch.setattr(cli, "train", diverge)
    assert run(toy_project, "train") == 4


def test_upstream_missing(toy_project):
    assert run(toy_project, "train") == 2
    assert run(toy_project, "evaluate") == 2
    assert run(toy_project, "augment") == 2


def test_report_on_empty_output(toy_project, capsys):
    assert run(toy_project, "report") == 0
    summary = (toy_project.parent / "out" / "report" / "summary.md").read_text()
    assert "No data" in summary


def test_flags_override_config(toy_project, tmp_path, capsys):
    other = tmp_path / "elsewhere"
    assert run(toy_project, "curate", extra=("--seed", "9", "--out", str(other))) == 0
    assert read_meta(other / "manifests" / "font.jsonl")["seed"] == 9


def test_sweep_command(toy_project, capsys):
    assert run(toy_project, "curate") == 0
    assert run(toy_project, "sweep") == 0
    text = (toy_project.parent / "out" / "sweep" / "sweep.csv").read_text().splitlines()
    assert text[0] == "training_dataset,learning_rate,early_stop_delta,accuracy_mean,accuracy_std,replicas,failed"
    assert len(text) == 3  # Font and Unas; no NST manifest yet


def test_toy_data_command(tmp_path, capsys):
    assert cli.main(["toy-data", str(tmp_path / "d"), "--classes", "G17,O49", "--styles", "1",
                     "--photos", "1", "--unas", "2"]) == 0
    assert (tmp_path / "d" / "font" / "O49.png").is_file()


def test_make_backbone_command(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"paths: {{backbone: {tmp_path / 'w.pt'}}}\n")
    assert cli.main(["--config", str(cfg), "make-backbone"]) == 0
    assert (tmp_path / "w.pt").is_file()


@pytest.mark.parametrize("argv", [[], ["bogus"]])
def test_argparse_errors(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2
