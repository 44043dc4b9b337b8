"""End-to-end CLI behavior: flags, files, exit codes, goldens."""

import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from promptseg.cli import main
from promptseg.checkpoint import save_model
from promptseg.imageio import read_png
from promptseg.model import ModelSpec, SegModel


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cli_ws")
    assert main(["synth", "--out", str(ws / "data"), "--n-train", "8",
                 "--n-test", "4", "--size", "32", "--seed", "11"]) == 0
    cfg = {"lr": 2e-4, "epochs": 1, "batch": 4, "seed": 2, "arch": "pda",
           "dataset_root": str(ws / "data")}
    (ws / "cfg.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(ws / "cfg.json"), "--out", str(ws / "run")]) == 0
    return ws


def _tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_synth_rejects_non_power_of_two(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out", str(tmp_path / "d"), "--size", "48"])
    assert exc.value.code == 2


def test_unknown_flag_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out", str(tmp_path / "d"), "--frobnicate", "1"])
    assert exc.value.code == 2


def test_synth_idempotent(tmp_path):
    for sub in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / sub), "--n-train", "4",
                     "--n-test", "2", "--size", "32", "--seed", "7"]) == 0
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")


def test_train_artifacts(workspace):
    run = workspace / "run"
    assert (run / "model.dpck").exists()
    assert (run / "runlog.jsonl").exists()
    assert (run / "loss_curve.png").exists()
    assert list((run / "checkpoints").glob("phaseB_epoch*.dpck"))


def test_eval_report_files(workspace):
    report = workspace / "out" / "report.json"
    assert main(["eval", "--checkpoint", str(workspace / "run" / "model.dpck"),
                 "--data", str(workspace / "data" / "test"),
                 "--report", str(report)]) == 0
    doc = json.loads(report.read_text())
    import jsonschema
    from promptseg.metrics import REPORT_SCHEMA
    jsonschema.validate(doc, REPORT_SCHEMA)
    csv_lines = (workspace / "out" / "report_pr.csv").read_text().splitlines()
    assert csv_lines[0] == "threshold,precision,recall"
    assert len(csv_lines) == 257
    assert (workspace / "out" / "report_pr.png").stat().st_size > 0


def test_eval_missing_checkpoint_exit1(workspace, capsys):
    assert main(["eval", "--checkpoint", str(workspace / "nope.dpck"),
                 "--data", str(workspace / "data" / "test"),
                 "--report", str(workspace / "r.json")]) == 1
    assert "not found" in capsys.readouterr().err


def test_enhance_outputs_and_golden(workspace, tmp_path):
    spec = ModelSpec(arch="pda", stages=1, layers_per_stage=1, d_model=16, heads=2,
                     patch=4, input_size=32, embed_dim=8)
    model = SegModel(spec, seed=123)
    model.freeze_backbone()
    ckpt = tmp_path / "golden.dpck"
    save_model(ckpt, model)
    src = workspace / "data" / "test" / "adverse" / "00000.png"
    out_img = tmp_path / "enhanced.png"
    gates = tmp_path / "gates.json"
    assert main(["enhance", "--checkpoint", str(ckpt), "--image", str(src),
                 "--out", str(out_img), "--dump-gates", str(gates), "--stage", "1"]) == 0
    img = read_png(out_img)
    srcim = read_png(src)
    assert img.shape == srcim.shape
    assert img.min() >= 0.0 and img.max() <= 1.0
    doc = json.loads(gates.read_text())
    for op in ("tone", "contrast", "sharpen", "defog", "gamma", "white_balance", "identity", "hfc"):
        assert 0.0 < doc[op]["gate"] < 1.0
    assert 0.1 <= doc["tau"] <= 0.8
    golden = json.loads(Path(__file__).with_name("golden_enhance.json").read_text())
    assert hashlib.sha256(img.tobytes()).hexdigest() == golden["sha256"]
    assert doc["tau"] == pytest.approx(golden["tau"], abs=1e-9)
    # idempotent: rerunning produces byte-identical outputs
    before = out_img.read_bytes()
    assert main(["enhance", "--checkpoint", str(ckpt), "--image", str(src),
                 "--out", str(out_img), "--dump-gates", str(gates), "--stage", "1"]) == 0
    assert out_img.read_bytes() == before


def test_enhance_stage_validation(workspace, tmp_path):
    spec = ModelSpec(arch="pda", stages=1, layers_per_stage=1, d_model=16, heads=2,
                     patch=4, input_size=32, embed_dim=8)
    ckpt = tmp_path / "m.dpck"
    save_model(ckpt, SegModel(spec, seed=1))
    src = workspace / "data" / "test" / "adverse" / "00000.png"
    with pytest.raises(SystemExit) as exc:
        main(["enhance", "--checkpoint", str(ckpt), "--image", str(src),
              "--out", str(tmp_path / "o.png"), "--dump-gates", str(tmp_path / "g.json"),
              "--stage", "3"])
    assert exc.value.code == 2


def test_gradcheck_cli_exit0(capsys):
    assert main(["gradcheck", "--tol", "1e-4"]) == 0
    out = capsys.readouterr().out
    assert "NON-DIFF (expected)" in out
    assert "FAIL" not in out.replace("NON-DIFF", "")


def test_console_entrypoint_help():
    proc = subprocess.run([sys.executable, "-m", "promptseg.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("synth", "train", "eval", "enhance", "gradcheck", "selftest"):
        assert cmd in proc.stdout


def test_eval_idempotent(workspace, tmp_path):
    args = ["eval", "--checkpoint", str(workspace / "run" / "model.dpck"),
            "--data", str(workspace / "data" / "test")]
    assert main(args + ["--report", str(tmp_path / "r1.json")]) == 0
    assert main(args + ["--report", str(tmp_path / "r2.json")]) == 0
    assert (tmp_path / "r1.json").read_bytes() == (tmp_path / "r2.json").read_bytes()
    assert (tmp_path / "r1_pr.csv").read_bytes() == (tmp_path / "r2_pr.csv").read_bytes()


def test_selftest_quick(capsys, tmp_path):
    assert main(["selftest", "--quick", "--workdir", str(tmp_path / "st")]) == 0
    out = capsys.readouterr().out
    assert out.count("ACCEPTANCE") == 6
    assert "FAIL" not in out


def test_synth_defaults_are_200_50():
    from promptseg.cli import build_parser
    args = build_parser().parse_args(["synth", "--out", "x"])
    assert args.n_train == 200 and args.n_test == 50 and args.size == 64
