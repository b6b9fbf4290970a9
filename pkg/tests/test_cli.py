import dataclasses
import json

import numpy as np
import pytest

import partpool.ops
from partpool.cli import main
from partpool.config import Config, save_config


@pytest.fixture
def tiny_config(tmp_path):
    cfg = Config()
    cfg = dataclasses.replace(
        cfg,
        train=dataclasses.replace(cfg.train, iterations=4),
        eval=dataclasses.replace(cfg.eval, scenes=2),
    )
    path = tmp_path / "config.json"
    save_config(path, cfg)
    return str(path)


class TestExitCodes:
    def test_missing_config_file_names_path(self, tmp_path, capsys):
        rc = main(["train", "--config", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path)])
        assert rc == 2
        assert "nope.json" in capsys.readouterr().err

    def test_invalid_config(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"version": 1, "k": -3}))
        rc = main(["train", "--config", str(path), "--out", str(tmp_path)])
        assert rc == 2
        assert "config error" in capsys.readouterr().err

    def test_unknown_config_key(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"version": 1, "lambada": 0.3}))
        rc = main(["train", "--config", str(path), "--out", str(tmp_path)])
        assert rc == 2

    def test_checkpoint_mismatch(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["train", "--config", tiny_config,
                     "--out", str(out)]) == 0
        # evaluating with an incompatible grid size must be refused
        cfg = Config()
        cfg = dataclasses.replace(cfg, k=3)
        other = tmp_path / "k3.json"
        save_config(other, cfg)
        rc = main(["eval", str(out / "checkpoint.bin"),
                   "--config", str(other), "--out", str(tmp_path / "e")])
        assert rc == 4
        assert "checkpoint error" in capsys.readouterr().err

    def test_corrupt_checkpoint(self, tiny_config, tmp_path, capsys):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"garbage")
        rc = main(["eval", str(bad), "--config", tiny_config,
                   "--out", str(tmp_path / "e")])
        assert rc == 4

    def test_grad_check_failure_detected(self, monkeypatch, capsys):
        # negative control: corrupt one analytic gradient and expect exit 5
        import partpool.gradcheck as gc

        original = partpool.ops.affine_backward

        def corrupted(params, x, upstream):
            out = original(params, x, upstream)
            return out + 1e-2
        monkeypatch.setattr(partpool.ops, "affine_backward", corrupted)
        monkeypatch.setattr(gc, "affine_backward", corrupted, raising=False)
        rc = main(["grad-check", "--seed", "0"])
        out = capsys.readouterr()
        assert rc == 5
        assert "failed" in out.err

    def test_grad_check_passes(self, capsys):
        rc = main(["grad-check", "--seed", "0", "--json-lines"])
        assert rc == 0
        records = [json.loads(line)
                   for line in capsys.readouterr().out.splitlines()]
        assert all(r["pass"] for r in records)
        assert len(records) >= 7


class TestTrainEval:
    def test_train_outputs_and_rerun_identical(self, tiny_config, tmp_path):
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        assert main(["train", "--config", tiny_config, "--out",
                     str(out1)]) == 0
        assert main(["train", "--config", tiny_config, "--out",
                     str(out2)]) == 0
        for name in ("checkpoint.bin", "loss_trace.txt", "eval_report.json",
                     "detections.jsonl"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_seed_override_changes_results(self, tiny_config, tmp_path):
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        main(["train", "--config", tiny_config, "--out", str(out1)])
        main(["train", "--config", tiny_config, "--out", str(out2),
              "--seed", "99"])
        assert (out1 / "loss_trace.txt").read_text() != \
            (out2 / "loss_trace.txt").read_text()

    def test_eval_roundtrip(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "run"
        main(["train", "--config", tiny_config, "--out", str(out)])
        rc = main(["eval", str(out / "checkpoint.bin"), "--config",
                   tiny_config, "--out", str(tmp_path / "e"), "--json-lines"])
        assert rc == 0
        rec = json.loads(capsys.readouterr().out.splitlines()[-1])
        assert rec["event"] == "evaluated"
        assert 0.0 <= rec["map50"] <= 1.0

    def test_lambda_inf_override_accepted(self, tiny_config, tmp_path):
        rc = main(["train", "--config", tiny_config,
                   "--out", str(tmp_path / "r"), "--lambda-def", "inf"])
        assert rc == 0


class TestPoolDemoInspect:
    def test_demo_then_inspect(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "demo"
        rc = main(["pool-demo", "--config", tiny_config, "--out", str(out),
                   "--json-lines"])
        assert rc == 0
        dump = out / "deformations.jsonl"
        assert dump.exists()
        records = [json.loads(line) for line in
                   dump.read_text().splitlines()]
        assert records, "expected at least one deformation record"
        k = Config().k
        for rec in records:
            assert len(rec["displacements"]) == 2 * k * k
        overlays = sorted(out.glob("overlay_*.ppm"))
        assert overlays
        assert overlays[0].read_bytes().startswith(b"P6")
        capsys.readouterr()
        rc = main(["inspect", str(dump), "--json-lines"])
        assert rc == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == len(records)
        summary = json.loads(lines[0])
        assert {"region", "class", "parts", "moved_parts"} <= set(summary)

    def test_inspect_missing_dump(self, tmp_path, capsys):
        rc = main(["inspect", str(tmp_path / "none.jsonl")])
        assert rc == 3
