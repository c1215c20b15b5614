"""CLI wiring: wrappers, defaults, exit codes, machine-readable errors."""
import json

import numpy as np
import pytest

from ovam.cli import build_parser, main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def trace_dir(tmp_path, capsys):
    out = tmp_path / "trace0"
    code, _, _ = run_cli(capsys, "generate", "--prompt", "A photograph of a dog",
                         "--seed", "0", "--out", str(out))
    assert code == 0
    return out


class TestGenerate:
    def test_writes_trace_and_reports_paths(self, tmp_path, capsys):
        out = tmp_path / "t"
        code, stdout, _ = run_cli(capsys, "generate", "--prompt", "hi",
                                  "--seed", "3", "--out", str(out))
        assert code == 0
        payload = json.loads(stdout)
        assert payload["seed"] == 3
        assert (out / "trace.json").is_file()
        assert (out / "image.png").is_file()

    def test_deterministic_across_runs(self, tmp_path, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        run_cli(capsys, "generate", "--prompt", "x", "--seed", "1", "--out", str(a))
        run_cli(capsys, "generate", "--prompt", "x", "--seed", "1", "--out", str(b))
        assert (a / "trace.json").read_bytes() == (b / "trace.json").read_bytes()
        assert (a / "image.png").read_bytes() == (b / "image.png").read_bytes()


class TestHeatmap:
    def test_writes_raster_and_png(self, tmp_path, trace_dir, capsys):
        prefix = tmp_path / "heat"
        code, stdout, _ = run_cli(capsys, "heatmap", "--trace", str(trace_dir),
                                  "--prompt", "dog", "--token-index", "1",
                                  "--out", str(prefix))
        assert code == 0
        payload = json.loads(stdout)
        assert payload["token_label"] == "dog"
        assert set(payload["stats"]) == {"max", "area_at_tau"}
        assert (tmp_path / "heat.f32").is_file()
        assert (tmp_path / "heat.png").is_file()
        assert (tmp_path / "heat.json").is_file()


class TestMask:
    def test_prompt_defaults_applied(self, tmp_path, trace_dir, capsys):
        out = tmp_path / "m.png"
        code, stdout, _ = run_cli(capsys, "mask", "--trace", str(trace_dir),
                                  "--prompt", "A photograph of a dog",
                                  "--token-index", "5", "--out", str(out),
                                  "--refiner", "identity")
        assert code == 0
        payload = json.loads(stdout)
        assert payload["tau"] == 0.4 and payload["alpha"] == 0.85
        sidecar = json.loads(out.with_suffix(".json").read_text())
        assert sidecar["tau"] == 0.4 and sidecar["alpha"] == 0.85

    def test_token_file_defaults_applied(self, tmp_path, trace_dir, capsys):
        code, stdout, _ = run_cli(
            capsys, "optimize", "--image-pair",
            f"{trace_dir}:{trace_dir / 'image.png'}", "--class", "dog",
            "--epochs", "2", "--out", str(tmp_path / "tok"))
        assert code == 0
        code, stdout, _ = run_cli(capsys, "mask", "--trace", str(trace_dir),
                                  "--token-file", str(tmp_path / "tok"),
                                  "--out", str(tmp_path / "m2.png"),
                                  "--refiner", "identity")
        assert code == 0
        payload = json.loads(stdout)
        assert payload["tau"] == 0.8 and payload["alpha"] == 0.95

    def test_config_file_overrides_defaults(self, tmp_path, trace_dir, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(
            {"defaults": {"prompt": {"tau": 0.3, "alpha": 0.9}}}))
        code, stdout, _ = run_cli(capsys, "--config", str(cfg), "mask",
                                  "--trace", str(trace_dir), "--prompt", "dog",
                                  "--out", str(tmp_path / "m.png"),
                                  "--refiner", "identity")
        assert code == 0
        payload = json.loads(stdout)
        assert payload["tau"] == 0.3 and payload["alpha"] == 0.9


class TestOptimize:
    def test_parser_defaults_follow_standard_schedule(self):
        parser = build_parser()
        args = parser.parse_args(["optimize", "--image-pair", "a:b",
                                  "--class", "dog", "--out", "x"])
        assert args.lr == 100.0
        assert args.decay_factor == 0.7
        assert args.decay_every == 120
        assert args.epochs == 500

    def test_writes_token_file_and_history(self, tmp_path, trace_dir, capsys):
        out = tmp_path / "tok"
        code, stdout, _ = run_cli(
            capsys, "optimize", "--image-pair",
            f"{trace_dir}:{trace_dir / 'image.png'}", "--class", "dog",
            "--epochs", "3", "--out", str(out))
        assert code == 0
        payload = json.loads(stdout)
        meta = json.loads((out / "token.json").read_text())
        assert meta["label"] == "dog"
        assert meta["best_loss"] == payload["best_loss"]
        history = json.loads((out / "loss_history.json").read_text())
        assert len(history) == 3
        assert min(history) == payload["best_loss"]


class TestDatasetAndFilters:
    def test_dataset_then_clip_filter(self, tmp_path, capsys):
        out = tmp_path / "ds"
        code, stdout, _ = run_cli(capsys, "dataset", "--classes", "dog,cat",
                                  "--per-class", "10", "--out", str(out),
                                  "--refiner", "identity", "--tau", "0.9")
        assert code == 0
        assert json.loads(stdout)["entries"] == 20

        code, stdout, _ = run_cli(capsys, "filter", "--dataset", str(out),
                                  "--kind", "clip", "--scorer",
                                  "scorer_stub:scorer")
        assert code == 0
        payload = json.loads(stdout)
        # keep_fraction 0.7 drops floor(0.3 * 10) = 3 per class
        assert payload["kept"] == 14
        from ovam.dataset import load_manifest
        manifest = load_manifest(out)
        dropped = sorted(e.id for e in manifest.entries if not e.kept)
        assert dropped == ["cat_000010", "cat_000011", "cat_000012",
                           "dog_000000", "dog_000001", "dog_000002"]

    def test_area_filter_cli(self, tmp_path, capsys):
        out = tmp_path / "ds"
        run_cli(capsys, "dataset", "--classes", "dog", "--per-class", "2",
                "--out", str(out), "--refiner", "identity")
        code, stdout, _ = run_cli(capsys, "filter", "--dataset", str(out),
                                  "--kind", "area", "--low", "0.05",
                                  "--high", "0.95")
        assert code == 0
        summary = json.loads((out / "dataset.json").read_text())
        assert [f["kind"] for f in summary["filters"]] == ["area"]


class TestEval:
    def test_matches_library_and_writes_json(self, tmp_path, capsys):
        from ovam.dataset import load_manifest
        from ovam.masks import BinaryMask, save_mask
        from ovam.metrics import evaluate_dataset

        out = tmp_path / "ds"
        run_cli(capsys, "dataset", "--classes", "dog", "--per-class", "2",
                "--out", str(out), "--refiner", "identity", "--tau", "0.9")
        gt_dir = tmp_path / "gt"
        rng = np.random.default_rng(0)
        for entry in load_manifest(out).entries:
            save_mask(BinaryMask.from_grid(rng.random((64, 64)) > 0.5, "dog"),
                      gt_dir / f"{entry.id}.png")
        report_path = tmp_path / "report.json"
        code, stdout, _ = run_cli(capsys, "eval", "--dataset", str(out),
                                  "--gt", str(gt_dir), "--classes", "dog",
                                  "--json", str(report_path))
        assert code == 0
        assert "mIoU" in stdout
        expected = evaluate_dataset(load_manifest(out), gt_dir, ["dog"],
                                    root=out)
        written = json.loads(report_path.read_text())
        assert written["miou"] == expected.miou

    def test_missing_ground_truth_gives_nonzero_exit(self, tmp_path, capsys):
        out = tmp_path / "ds"
        run_cli(capsys, "dataset", "--classes", "dog", "--per-class", "1",
                "--out", str(out), "--refiner", "identity")
        empty_gt = tmp_path / "gt"
        empty_gt.mkdir()
        code, stdout, _ = run_cli(capsys, "eval", "--dataset", str(out),
                                  "--gt", str(empty_gt), "--classes", "dog")
        assert code == 1


class TestErrorContract:
    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["generate", "--bogus"])
        assert err.value.code == 2

    def test_failures_emit_json_on_stderr(self, tmp_path, capsys):
        code, _, stderr = run_cli(capsys, "heatmap", "--trace",
                                  str(tmp_path / "missing"), "--prompt", "x",
                                  "--out", str(tmp_path / "h"))
        assert code == 1
        payload = json.loads(stderr)
        assert payload["error"] == "TraceFormatError"

    def test_env_var_backend_override(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("OVAM_BACKEND", "definitely-not-real")
        code, _, stderr = run_cli(capsys, "generate", "--prompt", "x",
                                  "--seed", "0", "--out", str(tmp_path / "t"))
        assert code == 1
        assert json.loads(stderr)["error"] == "BackendUnavailableError"

    def test_bad_image_pair_spec(self, tmp_path, capsys):
        code, _, stderr = run_cli(capsys, "optimize", "--image-pair",
                                  "no-colon-here", "--class", "dog",
                                  "--out", str(tmp_path / "tok"))
        assert code == 1
        assert json.loads(stderr)["error"] == "OvamError"
