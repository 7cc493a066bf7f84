import json

import numpy as np
import pytest

from src.scripts.cli import build_parser, main
from src.utils.io import write_png
from tests.conftest import TINY_INI


@pytest.fixture
def tiny_ini(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return path


class TestParser:
    def test_subcommand_required(self):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args([])
        assert exc.value.code == 2

    def test_infer_needs_input(self):
        with pytest.raises(SystemExit) as exc:
            main(["infer"])
        assert exc.value.code == 2

    def test_unknown_ablation(self):
        with pytest.raises(SystemExit):
            main(["eval", "--ablations", "no_gru"])

    def test_common_options(self):
        args = build_parser().parse_args(["synth", "--seed", "4", "--out", "runs/x"])
        assert (args.seed, args.out, args.config) == (4, "runs/x", "desk")

    def test_debug_panels_only_on_infer(self):
        args = build_parser().parse_args(["infer", "--input", "clip", "--debug-panels"])
        assert args.debug_panels
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["synth", "--debug-panels"])
        assert exc.value.code == 2


class TestCommands:
    def test_synth(self, tiny_ini, tmp_path):
        assert main(["synth", "--config", str(tiny_ini), "--out", str(tmp_path / "run"), "--splits", "test"]) == 0
        manifest = json.loads((tmp_path / "run" / "corpus" / "manifest.json").read_text())
        assert [c["id"] for c in manifest["clips"]] == ["test_0000"]

    def test_out_defaults_to_env(self, tiny_ini, tmp_path, monkeypatch):
        monkeypatch.setenv("CLEARLENS_DATA_DIR", str(tmp_path / "env_run"))
        assert main(["synth", "--config", str(tiny_ini), "--splits", "test"]) == 0
        assert (tmp_path / "env_run" / "corpus" / "manifest.json").exists()

    def test_missing_checkpoint_is_an_error(self, tiny_ini, tmp_path, capsys):
        clip = tmp_path / "clip"
        for t in range(2):
            write_png(clip / f"frame_{t:05d}.png", np.full((16, 16, 3), 0.5))
        code = main(["infer", "--config", str(tiny_ini), "--out", str(tmp_path), "--input", str(clip), "--stage-one-only"])
        assert code == 1
        assert "clearlens: error:" in capsys.readouterr().err

    def test_bad_config_is_an_error(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[train]\nneighbors = 3\n")
        assert main(["synth", "--config", str(bad), "--out", str(tmp_path)]) == 1

    def test_eval_without_request(self, tiny_ini, tmp_path):
        assert main(["eval", "--config", str(tiny_ini), "--out", str(tmp_path)]) == 1

    def test_gradcheck(self, tiny_ini):
        assert main(["gradcheck", "--config", str(tiny_ini), "--only", "sigmoid", "conv2d"]) == 0
