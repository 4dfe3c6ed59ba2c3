"""Config file parsing and the command-line entry points, driven through
main() the way a shell would use them."""

import json

import numpy as np
import pytest

from conftest import small_config
from crener.cli import main
from crener.config import (
    apply_overrides,
    config_to_flat,
    config_to_text,
    default_config,
    parse_config_text,
    save_config,
)
from crener.corpus import generate_synthetic_corpus, save_corpus
from crener.errors import ConfigError


class TestConfigText:
    def test_comments_and_blanks_ignored(self):
        cfg = parse_config_text(
            "# run settings\n\noptimizer.epochs = 3\n  # indented comment\n"
            "encoder.heads = 2\n"
        )
        assert cfg.optimizer.epochs == 3
        assert cfg.encoder.heads == 2

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="optimizer.momentum"):
            parse_config_text("optimizer.momentum = 0.9")

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("scheduler.rate = 1")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("encoder.layers = banana")

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config_text("optimizer.epochs 3")

    def test_json_list_becomes_tuple(self):
        cfg = parse_config_text("grid.dilations = [1, 4]")
        assert cfg.grid.dilations == (1, 4)

    def test_bare_strings_allowed_for_paths(self):
        cfg = parse_config_text('paths.train = data/train.jsonl\npaths.dev = "d.jsonl"')
        assert cfg.paths.train == "data/train.jsonl"
        assert cfg.paths.dev == "d.jsonl"

    def test_booleans(self):
        cfg = parse_config_text(
            "ablations.use_scaling_factor = true\nablations.no_dilated_conv = false"
        )
        assert cfg.ablations.use_scaling_factor is True
        assert cfg.ablations.no_dilated_conv is False

    def test_text_round_trip(self):
        cfg = default_config()
        cfg.optimizer.epochs = 7
        cfg.predictor.mode = "softmax"
        cfg.paths.train = "x.jsonl"
        back = parse_config_text(config_to_text(cfg))
        assert config_to_flat(back) == config_to_flat(cfg)

    def test_apply_overrides(self):
        cfg = default_config()
        apply_overrides(cfg, ["optimizer.epochs=3", "encoder.heads=2"])
        assert cfg.optimizer.epochs == 3 and cfg.encoder.heads == 2
        with pytest.raises(ConfigError):
            apply_overrides(cfg, ["no-equals-sign"])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Config file, train/dev corpora, and a trained checkpoint directory."""
    root = tmp_path_factory.mktemp("cli")
    sents = generate_synthetic_corpus(seed=3, count=12, max_len=8, types=["PER", "LOC"])
    train_path = root / "train.jsonl"
    dev_path = root / "dev.jsonl"
    save_corpus(sents, train_path)
    save_corpus(sents[:6], dev_path)

    cfg = small_config()
    cfg.optimizer.epochs = 2
    cfg.optimizer.batch_size = 4
    cfg.paths.train = str(train_path)
    cfg.paths.dev = str(dev_path)
    cfg_path = root / "run.cfg"
    save_config(cfg, cfg_path)

    ckpt = root / "ckpt"
    code = main(["train", "--config", str(cfg_path), "--checkpoint-dir", str(ckpt),
                 "--quiet"])
    assert code == 0
    return {"root": root, "cfg": cfg_path, "ckpt": ckpt, "dev": dev_path}


class TestTrainCommand:
    def test_checkpoint_layout(self, workspace, capsys):
        ckpt = workspace["ckpt"]
        assert (ckpt / "manifest.json").is_file()
        assert (ckpt / "train_log.jsonl").is_file()
        assert any((ckpt / "params").glob("*.npy"))
        log = [json.loads(l) for l in (ckpt / "train_log.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in log] == [1, 2]

    def test_progress_output(self, workspace, capsys, tmp_path):
        code = main(["train", "--config", str(workspace["cfg"]),
                     "--checkpoint-dir", str(tmp_path / "ck"),
                     "--set", "optimizer.epochs=1"])
        out = capsys.readouterr().out
        assert code == 0
        assert "epoch 1" in out
        assert "checkpoint written to" in out

    def test_env_seed_overrides_config(self, workspace, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("CRENER_SEED", "7")
        ckpt = tmp_path / "seeded"
        code = main(["train", "--config", str(workspace["cfg"]),
                     "--checkpoint-dir", str(ckpt), "--quiet",
                     "--set", "optimizer.epochs=1"])
        assert code == 0
        manifest = json.loads((ckpt / "manifest.json").read_text())
        assert manifest["config"]["optimizer.seed"] == 7

    def test_bad_env_seed_is_config_error(self, workspace, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("CRENER_SEED", "soon")
        code = main(["train", "--config", str(workspace["cfg"]),
                     "--checkpoint-dir", str(tmp_path / "x"), "--quiet"])
        assert code == 1
        assert "CRENER_SEED" in capsys.readouterr().err

    def test_unknown_override_exits_1(self, workspace, tmp_path, capsys):
        code = main(["train", "--config", str(workspace["cfg"]),
                     "--checkpoint-dir", str(tmp_path / "x"),
                     "--set", "optimizer.wrong=1", "--quiet"])
        assert code == 1
        assert "config error" in capsys.readouterr().err

    def test_missing_train_file_exits_2(self, workspace, tmp_path, capsys):
        code = main(["train", "--config", str(workspace["cfg"]),
                     "--checkpoint-dir", str(tmp_path / "x"), "--quiet",
                     "--set", "paths.train=/nonexistent/t.jsonl"])
        assert code == 2

    def test_divergence_exits_3(self, workspace, tmp_path, capsys):
        with np.errstate(all="ignore"):
            code = main(["train", "--config", str(workspace["cfg"]),
                         "--checkpoint-dir", str(tmp_path / "x"), "--quiet",
                         "--set", "optimizer.learning_rate=1e30"])
        assert code == 3
        assert "diverged" in capsys.readouterr().err


class TestEvalCommand:
    def test_report_written(self, workspace, tmp_path, capsys):
        out = tmp_path / "report.json"
        code = main(["eval", "--checkpoint", str(workspace["ckpt"]),
                     "--data", str(workspace["dev"]), "--out", str(out)])
        assert code == 0
        printed = capsys.readouterr().out
        assert printed.splitlines()[0].split()[:2] == ["type", "P"]
        report = json.loads(out.read_text())
        for key in ("precision", "recall", "f1", "gold", "predicted", "per_type"):
            assert key in report

    def test_missing_checkpoint_exits_2(self, tmp_path, capsys):
        code = main(["eval", "--checkpoint", str(tmp_path / "none"),
                     "--data", str(tmp_path / "none.jsonl")])
        assert code == 2


class TestPredictCommand:
    def test_stdout_mode_emits_jsonl(self, workspace, capsys):
        code = main(["predict", "--checkpoint", str(workspace["ckpt"]),
                     "--input", str(workspace["dev"]), "--output", "-"])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 6
        for line in lines:
            obj = json.loads(line)
            assert set(obj) >= {"id", "text", "entities"}

    def test_file_mode(self, workspace, tmp_path, capsys):
        out = tmp_path / "pred.jsonl"
        code = main(["predict", "--checkpoint", str(workspace["ckpt"]),
                     "--input", str(workspace["dev"]), "--output", str(out)])
        assert code == 0
        assert "predictions written to" in capsys.readouterr().out
        assert len(out.read_text().splitlines()) == 6


class TestDecodeGridCommand:
    def write_grid(self, tmp_path, records):
        path = tmp_path / "grid.jsonl"
        path.write_text("".join(json.dumps(r) + "\n" for r in records))
        return path

    def test_contiguous_entity_printed(self, tmp_path, capsys):
        cells = [[1, 2, "NNC"], [2, 1, "PNC"], [2, 3, "NNC"], [3, 2, "PNC"],
                 [3, 1, "THC_PER"], [1, 3, "HTC_PER"]]
        path = self.write_grid(tmp_path, [{"n": 4, "cells": cells}])
        assert main(["decode-grid", "--grid", str(path)]) == 0
        assert capsys.readouterr().out == "[1,2,3] PER\n"

    def test_single_char_entity(self, tmp_path, capsys):
        path = self.write_grid(
            tmp_path, [{"n": 2, "cells": [[0, 0, "THC_X"], [0, 0, "HTC_X"]]}]
        )
        assert main(["decode-grid", "--grid", str(path)]) == 0
        assert capsys.readouterr().out == "[0] X\n"

    def test_discontinuous_needs_flag(self, tmp_path, capsys):
        cells = [[0, 2, "NNC"], [2, 0, "PNC"], [2, 0, "THC_ORG"], [0, 2, "HTC_ORG"]]
        record = {"n": 3, "cells": cells}
        path = self.write_grid(tmp_path, [record])
        main(["decode-grid", "--grid", str(path)])
        assert capsys.readouterr().out == ""
        main(["decode-grid", "--grid", str(path), "--discontinuous"])
        assert capsys.readouterr().out == "[0,2] ORG\n"

    def test_malformed_record_exits_2(self, tmp_path, capsys):
        path = self.write_grid(tmp_path, [{"n": 2}])
        assert main(["decode-grid", "--grid", str(path)]) == 2
        assert "grid.jsonl:1" in capsys.readouterr().err


def test_corpus_stats_command(workspace, capsys):
    code = main(["corpus-stats", "--data", str(workspace["dev"])])
    assert code == 0
    out = capsys.readouterr().out
    assert "sentences" in out and "entities_per_type" in out
