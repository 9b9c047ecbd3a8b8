import json
import re

import pytest
import torch

import mmie.cli as cli
from mmie.checkpoint import CheckpointError, load_checkpoint, read_manifest, save_checkpoint
from mmie.config import RunConfig, config_hash, load_config, parse_config_text
from mmie.data import ConfigError, read_corpus_with_meta
from mmie.model import ModelConfig, MultimodalExtractor, collate_batch
from mmie.train import evaluate_checkpoint, run_training
from mmie.verify import SuiteResult

EPOCH_LINE = re.compile(
    r"^epoch=\d+ loss=-?\d+\.\d{6} task=-?\d+\.\d{6} sem=-?\d+\.\d{6}"
    r" val_p=\d+\.\d{6} val_r=\d+\.\d{6} val_f1=\d+\.\d{6}$")


def tiny_cfg(corpus, out_dir, **kw):
    base = dict(task=corpus["spec"].task, train_path=corpus["train"],
                val_path=corpus["val"], test_path=corpus["test"],
                out_dir=str(out_dir), seed=0, epochs=2, batch_size=8)
    base.update(kw)
    return RunConfig(**base)


# --- config files ------------------------------------------------------------

def test_parse_config_text_types_and_comments():
    cfg = parse_config_text(
        "task = re\n"
        "# a comment\n"
        "lr = 2e-4   # trailing comment\n"
        "epochs = 7\n"
        "batch_size = none\n"
        "no_attnmixup = true\n"
        "level_channels = 8, 12\n"
        "early_stop_f1 = 0.99\n")
    assert cfg.task == "re"
    assert cfg.lr == 2e-4
    assert cfg.epochs == 7
    assert cfg.batch_size is None
    assert cfg.no_attnmixup is True
    assert cfg.level_channels == (8, 12)
    assert cfg.early_stop_f1 == 0.99


def test_parse_config_rejects_bad_lines():
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config_text("nonsense = 3\n")
    with pytest.raises(ConfigError, match=":2"):
        parse_config_text("task = ner\njust words\n")
    with pytest.raises(ConfigError, match="bad value"):
        parse_config_text("epochs = soon\n")
    with pytest.raises(ConfigError, match="bad value"):
        parse_config_text("no_attnmixup = maybe\n")


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.cfg")


def test_run_config_validation_and_defaults():
    with pytest.raises(ConfigError):
        RunConfig(task="tagging").validate()
    with pytest.raises(ConfigError):
        RunConfig(sample_ratio=1.2).validate()
    with pytest.raises(ConfigError):
        RunConfig(lr=0.0).validate()
    with pytest.raises(ConfigError):
        RunConfig(epochs=0).validate()
    ner = RunConfig(task="ner")
    re_ = RunConfig(task="re")
    assert ner.resolved_epochs == 30 and ner.resolved_batch_size == 8
    assert re_.resolved_epochs == 25 and re_.resolved_batch_size == 16


def test_config_hash_tracks_every_field():
    a, b = RunConfig(), RunConfig()
    assert config_hash(a) == config_hash(b)
    b.seed = 1
    assert config_hash(a) != config_hash(b)
    c = RunConfig(no_semantic_loss=True)
    assert config_hash(a) != config_hash(c)


# --- checkpoints -------------------------------------------------------------

def small_model(task="ner"):
    # matches the tiny corpus fixtures: vocab 64, 3 entity / 5 relation types
    torch.manual_seed(1)
    return MultimodalExtractor(ModelConfig(
        task=task, vocab_size=64, num_entity_types=3, num_relation_types=5,
        d_model=16, text_layers=2, text_heads=2, ffn_dim=32, max_len=32,
        text_dropout=0.0, level_channels=(4, 8), latent_dim=4,
        attn_heads=2, attn_dropout=0.0))


def test_checkpoint_round_trip(tmp_path):
    model = small_model()
    path = tmp_path / "m.npz"
    save_checkpoint(path, model, extra={"seed": 5})
    manifest = read_manifest(path)
    assert manifest["extra"]["seed"] == 5
    assert manifest["model"]["task"] == "ner"
    back, manifest2 = load_checkpoint(path)
    assert manifest2 == manifest
    state, state2 = model.state_dict(), back.state_dict()
    assert set(state) == set(state2)
    for k in state:
        assert torch.equal(state[k], state2[k]), k


def test_checkpoint_rejects_foreign_npz(tmp_path):
    import numpy as np

    path = tmp_path / "junk.npz"
    np.savez(path, a=np.zeros(3))
    with pytest.raises(CheckpointError, match="manifest"):
        load_checkpoint(path)


# --- training runs -----------------------------------------------------------

def test_run_training_outputs_and_log_format(tiny_ner_corpus, tmp_path):
    cfg = tiny_cfg(tiny_ner_corpus, tmp_path / "runs")
    summary = run_training(cfg)
    assert len(summary["log_lines"]) == 2
    for line in summary["log_lines"]:
        assert EPOCH_LINE.match(line), line
    log_text = open(summary["log_path"]).read()
    assert log_text == "".join(l + "\n" for l in summary["log_lines"])
    report = json.load(open(summary["metrics_path"]))
    assert set(report) >= {"task", "seed", "best_epoch", "val", "test", "epochs"}
    for key in ("precision", "recall", "f1", "per_type"):
        assert key in report["test"]
    names = open(summary["names_path"]).read().splitlines()
    assert names[0] == "0\tO"
    assert len(names) == 7  # O plus B/I for three entity types

    # the checkpoint reproduces the recorded test metrics exactly
    again = evaluate_checkpoint(summary["checkpoint_path"],
                                tiny_ner_corpus["test"])
    assert again == summary["test"]


def test_two_identical_runs_are_byte_identical(tiny_re_corpus, tmp_path):
    cfg = tiny_cfg(tiny_re_corpus, tmp_path / "runs", epochs=2)
    first = run_training(cfg)
    log1 = open(first["log_path"], "rb").read()
    metrics1 = open(first["metrics_path"], "rb").read()
    second = run_training(tiny_cfg(tiny_re_corpus, tmp_path / "runs", epochs=2))
    assert open(second["log_path"], "rb").read() == log1
    assert open(second["metrics_path"], "rb").read() == metrics1
    assert first["log_path"] == second["log_path"]


def test_disabled_semantic_loss_keeps_logging_it(tiny_ner_corpus, tmp_path):
    cfg = tiny_cfg(tiny_ner_corpus, tmp_path / "runs", epochs=1,
                   no_semantic_loss=True)
    summary = run_training(cfg)
    fields = dict(part.split("=") for part in summary["log_lines"][0].split())
    assert float(fields["sem"]) > 0.0
    assert fields["loss"] == fields["task"]


def test_augmentation_free_training_path_matches_eval_encoding(tiny_ner_corpus):
    samples, _ = read_corpus_with_meta(tiny_ner_corpus["train"])
    model = small_model()
    batch = collate_batch(samples[:6], model.schema, model.cfg.max_len)

    import numpy as np
    model.train()
    losses = model.training_losses(batch, np.random.default_rng(0),
                                   use_attnmixup=False)
    model.eval()
    with torch.no_grad():
        states, _ = model.encode(batch)
        reps = model.build_reps(states, batch)
        eval_task = model.head.loss(reps)
    assert torch.allclose(losses["task"].detach(), eval_task)


def test_training_rejects_mismatched_corpus(tiny_ner_corpus, tmp_path):
    cfg = tiny_cfg(tiny_ner_corpus, tmp_path / "runs", task="re")
    with pytest.raises(ConfigError, match="does not match"):
        run_training(cfg)
    empty = tiny_cfg(tiny_ner_corpus, tmp_path / "runs", train_path="")
    with pytest.raises(ConfigError):
        run_training(empty)


def test_oversized_batch_rejected(tiny_ner_corpus, tmp_path):
    cfg = tiny_cfg(tiny_ner_corpus, tmp_path / "runs", batch_size=100)
    with pytest.raises(ConfigError, match="batch_size"):
        run_training(cfg)


# --- CLI ---------------------------------------------------------------------

def test_cli_gen_data_and_train_and_eval(tmp_path, capsys):
    data_dir = tmp_path / "data"
    rc = cli.main(["gen-data", "--task", "ner", "--train", "24", "--val", "12",
                   "--test", "12", "--seed", "5", "--out", str(data_dir)])
    assert rc == 0
    samples, meta = read_corpus_with_meta(data_dir / "train.jsonl")
    assert len(samples) == 24 and meta["task"] == "ner"

    out_dir = tmp_path / "runs"
    rc = cli.main(["train", "--task", "ner",
                   "--train-path", str(data_dir / "train.jsonl"),
                   "--val-path", str(data_dir / "val.jsonl"),
                   "--test-path", str(data_dir / "test.jsonl"),
                   "--epochs", "1", "--batch-size", "8",
                   "--seed", "0", "--out", str(out_dir)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "best_epoch=" in out
    ckpt = re.search(r"checkpoint: (\S+)", out).group(1)

    rc = cli.main(["eval", "--checkpoint", ckpt,
                   "--data", str(data_dir / "test.jsonl"),
                   "--out", str(tmp_path / "evalout")])
    assert rc == 0
    printed = capsys.readouterr().out
    report = json.loads(printed)
    assert set(report) == {"precision", "recall", "f1", "per_type"}
    on_disk = json.load(open(tmp_path / "evalout" / "eval-report.json"))
    assert on_disk == report


def test_cli_train_reads_config_file_with_overrides(tiny_ner_corpus, tmp_path,
                                                    capsys):
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(
        f"task = ner\n"
        f"train_path = {tiny_ner_corpus['train']}\n"
        f"val_path = {tiny_ner_corpus['val']}\n"
        f"test_path = {tiny_ner_corpus['test']}\n"
        f"epochs = 3\n"
        f"batch_size = 8\n"
        f"out_dir = {tmp_path / 'cfgruns'}\n")
    rc = cli.main(["train", "--config", str(cfg_path), "--epochs", "1"])
    assert rc == 0
    out = capsys.readouterr().out
    epoch_lines = [l for l in out.splitlines() if l.startswith("epoch=")]
    assert len(epoch_lines) == 1  # CLI override beats the file value


def test_cli_ablate_writes_three_reports(tiny_ner_corpus, tmp_path, capsys):
    out_dir = tmp_path / "ablate"
    rc = cli.main(["ablate", "--task", "ner",
                   "--train-path", tiny_ner_corpus["train"],
                   "--val-path", tiny_ner_corpus["val"],
                   "--test-path", tiny_ner_corpus["test"],
                   "--epochs", "1", "--batch-size", "8",
                   "--seed", "0", "--out", str(out_dir)])
    assert rc == 0
    summary = json.load(open(out_dir / "ablation-summary-s0.json"))
    assert set(summary) == {"full", "no_semantic_loss", "no_attnmixup"}
    for report in summary.values():
        assert set(report) == {"precision", "recall", "f1", "per_type"}
    capsys.readouterr()


def test_cli_exit_codes_for_bad_input(tmp_path, capsys):
    assert cli.main(["train", "--task", "ner"]) == 1        # no paths
    assert cli.main(["gen-data", "--task", "ner", "--entity-types", "9",
                     "--out", str(tmp_path)]) == 1
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("not_a_key = 7\n")
    assert cli.main(["train", "--config", str(bad_cfg)]) == 1
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "missing.npz"),
                     "--data", str(tmp_path / "missing.jsonl")]) == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--task", "parsing"])            # bad choice
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["nonsense"])
    assert exc.value.code == 1
    capsys.readouterr()


def test_cli_verify_single_suite(capsys):
    rc = cli.main(["verify", "--suite", "crf-oracle"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "crf-oracle" in out and "pass" in out.lower()


def test_cli_verify_failure_exits_2(tmp_path, monkeypatch, capsys):
    def fake_suite(name, seed=0):
        return SuiteResult(name=name, passed=False,
                           details={"max_dev": 1.0},
                           failure={"case": [1, 2, 3]})

    monkeypatch.setattr(cli, "run_suite", fake_suite)
    rc = cli.main(["verify", "--suite", "kl-mc", "--out", str(tmp_path)])
    assert rc == 2
    failure = json.load(open(tmp_path / "verify-kl-mc-failure.json"))
    assert failure == {"case": [1, 2, 3]}
    capsys.readouterr()
