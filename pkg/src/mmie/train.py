"""Training loop and evaluation driver.

Single-threaded and fully determined by (config, seed): sample order comes
from a dedicated shuffle stream, augmentation draws from a second stream,
and log lines carry no timestamps, so two runs with the same config produce
byte-identical logs and metrics.
"""

from __future__ import annotations

import copy
import json
import math
import os

import numpy as np
import torch

from mmie import metrics as metrics_mod
from mmie.checkpoint import load_checkpoint, save_checkpoint
from mmie.config import RunConfig, config_hash
from mmie.data import TASK_NER, ConfigError, Sample, read_corpus_with_meta
from mmie.heads import BioTagSchema
from mmie.model import ModelConfig, MultimodalExtractor, collate_batch


class TrainingError(RuntimeError):
    """Aborted run (non-finite loss or inconsistent inputs)."""


def model_config_from_run(cfg: RunConfig, meta: dict) -> ModelConfig:
    return ModelConfig(
        task=meta["task"],
        vocab_size=int(meta["vocab_size"]),
        num_entity_types=int(meta["num_entity_types"]),
        num_relation_types=int(meta["num_relation_types"]),
        d_model=cfg.d_model,
        text_layers=cfg.text_layers,
        text_heads=cfg.text_heads,
        ffn_dim=cfg.ffn_dim,
        max_len=cfg.max_len,
        text_dropout=cfg.text_dropout,
        level_channels=cfg.level_channels,
        latent_dim=cfg.latent_dim,
        attn_heads=cfg.attn_heads,
        attn_dropout=cfg.attn_dropout,
    )


def _load_split(path, expected_task: str) -> tuple[list[Sample], dict]:
    if not path:
        raise ConfigError("train_path, val_path and test_path must all be set")
    samples, meta = read_corpus_with_meta(path)
    if meta.get("task") != expected_task:
        raise ConfigError(
            f"{path}: corpus task {meta.get('task')!r} does not match "
            f"configured task {expected_task!r}")
    return samples, meta


def _batches(count: int, size: int, order=None, drop_last: bool = False):
    idx = list(range(count)) if order is None else [int(i) for i in order]
    for lo in range(0, count, size):
        chunk = idx[lo:lo + size]
        if drop_last and len(chunk) < size:
            return
        yield chunk


def evaluate_model(model: MultimodalExtractor, samples: list[Sample],
                   batch_size: int, relation_names: list[str]) -> dict:
    """Metrics report for a split; eval mode, fixed order, no augmentation."""
    was_training = model.training
    model.eval()
    gold, pred = [], []
    for chunk in _batches(len(samples), batch_size):
        rows = [samples[i] for i in chunk]
        batch = collate_batch(rows, model.schema, model.cfg.max_len)
        out = model.predict(batch)
        if model.cfg.task == TASK_NER:
            gold += [s.ner_labels for s in rows]
        else:
            gold += [s.relation for s in rows]
        pred += out
    if was_training:
        model.train()
    if model.cfg.task == TASK_NER:
        return metrics_mod.ner_report(gold, pred)
    return metrics_mod.re_report(gold, pred, relation_names)


def run_training(cfg: RunConfig) -> dict:
    """Train per config, select best epoch on validation F1, score test.

    Returns a summary dict with the output paths, the best epoch, and the
    final reports.  Files written to cfg.out_dir, names embedding the config
    hash and seed: run-*.log, metrics-*.json, checkpoint-*.npz, plus tag or
    relation name manifests.
    """
    cfg.validate()
    torch.set_num_threads(1)
    train, meta = _load_split(cfg.train_path, cfg.task)
    val, _ = _load_split(cfg.val_path, cfg.task)
    test, _ = _load_split(cfg.test_path, cfg.task)

    torch.manual_seed(cfg.seed)
    model = MultimodalExtractor(model_config_from_run(cfg, meta))
    relation_names = [f"R{i}" for i in range(model.cfg.num_relation_types)]

    batch_size = cfg.resolved_batch_size
    epochs = cfg.resolved_epochs
    steps_per_epoch = len(train) // batch_size
    if steps_per_epoch < 1:
        raise ConfigError(
            f"batch_size {batch_size} exceeds the {len(train)}-sample train split")
    total_steps = epochs * steps_per_epoch
    warmup_steps = max(1, int(round(total_steps * cfg.warmup_frac)))

    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr,
                                  weight_decay=cfg.weight_decay)

    def lr_factor(step: int) -> float:
        if step < warmup_steps:
            return (step + 1) / warmup_steps
        if total_steps == warmup_steps:
            return 1.0
        return max(0.0, (total_steps - step) / (total_steps - warmup_steps))

    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lr_factor)

    shuffle_seq, augment_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_seq))
    augment_rng = np.random.Generator(np.random.PCG64(augment_seq))

    run_id = f"{config_hash(cfg)}-s{cfg.seed}"
    os.makedirs(cfg.out_dir, exist_ok=True)
    log_path = os.path.join(cfg.out_dir, f"run-{run_id}.log")
    metrics_path = os.path.join(cfg.out_dir, f"metrics-{run_id}.json")
    ckpt_path = os.path.join(cfg.out_dir, f"checkpoint-{run_id}.npz")

    log_lines: list[str] = []
    epoch_rows: list[dict] = []
    best_f1 = -1.0
    best_epoch = 0
    best_state = None
    best_val: dict = {}

    with open(log_path, "w", encoding="utf-8") as log:
        for epoch in range(1, epochs + 1):
            model.train()
            order = shuffle_rng.permutation(len(train))
            sums = {"total": 0.0, "task": 0.0, "semantic": 0.0}
            steps = 0
            for chunk in _batches(len(train), batch_size, order, drop_last=True):
                batch = collate_batch([train[i] for i in chunk], model.schema,
                                      model.cfg.max_len)
                losses = model.training_losses(
                    batch, augment_rng,
                    use_attnmixup=not cfg.no_attnmixup,
                    use_semantic=not cfg.no_semantic_loss,
                    semantic_weight=cfg.semantic_weight,
                    sample_ratio=cfg.sample_ratio,
                    compose_ratio=cfg.compose_ratio,
                    mixup_alpha=cfg.mixup_alpha)
                total = losses["total"]
                loss_vals = {k: float(v.detach()) for k, v in losses.items()}
                if not math.isfinite(loss_vals["total"]):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch} step {steps}: "
                        f"total={loss_vals['total']} task={loss_vals['task']} "
                        f"semantic={loss_vals['semantic']}")
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                scheduler.step()
                for key in sums:
                    sums[key] += loss_vals[key]
                steps += 1

            val_report = evaluate_model(model, val, cfg.eval_batch_size,
                                        relation_names)
            line = (f"epoch={epoch}"
                    f" loss={sums['total'] / steps:.6f}"
                    f" task={sums['task'] / steps:.6f}"
                    f" sem={sums['semantic'] / steps:.6f}"
                    f" val_p={val_report['precision']:.6f}"
                    f" val_r={val_report['recall']:.6f}"
                    f" val_f1={val_report['f1']:.6f}")
            log.write(line + "\n")
            log.flush()
            log_lines.append(line)
            epoch_rows.append({"epoch": epoch,
                               "loss": sums["total"] / steps,
                               "task": sums["task"] / steps,
                               "semantic": sums["semantic"] / steps,
                               "val": val_report})
            if val_report["f1"] > best_f1:
                best_f1 = val_report["f1"]
                best_epoch = epoch
                best_val = val_report
                best_state = copy.deepcopy(model.state_dict())
            if cfg.early_stop_f1 is not None and best_f1 >= cfg.early_stop_f1:
                break

    model.load_state_dict(best_state)
    test_report = evaluate_model(model, test, cfg.eval_batch_size, relation_names)

    save_checkpoint(ckpt_path, model,
                    extra={"seed": cfg.seed, "best_epoch": best_epoch,
                           "config_hash": config_hash(cfg)})
    if model.cfg.task == TASK_NER:
        names_path = os.path.join(cfg.out_dir, f"tags-{run_id}.txt")
        rows = model.schema.tags
    else:
        names_path = os.path.join(cfg.out_dir, f"relations-{run_id}.txt")
        rows = relation_names
    with open(names_path, "w", encoding="utf-8") as fh:
        for i, name in enumerate(rows):
            fh.write(f"{i}\t{name}\n")

    report = {
        "task": cfg.task,
        "seed": cfg.seed,
        "config_hash": config_hash(cfg),
        "best_epoch": best_epoch,
        "val": best_val,
        "test": test_report,
        "epochs": epoch_rows,
    }
    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")

    return {
        "log_path": log_path,
        "metrics_path": metrics_path,
        "checkpoint_path": ckpt_path,
        "names_path": names_path,
        "best_epoch": best_epoch,
        "val": best_val,
        "test": test_report,
        "log_lines": log_lines,
    }


def evaluate_checkpoint(ckpt_path, data_path, batch_size: int = 64) -> dict:
    """Score a saved checkpoint on one corpus file."""
    model, _ = load_checkpoint(ckpt_path)
    samples, meta = _load_split(data_path, model.cfg.task)
    relation_names = [f"R{i}" for i in range(model.cfg.num_relation_types)]
    return evaluate_model(model, samples, batch_size, relation_names)
