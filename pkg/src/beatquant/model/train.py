"""Teacher-forced cross-entropy training with early stopping."""

from __future__ import annotations

import copy
import json
import logging
import math
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..config import AugmentConfig, TrainConfig
from ..dataprep import TrainingExample, augment
from ..tokenizer import PAD
from .adafactor import Adafactor
from .checkpoint import Checkpoint, save_checkpoint
from .transformer import ModelConfig, Seq2Seq, sequence_loss, token_accuracy

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: Checkpoint):
        super().__init__(message)
        self.checkpoint = checkpoint


def pad_batch(seqs: Sequence[Sequence[int]]) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), PAD, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = torch.tensor(list(s), dtype=torch.long)
    return out


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> Adafactor:
    return Adafactor(
        model.parameters(),
        lr=None if cfg.relative_step else cfg.lr,
        eps1=cfg.eps1,
        eps2=cfg.eps2,
        clip_threshold=cfg.clip_threshold,
        decay_rate=cfg.decay_rate,
        relative_step=cfg.relative_step,
        scale_parameter=cfg.scale_parameter,
        warmup_init=cfg.warmup_init,
    )


def optimizer_tensors(model: torch.nn.Module, opt: Adafactor) -> dict[str, torch.Tensor]:
    out = {}
    for name, p in model.named_parameters():
        for key, value in opt.state.get(p, {}).items():
            out[f"{name}/{key}"] = value.clone() if torch.is_tensor(value) else torch.tensor(value, dtype=torch.int64)
    return out


def load_optimizer_tensors(model: torch.nn.Module, opt: Adafactor, tensors: dict[str, torch.Tensor]) -> None:
    params = dict(model.named_parameters())
    for full, value in tensors.items():
        name, key = full.rsplit("/", 1)
        state = opt.state[params[name]]
        state[key] = int(value.item()) if key == "step" else value.clone().to(params[name].dtype)


def evaluate_loss(model: Seq2Seq, examples: Sequence[TrainingExample], batch_size: int = 32) -> tuple[float, float]:
    """Token-weighted mean loss and teacher-forced accuracy, eval mode."""
    model.eval()
    total, count, correct = 0.0, 0, 0
    with torch.no_grad():
        for i in range(0, len(examples), batch_size):
            chunk = examples[i:i + batch_size]
            src = pad_batch([e.input_tokens.ids for e in chunk])
            tgt = pad_batch([e.target_tokens.ids for e in chunk])
            logits = model(src, tgt)
            n = int((tgt != PAD).sum())
            total += sequence_loss(logits, tgt).item() * n
            c, _ = token_accuracy(logits, tgt)
            correct += c
            count += n
    return total / max(count, 1), correct / max(count, 1)


def train(
    train_examples: Sequence[TrainingExample],
    val_examples: Sequence[TrainingExample],
    model_cfg: ModelConfig | None = None,
    train_cfg: TrainConfig | None = None,
    augment_cfg: AugmentConfig | None = None,
    out_dir: str | Path | None = None,
    resume: Checkpoint | None = None,
) -> Checkpoint:
    """Train and return the checkpoint with the best validation loss.

    With ``out_dir`` the best and last checkpoints are written there as
    ``best.ckpt`` / ``last.ckpt`` together with ``metrics.jsonl``.
    """
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    if not train_examples:
        raise ValueError("no training examples")
    if not val_examples:
        raise ValueError("validation split is empty")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(train_cfg.seed)
    model = Seq2Seq(model_cfg)
    opt = make_optimizer(model, train_cfg)
    step, start_epoch, history = 0, 0, []
    if resume is not None:
        model.load_state_dict(resume.params)
        load_optimizer_tensors(model, opt, resume.optimizer)
        step, start_epoch, history = resume.step, resume.epoch, list(resume.history)

    best_val = min((h["val_loss"] for h in history), default=math.inf)
    best_state = copy.deepcopy(model.state_dict())
    best_step, best_epoch = step, start_epoch
    stale = 0
    if history:
        best_idx = min(range(len(history)), key=lambda i: history[i]["val_loss"])
        stale = len(history) - 1 - best_idx

    def snapshot(state, at_step, at_epoch, with_optim=False) -> Checkpoint:
        return Checkpoint(
            model_cfg,
            {k: v.detach().clone() for k, v in state.items()},
            at_step, at_epoch, list(history),
            optimizer_tensors(model, opt) if with_optim else {},
            {"train_config": vars(train_cfg).copy()},
        )

    metrics_fh = open(out / "metrics.jsonl", "a", encoding="utf-8") if out is not None else None
    try:
        for epoch in range(start_epoch, train_cfg.max_epochs):
            if train_cfg.max_steps is not None and step >= train_cfg.max_steps:
                break
            rng = np.random.default_rng([train_cfg.seed, epoch])
            torch.manual_seed(train_cfg.seed * 100_003 + epoch)
            order = rng.permutation(len(train_examples))
            model.train()
            epoch_loss, epoch_tokens = 0.0, 0
            for b in range(0, len(order), train_cfg.batch_size):
                if train_cfg.max_steps is not None and step >= train_cfg.max_steps:
                    break
                batch = [train_examples[i] for i in order[b:b + train_cfg.batch_size]]
                if augment_cfg is not None:
                    batch = [augment(e, augment_cfg, rng) for e in batch]
                src = pad_batch([e.input_tokens.ids for e in batch])
                tgt = pad_batch([e.target_tokens.ids for e in batch])
                loss = sequence_loss(model(src, tgt), tgt)
                if not torch.isfinite(loss):
                    ckpt = snapshot(model.state_dict(), step, epoch, with_optim=True)
                    if out is not None:
                        save_checkpoint(out / "last.ckpt", ckpt)
                    raise TrainingDiverged(f"non-finite loss at step {step}", ckpt)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                step += 1
                n = int((tgt != PAD).sum())
                epoch_loss += loss.item() * n
                epoch_tokens += n

            val_loss, val_acc = evaluate_loss(model, val_examples)
            record = {
                "epoch": epoch + 1,
                "step": step,
                "train_loss": epoch_loss / max(epoch_tokens, 1),
                "val_loss": val_loss,
                "val_accuracy": val_acc,
            }
            history.append(record)
            log.info("epoch %(epoch)d step %(step)d train %(train_loss).4f val %(val_loss).4f", record)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(record, sort_keys=True) + "\n")
                metrics_fh.flush()

            if val_loss < best_val:
                best_val, stale = val_loss, 0
                best_state = copy.deepcopy(model.state_dict())
                best_step, best_epoch = step, epoch + 1
                if out is not None:
                    save_checkpoint(out / "best.ckpt", snapshot(best_state, best_step, best_epoch))
            else:
                stale += 1
            if out is not None:
                save_checkpoint(out / "last.ckpt", snapshot(model.state_dict(), step, epoch + 1, with_optim=True))
            if stale >= train_cfg.patience:
                log.info("early stop: no validation improvement for %d epochs", stale)
                break
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    return snapshot(best_state, best_step, best_epoch)
