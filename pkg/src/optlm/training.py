"""Training loop: epochs, gradient accumulation, early stopping, resume.

Validation uses mean per-token loss; training stops once it fails to improve
for a fixed number of consecutive evaluations. Checkpoints carry the model,
optimizer, RNG state, and progress counters, so a resumed run continues with
exactly the losses the uninterrupted run would have produced.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .data import DatasetBundle, collate_batch, iter_batches
from .decoding import DecoderRules
from .errors import NonFiniteLoss
from .model import (
    IGNORE_INDEX,
    MathLM,
    ModelConfig,
    OptimConfig,
    make_optimizer,
    masked_loss,
    save_checkpoint,
)


@dataclass
class TrainHistory:
    steps: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    best_val: float = math.inf
    stopped_early: bool = False

    def log_line(self, record: dict) -> str:
        return json.dumps(record)


def evaluate_loss(
    model: MathLM, rules: DecoderRules, sequences, batch_size: int = 16
) -> float:
    """Mean per-token validation loss over ``sequences``."""
    model.eval()
    total = 0.0
    count = 0
    with torch.no_grad():
        for start in range(0, len(sequences), batch_size):
            batch = collate_batch(sequences[start:start + batch_size], rules)
            logits = model.forward_ids(
                batch["ids"], batch["type_tags"], batch["bins"]
            )
            loss = masked_loss(logits, batch["targets"], batch["allowed"])
            n = int((batch["targets"] != IGNORE_INDEX).sum())
            total += loss.item() * n
            count += n
    model.train()
    return total / count if count else math.inf


def should_stop(val_history: list[float], patience: int) -> bool:
    """True once the last ``patience`` evaluations failed to beat the best
    value seen before them."""
    if len(val_history) <= patience:
        return False
    best_before = min(val_history[: -patience])
    return all(v >= best_before for v in val_history[-patience:])


def train_model(
    model: MathLM,
    bundle: DatasetBundle,
    optim: OptimConfig,
    run_dir: str | Path | None = None,
    optimizer: torch.optim.Optimizer | None = None,
    start_epoch: int = 0,
    history: TrainHistory | None = None,
    max_steps: int = 0,
    extra_meta: dict | None = None,
    log=None,
) -> TrainHistory:
    """Train on the bundle's train split with early stopping on val loss.

    ``max_steps`` (if nonzero) bounds optimizer steps for quick runs. Pass
    ``optimizer``/``start_epoch``/``history`` to resume from a checkpoint.
    ``extra_meta`` is merged into every checkpoint payload.
    """
    rules = bundle.rules()
    train_seqs = bundle.splits.get("train", [])
    val_seqs = bundle.splits.get("val", [])
    optimizer = optimizer or make_optimizer(model, optim)
    history = history or TrainHistory()
    run_dir = Path(run_dir) if run_dir else None
    if run_dir:
        run_dir.mkdir(parents=True, exist_ok=True)
    log_fh = open(run_dir / "log.jsonl", "a") if run_dir else None

    def emit(record: dict):
        if log_fh:
            log_fh.write(json.dumps(record) + "\n")
            log_fh.flush()
        if log:
            log(record)

    def _progress_extra(epoch: int) -> dict:
        payload = _progress(epoch, history)
        payload.update(extra_meta or {})
        return payload

    step = history.steps[-1]["step"] if history.steps else 0
    val_losses = [e["val_loss"] for e in history.evals]
    try:
        for epoch in range(start_epoch, optim.max_epochs):
            pending = 0
            for batch in iter_batches(
                train_seqs, rules, optim.batch_size,
                seed=model.config.seed + epoch,
            ):
                logits = model.forward_ids(
                    batch["ids"], batch["type_tags"], batch["bins"]
                )
                loss = masked_loss(
                    logits, batch["targets"], batch["allowed"]
                ) / optim.grad_accum
                if not math.isfinite(loss.item()):
                    raise NonFiniteLoss(f"loss is {loss.item()}")
                loss.backward()
                pending += 1
                if pending == optim.grad_accum:
                    optimizer.step()
                    optimizer.zero_grad(set_to_none=True)
                    pending = 0
                    step += 1
                    record = {
                        "step": step,
                        "epoch": epoch,
                        "loss": loss.item() * optim.grad_accum,
                        "lr": optim.lr,
                    }
                    history.steps.append(record)
                    emit(record)
                    if max_steps and step >= max_steps:
                        break
            if pending:
                optimizer.step()
                optimizer.zero_grad(set_to_none=True)
                pending = 0
                step += 1
            val_loss = (
                evaluate_loss(model, rules, val_seqs) if val_seqs else math.nan
            )
            eval_record = {"step": step, "epoch": epoch, "val_loss": val_loss}
            history.evals.append(eval_record)
            emit(eval_record)
            if val_seqs:
                val_losses.append(val_loss)
                if val_loss < history.best_val:
                    history.best_val = val_loss
                    if run_dir:
                        save_checkpoint(
                            run_dir / "best.pt", model, optimizer,
                            extra=_progress_extra(epoch),
                        )
                if run_dir:
                    save_checkpoint(
                        run_dir / "last.pt", model, optimizer,
                        extra=_progress_extra(epoch),
                    )
                if should_stop(val_losses, optim.patience):
                    history.stopped_early = True
                    break
            elif run_dir:
                save_checkpoint(
                    run_dir / "last.pt", model, optimizer,
                    extra=_progress_extra(epoch),
                )
            if max_steps and step >= max_steps:
                break
    finally:
        if log_fh:
            log_fh.close()
    return history


def _progress(epoch: int, history: TrainHistory) -> dict:
    return {
        "epoch": epoch,
        "history": {
            "steps": history.steps,
            "evals": history.evals,
            "best_val": history.best_val,
            "stopped_early": history.stopped_early,
        },
    }


def history_from_checkpoint(payload: dict) -> tuple[int, TrainHistory]:
    """(next epoch, restored history) from a checkpoint's progress record."""
    raw = payload.get("history", {})
    history = TrainHistory(
        steps=list(raw.get("steps", [])),
        evals=list(raw.get("evals", [])),
        best_val=raw.get("best_val", math.inf),
        stopped_early=raw.get("stopped_early", False),
    )
    return payload.get("epoch", -1) + 1, history
