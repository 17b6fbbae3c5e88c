"""Deterministic training loop: seeded shuffling, gradient accumulation,
warmup/inverse-sqrt schedule, validation-loss early stopping."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .data import Example, SyntheticCorpus
from .model import Model
from .nncore import adam_step, clip_grad_norm, lr_at, no_grad, zero_grads
from .nncore.optim import LrSchedule
from .util import rng_for


class DivergedLoss(ArithmeticError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    max_steps: int = 2000
    batch_size: int = 16
    seed: int = 13
    patience_epochs: int = 5
    eval_every: int = 200
    update_freq: int = 1            # batches accumulated per optimizer step
    clip_norm: float = 10.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-8
    peak_lr: float = 0.003
    warmup_steps: int = 400

    def __post_init__(self):
        if min(self.max_steps, self.batch_size, self.patience_epochs,
               self.eval_every, self.update_freq) < 0:
            raise ValueError("training config values must be non-negative")
        if self.patience_epochs < 1:
            raise ValueError("patience_epochs must be >= 1")

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.peak_lr, self.warmup_steps)


@dataclass
class Batch:
    """Zero/PAD-padded arrays plus true lengths. Loss computation slices
    each row back to its true length, so padding never leaks into a loss."""

    examples: list[Example]
    features: np.ndarray            # [B, Tmax, 80], zero padded
    feat_lens: np.ndarray           # [B]

    @classmethod
    def build(cls, examples: list[Example]) -> "Batch":
        lens = np.array([len(ex.features) for ex in examples])
        tmax = int(lens.max())
        feats = np.zeros((len(examples), tmax, examples[0].features.shape[1]),
                         dtype=np.float32)
        for i, ex in enumerate(examples):
            feats[i, :len(ex.features)] = ex.features
        return cls(examples, feats, lens)

    def rows(self):
        for i, ex in enumerate(self.examples):
            yield self.features[i, :self.feat_lens[i]], ex


def batchify(examples: list[Example], batch_size: int, seed: int,
             epoch: int) -> list[Batch]:
    """Deterministic shuffle keyed by (seed, epoch), then fixed-size chunks."""
    order = rng_for(seed, f"shuffle-epoch{epoch}").permutation(len(examples))
    batches = []
    for start in range(0, len(examples), batch_size):
        chunk = [examples[i] for i in order[start:start + batch_size]]
        batches.append(Batch.build(chunk))
    return batches


@dataclass
class LogRow:
    step: int
    lr: float
    ce: float
    ctc: float
    tag_ce: float
    total: float
    valid_total: float | None = None


@dataclass
class TrainResult:
    model: Model
    log: list[LogRow]
    best_valid: float
    steps_run: int

    def write_log(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "lr", "ce", "ctc", "tag_ce", "total",
                             "valid_total"])
            for row in self.log:
                writer.writerow([row.step, f"{row.lr:.8f}", f"{row.ce:.6f}",
                                 f"{row.ctc:.6f}", f"{row.tag_ce:.6f}",
                                 f"{row.total:.6f}",
                                 "" if row.valid_total is None
                                 else f"{row.valid_total:.6f}"])


def validation_loss(model: Model, examples: list[Example]) -> float:
    with no_grad():
        total = 0.0
        for ex in examples:
            loss = model.forward_training(ex.features, ex.target,
                                          ex.source_tokens)
            total += loss.total_value
    return total / len(examples)


def token_accuracy(model: Model, examples: list[Example]) -> float:
    """Teacher-forced next-token accuracy over all target positions."""
    correct = total = 0
    with no_grad():
        for ex in examples:
            enc = model.encode(ex.features)
            x_in, y_out, tag_in, _ = model.encode_target(ex.target)
            tok_logits, _ = model.decoder_forward(
                x_in, tag_in if model.config.variant == "parallel_emb" else None,
                enc.states)
            pred = tok_logits.data.argmax(axis=-1)
            correct += int((pred == y_out).sum())
            total += len(y_out)
    return correct / total


def train(model: Model, corpus: SyntheticCorpus, config: TrainConfig) -> TrainResult:
    """Runs to max_steps or patience exhaustion; the returned model carries
    the best-validation parameters seen."""
    train_set = corpus.split("train")
    valid_set = corpus.split("valid")
    if not train_set:
        raise ValueError("empty training split")
    params = model.parameters()
    schedule = config.schedule()
    drop_rng = rng_for(config.seed, "dropout")

    log: list[LogRow] = []
    best_valid = math.inf
    best_state = model.state_dict()
    epochs_since_best = 0
    step = 0
    epoch = 0

    def evaluate(row: LogRow | None):
        nonlocal best_valid, best_state
        v = validation_loss(model, valid_set)
        if row is not None:
            row.valid_total = v
        if v < best_valid:
            best_valid = v
            best_state = model.state_dict()
            return True
        return False

    stop = config.max_steps == 0
    while not stop:
        batches = batchify(train_set, config.batch_size, config.seed, epoch)
        improved_this_epoch = False
        pending = 0
        n_accum = 0
        for batch in batches:
            if pending == 0:
                zero_grads(params)
                sums = dict(ce=0.0, ctc=0.0, tag_ce=0.0, total=0.0)
                n_accum = 0
            for feats, ex in batch.rows():
                rng = drop_rng if model.config.dropout > 0 else None
                loss = model.forward_training(feats, ex.target,
                                              ex.source_tokens, rng=rng)
                value = loss.total_value
                if not math.isfinite(value):
                    raise DivergedLoss(step + 1, value)
                loss.total.backward()
                sums["ce"] += loss.ce
                sums["ctc"] += loss.ctc
                sums["tag_ce"] += loss.tag_ce
                sums["total"] += value
                n_accum += 1
            pending += 1
            if pending < config.update_freq:
                continue
            pending = 0
            for p in params:
                if p.grad is not None:
                    p.t.grad = p.grad / n_accum
            clip_grad_norm(params, config.clip_norm)
            step += 1
            lr = lr_at(schedule, step)
            adam_step(params, lr, (config.adam_beta1, config.adam_beta2),
                      config.adam_eps)
            row = LogRow(step, lr, sums["ce"] / n_accum, sums["ctc"] / n_accum,
                         sums["tag_ce"] / n_accum, sums["total"] / n_accum)
            log.append(row)
            if config.eval_every and step % config.eval_every == 0:
                if evaluate(row):
                    improved_this_epoch = True
            if step >= config.max_steps:
                stop = True
                break
        if not stop or step % max(config.eval_every, 1) != 0:
            if evaluate(log[-1] if log else None):
                improved_this_epoch = True
        epoch += 1
        if improved_this_epoch:
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience_epochs:
                stop = True

    if math.isinf(best_valid):
        evaluate(log[-1] if log else None)
    model.load_state_dict(best_state)
    return TrainResult(model, log, best_valid, step)
