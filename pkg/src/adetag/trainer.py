"""Optimization loop: per-sample tapes accumulated over a batch, averaged,
one Adagrad step; validation after every epoch keeps the best checkpoint
by the macro-average of the two task F1s."""

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tape
from .data import build_vocabs
from .evaluator import evaluate
from .network import MODE_FREE, MODE_TEACHER, Model, save_checkpoint


class DivergenceError(RuntimeError):
    """Raised when a batch produces a non-finite loss."""


def init_params(config, vocab, rng=None, pretrained_path=None):
    """Fresh model with every trainable tensor i.i.d. uniform over the
    config init range (one seeded stream, fixed allocation order), except
    pretrained embedding rows which come from the file."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    return Model(config, vocab, rng, pretrained_path=pretrained_path)


def zero_grads(params):
    for tensor in params.values():
        tensor.zero_grad()


class Adagrad:
    """Per-parameter squared-gradient accumulators, lazily allocated."""

    def __init__(self, epsilon=1e-8):
        self.epsilon = epsilon
        self.acc = {}

    def step(self, named_params, lr):
        """acc += g^2; p -= lr * g / (sqrt(acc) + eps). Tensors without a
        gradient (or frozen ones) are untouched."""
        for name, tensor in named_params.items():
            if not tensor.requires_grad or tensor.grad is None:
                continue
            g = tensor.grad
            acc = self.acc.get(name)
            if acc is None:
                acc = self.acc[name] = np.zeros_like(tensor.data)
            acc += g * g
            tensor.data -= lr * g / (np.sqrt(acc) + self.epsilon)


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_metric: float
    checkpoint_prefix: str
    model: Model


def train(config, train_samples, val_samples, out_dir, log=None):
    """Run the full loop; writes history.jsonl and the best checkpoint
    under out_dir. All randomness flows from one generator seeded with
    config.seed, so identical inputs reproduce identical histories."""
    if not train_samples or not val_samples:
        raise ValueError("train and validation sets must be non-empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(config.seed)
    vocab = build_vocabs(train_samples)
    model = init_params(config, vocab, rng=rng,
                        pretrained_path=config.embeddings_path or None)
    optimizer = Adagrad(config.adagrad_epsilon)
    mode = MODE_TEACHER if config.teacher_forcing else MODE_FREE

    prefix = str(out_dir / "checkpoint")
    history = []
    best_metric, best_epoch = -1.0, 0
    with open(out_dir / "history.jsonl", "w", encoding="utf-8") as hist_fh:
        for epoch in range(1, config.max_epochs + 1):
            started = time.monotonic()
            order = rng.permutation(len(train_samples))
            epoch_losses = []
            for lo in range(0, len(order), config.batch_size):
                batch = [train_samples[i] for i in order[lo:lo + config.batch_size]]
                batch_losses = []
                for sample in batch:
                    with Tape() as tape:
                        trace = model.forward(sample, mode=mode, rng=rng)
                        loss = model.sample_loss(trace, sample)
                    tape.backward(loss)
                    batch_losses.append(loss.item())
                if not np.all(np.isfinite(batch_losses)):
                    bad = [s.id for s in batch]
                    raise DivergenceError(f"non-finite loss in batch {bad}")
                inv = 1.0 / len(batch)
                for tensor in model.trainable_parameters().values():
                    if tensor.grad is not None:
                        tensor.grad *= inv
                optimizer.step(model.trainable_parameters(), config.learning_rate)
                zero_grads(model.parameters())
                epoch_losses.extend(batch_losses)

            report = evaluate(model, val_samples)
            metric = (report.er[2] + report.ade[2]) / 2.0
            row = {
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)),
                "val_er_p": report.er[0], "val_er_r": report.er[1], "val_er_f1": report.er[2],
                "val_ade_p": report.ade[0], "val_ade_r": report.ade[1], "val_ade_f1": report.ade[2],
                "seconds": time.monotonic() - started,
            }
            history.append(row)
            hist_fh.write(json.dumps(row) + "\n")
            hist_fh.flush()
            if log:
                log(f"epoch {epoch}: loss {row['train_loss']:.4f} "
                    f"val ER F1 {row['val_er_f1']:.2f} ADE F1 {row['val_ade_f1']:.2f}")

            if metric > best_metric:
                best_metric, best_epoch = metric, epoch
                save_checkpoint(prefix, model)
            elif config.patience and epoch - best_epoch >= config.patience:
                if log:
                    log(f"early stop at epoch {epoch} (best was {best_epoch})")
                break

    return TrainResult(history=history, best_epoch=best_epoch,
                       best_metric=best_metric, checkpoint_prefix=prefix,
                       model=model)
