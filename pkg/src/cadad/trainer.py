"""Training loop: two-group Adam, LR schedules, logging, checkpointing.

Weights follow a one-cycle schedule (cosine warmup to lr_w over the first
30% of steps, cosine decay to lr_w/1e4). The delay group follows a
per-epoch cosine decay from lr_delay to 0 and never receives weight decay;
d_base is projected back into [0, d_max] after every step. Gradients are
clipped by global norm across both groups before the updates.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .delay import anneal_scale
from .diagnostics import input_congestion_u
from .errors import ConfigError, ContractError, NumericsError
from .network import Gradients, Network
from .seeding import rng_for


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int = 32
    lr_w: float = 1e-3
    lr_delay: float = 1e-1
    weight_decay: float = 1e-5
    seed: int = 0
    eval_every: int = 1
    grad_clip: float = 10.0
    onecycle_warmup: float = 0.3
    onecycle_div_start: float = 25.0
    onecycle_div_end: float = 1e4
    eval_discretize: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr_w <= 0.0 or self.lr_delay < 0.0:
            raise ConfigError("learning rates must be positive (lr_delay may be 0)")
        if self.weight_decay < 0.0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.grad_clip < 0.0:
            raise ConfigError(f"grad_clip must be >= 0 (0 disables), got {self.grad_clip}")
        if not 0.0 < self.onecycle_warmup < 1.0:
            raise ConfigError(f"onecycle_warmup must be in (0, 1), got {self.onecycle_warmup}")


class AdamState:
    """First/second moment buffers for one parameter group."""

    def __init__(self, params):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step = 0


def adam_step(
    params,
    grads,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """In-place Adam update with decoupled weight decay.

    Zero gradients with zero weight decay leave parameters untouched.
    """
    if len(params) != len(grads):
        raise ContractError("params and grads must pair up")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericsError("non-finite gradient in optimizer step")
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay > 0.0:
            update = update + weight_decay * p
        p -= lr * update


def onecycle_lr(
    step: int,
    total_steps: int,
    lr_max: float,
    warmup_frac: float = 0.3,
    div_start: float = 25.0,
    div_end: float = 1e4,
) -> float:
    """Cosine warmup from lr_max/div_start to lr_max, cosine decay to lr_max/div_end."""
    if total_steps < 1:
        raise ContractError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step < total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps})")
    peak = int(round(warmup_frac * total_steps))
    peak = min(max(peak, 0), total_steps - 1)
    start = lr_max / div_start
    end = lr_max / div_end
    if step <= peak:
        if peak == 0:
            return lr_max
        u = step / peak
        return start + (lr_max - start) * 0.5 * (1.0 - math.cos(math.pi * u))
    tail = total_steps - 1 - peak
    u = (step - peak) / tail
    return end + (lr_max - end) * 0.5 * (1.0 + math.cos(math.pi * u))


def cosine_delay_lr(epoch: int, epochs: int, lr0: float) -> float:
    """Per-epoch cosine decay from lr0 toward 0 at the final epoch."""
    if epochs < 1:
        raise ContractError(f"epochs must be >= 1, got {epochs}")
    if not 0 <= epoch < epochs:
        raise ContractError(f"epoch {epoch} outside [0, {epochs})")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / epochs))


def softmax_cross_entropy(scores, labels):
    """Mean cross entropy and dL/dscores. scores [B, K], labels [B] ints."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    B, K = scores.shape
    if labels.shape != (B,):
        raise ContractError(f"labels shape {labels.shape} does not match batch {B}")
    z = scores - scores.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = float(-logp[np.arange(B), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(B), labels] -= 1.0
    return loss, grad / B


def _batches(n: int, batch_size: int, order=None):
    idx = np.arange(n) if order is None else order
    for lo in range(0, n, batch_size):
        yield idx[lo : lo + batch_size]


def evaluate(
    net: Network,
    frames,
    labels,
    epoch: int,
    batch_size: int = 64,
    discretize: bool = False,
    collect_u: bool = False,
):
    """Accuracy, mean loss and (optionally) per-spiking-layer congestion u."""
    frames = np.asarray(frames, dtype=float)
    labels = np.asarray(labels)
    n = frames.shape[0]
    if n == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    correct = 0
    loss_sum = 0.0
    u_sums = None
    for idx in _batches(n, batch_size):
        scores, cache = net.forward(frames[idx], epoch, training=False, discretize=discretize)
        loss, _ = softmax_cross_entropy(scores, labels[idx])
        loss_sum += loss * len(idx)
        correct += int((scores.argmax(axis=1) == labels[idx]).sum())
        if collect_u:
            if u_sums is None:
                u_sums = [0.0] * len(net.spec.layers)
            for li, lc in enumerate(cache.layers):
                if lc.spiking:
                    u_sums[li] += input_congestion_u(net.weights[li], lc.x_tilde)
    return correct / n, loss_sum / n, u_sums


@dataclass
class TrainResult:
    log_rows: list
    best_eval_acc: float
    best_epoch: int
    best_params: tuple
    final_params: tuple
    checkpoint_path: Optional[str] = None
    log_path: Optional[str] = None


LOG_BASE_COLUMNS = (
    "epoch",
    "split",
    "loss",
    "accuracy",
    "s_e",
    "lr_w",
    "lr_delay",
    "mean_abs_d_shift",
)


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def write_log_csv(path, rows, n_spiking_layers: int, header_note: str = "") -> None:
    """Append-only run log; u_<i> columns are filled on eval rows."""
    cols = list(LOG_BASE_COLUMNS) + [f"u_{i}" for i in range(n_spiking_layers)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header_note:
            fh.write(f"# {header_note}\n")
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(c, "")) for c in cols) + "\n")


def train(
    train_frames,
    train_labels,
    eval_frames,
    eval_labels,
    net: Network,
    cfg: TrainConfig,
    out_dir: Optional[str] = None,
    run_id: str = "run",
    header_note: str = "",
    extra_meta: Optional[dict] = None,
) -> TrainResult:
    """Fit `net` in place; returns the log and the best-eval parameter copy."""
    train_frames = np.asarray(train_frames, dtype=float)
    train_labels = np.asarray(train_labels)
    n = train_frames.shape[0]
    if n == 0:
        raise ContractError("cannot train on an empty dataset")
    n_batches = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = max(cfg.epochs * n_batches, 1)
    shuffle_rng = rng_for(cfg.seed, "shuffle")
    dropout_rng = rng_for(cfg.seed, "dropout")

    weight_state = AdamState(net.weights)
    delay_arrays = [dp.d_base for dp in net.delays if dp.mode != "none"]
    delay_state = AdamState(delay_arrays)

    hyper = net.delays[0]
    n_spiking = sum(net.layer_is_spiking(i) for i in range(len(net.spec.layers)))
    rows = []
    best_acc = -1.0
    best_epoch = 0
    best_params = net.copy_params()
    gstep = 0
    last_lr_w = onecycle_lr(
        0, total_steps, cfg.lr_w, cfg.onecycle_warmup, cfg.onecycle_div_start, cfg.onecycle_div_end
    )
    for epoch in range(cfg.epochs):
        lr_delay = cosine_delay_lr(epoch, cfg.epochs, cfg.lr_delay)
        s_e = anneal_scale(epoch, hyper.s_max, hyper.s_min, hyper.e_decay)
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        shift_sum = 0.0
        shift_count = 0
        for idx in _batches(n, cfg.batch_size, order):
            lr_w = onecycle_lr(
                gstep,
                total_steps,
                cfg.lr_w,
                cfg.onecycle_warmup,
                cfg.onecycle_div_start,
                cfg.onecycle_div_end,
            )
            last_lr_w = lr_w
            gstep += 1
            scores, cache = net.forward(
                train_frames[idx], epoch, training=True, rng=dropout_rng
            )
            loss, g_scores = softmax_cross_entropy(scores, train_labels[idx])
            if not math.isfinite(loss):
                raise NumericsError(f"non-finite training loss at epoch {epoch}")
            grads = net.backward(cache, g_scores)
            if cfg.grad_clip > 0.0:
                norm = grads.global_norm()
                if norm > cfg.grad_clip:
                    grads.scale_(cfg.grad_clip / norm)
            adam_step(net.weights, grads.weights, weight_state, lr_w, cfg.weight_decay)
            delay_grads = [g for g in grads.d_base if g is not None]
            if delay_arrays:
                adam_step(delay_arrays, delay_grads, delay_state, lr_delay, 0.0)
                for dp in net.delays:
                    dp.project_()
            loss_sum += loss * len(idx)
            correct += int((scores.argmax(axis=1) == train_labels[idx]).sum())
            for lc in cache.layers:
                if lc.trace is not None and lc.trace.scale != 0.0:
                    shift_sum += float(np.abs(lc.trace.d_shift).sum())
                    shift_count += lc.trace.d_shift.size
        rows.append(
            {
                "epoch": epoch,
                "split": "train",
                "loss": loss_sum / n,
                "accuracy": correct / n,
                "s_e": s_e,
                "lr_w": last_lr_w,
                "lr_delay": lr_delay,
                "mean_abs_d_shift": shift_sum / shift_count if shift_count else 0.0,
            }
        )
        if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            acc, eloss, u_sums = evaluate(
                net,
                eval_frames,
                eval_labels,
                epoch,
                batch_size=cfg.batch_size,
                discretize=cfg.eval_discretize,
                collect_u=True,
            )
            row = {
                "epoch": epoch,
                "split": "eval",
                "loss": eloss,
                "accuracy": acc,
                "s_e": s_e,
                "lr_w": last_lr_w,
                "lr_delay": lr_delay,
                "mean_abs_d_shift": "",
            }
            ui = 0
            for li in range(len(net.spec.layers)):
                if net.layer_is_spiking(li):
                    row[f"u_{ui}"] = u_sums[li]
                    ui += 1
            rows.append(row)
            if acc > best_acc:
                best_acc = acc
                best_epoch = epoch
                best_params = net.copy_params()

    if cfg.epochs == 0:
        acc, _, _ = evaluate(net, eval_frames, eval_labels, 0, batch_size=cfg.batch_size)
        best_acc = acc

    result = TrainResult(
        log_rows=rows,
        best_eval_acc=best_acc,
        best_epoch=best_epoch,
        best_params=best_params,
        final_params=net.copy_params(),
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, f"{run_id}_log.csv")
        write_log_csv(log_path, rows, n_spiking, header_note)
        final = net.copy_params()
        net.set_params(best_params)
        ckpt = os.path.join(out_dir, f"{run_id}_best.npz")
        extra = {"best_eval_acc": best_acc, "run_id": run_id}
        extra.update(extra_meta or {})
        net.save(ckpt, best_epoch, extra=extra)
        net.set_params(final)
        result.checkpoint_path = ckpt
        result.log_path = log_path
    return result
