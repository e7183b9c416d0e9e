"""Finite-difference gradient audits.

Two suites: the interpolation-read delay gradient against elementwise
central differences (the read is piecewise linear in each delay, so central
differences are exact up to float roundoff), and the full-network analytic
backward pass against per-parameter central differences, run in the relaxed
forward mode where the spike is the exact antiderivative of the surrogate
so the loss is differentiable everywhere.

Relative errors use max(|analytic|, |fd|, FLOOR) in the denominator; the
floor keeps roundoff on near-zero entries from masquerading as relative
error.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .delay import DelayHyper, delayed_read, delayed_read_backward
from .neuron import NeuronConfig
from .network import LayerSpec, Network, NetworkSpec
from .seeding import rng_for
from .trainer import softmax_cross_entropy

REL_FLOOR = 1e-4


def rel_err(analytic, fd) -> float:
    a = np.asarray(analytic, dtype=float)
    f = np.asarray(fd, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), REL_FLOOR)
    return float((np.abs(a - f) / denom).max())


@dataclass(frozen=True)
class GradcheckReport:
    name: str
    max_rel_err: float
    tolerance: float
    n_checks: int
    elapsed_s: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < self.tolerance


def delay_read_gradcheck(
    n_signals: int = 50,
    t_steps: int = 64,
    channels: int = 8,
    h: float = 1e-5,
    tolerance: float = 1e-4,
    seed: int = 0,
) -> GradcheckReport:
    """Delay gradient of the interpolated read vs central differences.

    Signals are real-valued; delays sit away from integer points so the
    probe stays inside one linear piece.
    """
    start = time.perf_counter()
    worst = 0.0
    checks = 0
    for k in range(n_signals):
        rng = rng_for(seed, f"delay-gradcheck:{k}")
        signal = rng.standard_normal((t_steps, channels))
        d = rng.integers(0, 9, size=(t_steps, channels)) + rng.uniform(
            0.05, 0.95, size=(t_steps, channels)
        )
        upstream = rng.standard_normal((t_steps, channels))
        _, grad_d = delayed_read_backward(upstream, signal, d)
        # the read at (t, j) depends only on d[t, j], so two full perturbed
        # reads give every elementwise central difference at once
        fd = upstream * (delayed_read(signal, d + h) - delayed_read(signal, d - h)) / (2.0 * h)
        worst = max(worst, rel_err(grad_d, fd))
        checks += grad_d.size
    return GradcheckReport(
        name="delay-read",
        max_rel_err=worst,
        tolerance=tolerance,
        n_checks=checks,
        elapsed_s=time.perf_counter() - start,
    )


def _build_gradcheck_net(
    seed: int,
    channels: int,
    hidden: int,
    n_classes: int,
    mode: str,
    congestion_grad: bool,
    d_max: float,
):
    spec = NetworkSpec(
        layers=(
            LayerSpec(n_in=channels, n_out=hidden, delay_mode=mode),
            LayerSpec(n_in=hidden, n_out=n_classes, delay_mode=mode),
        ),
        n_classes=n_classes,
        readout="mean_membrane",
    )
    hyper = DelayHyper(
        d_max=d_max,
        gamma=1.5,
        k_smooth=4,
        s_max=0.3,
        s_min=0.3,
        e_decay=0,
        nonlinearity="tanh",
        congestion_grad=congestion_grad,
    )
    neuron = NeuronConfig(leak=0.6, v_threshold=1.0, v_reset=0.0, surrogate_slope=5.0)
    net = Network.init(spec, neuron, hyper, seed=seed, w_gain=2.0)
    # keep base delays off integer and half-integer points and clear of the
    # clamp bounds so finite differences stay inside one smooth piece
    for li, dp in enumerate(net.delays):
        r = rng_for(seed, f"gradcheck-dbase:{li}")
        dp.d_base[...] = r.integers(1, int(d_max) - 1, size=dp.n_channels) + r.uniform(
            0.15, 0.35, size=dp.n_channels
        )
    return net


def network_gradcheck(
    seed: int = 0,
    channels: int = 8,
    hidden: int = 16,
    t_steps: int = 32,
    n_classes: int = 2,
    batch: int = 2,
    h: float = 1e-5,
    tolerance: float = 1e-3,
    mode: str = "static",
    congestion_grad: bool = False,
    d_max: float = 6.0,
) -> GradcheckReport:
    """Analytic weight and d_base gradients vs central differences.

    Runs the relaxed forward (smooth spikes) so the hard threshold does not
    break differentiability; the backward pass under test is the production
    one.
    """
    start = time.perf_counter()
    net = _build_gradcheck_net(seed, channels, hidden, n_classes, mode, congestion_grad, d_max)
    rng = rng_for(seed, "gradcheck-data")
    x = rng.uniform(0.0, 1.0, size=(batch, t_steps, channels))
    labels = rng.integers(0, n_classes, size=batch)
    epoch = 0

    def loss_fn() -> float:
        scores, _ = net.forward(x, epoch, training=False, relaxed=True)
        loss, _ = softmax_cross_entropy(scores, labels)
        return loss

    scores, cache = net.forward(x, epoch, training=False, relaxed=True)
    _, g_scores = softmax_cross_entropy(scores, labels)
    grads = net.backward(cache, g_scores)

    worst = 0.0
    checks = 0

    def probe(param: np.ndarray, analytic: np.ndarray):
        nonlocal worst, checks
        flat = param.reshape(-1)
        fd = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn()
            flat[i] = orig - h
            lm = loss_fn()
            flat[i] = orig
            fd[i] = (lp - lm) / (2.0 * h)
        worst = max(worst, rel_err(analytic.reshape(-1), fd))
        checks += flat.size

    for w, gw in zip(net.weights, grads.weights):
        probe(w, gw)
    if mode != "none":
        for dp, gd in zip(net.delays, grads.d_base):
            probe(dp.d_base, gd)
    return GradcheckReport(
        name=f"network-{mode}" + ("+congestion" if congestion_grad else ""),
        max_rel_err=worst,
        tolerance=tolerance,
        n_checks=checks,
        elapsed_s=time.perf_counter() - start,
    )
