"""Internal-dynamics measurements: input congestion, overflow, exports.

For a layer with weights w and delayed inputs x, the input congestion of
neuron i on one sample is u_i = max_t sum_j |w_ij| x_j(t); the layer value
is u summed over neurons and samples. Overflow is the summed threshold
excess max(0, v_pre - v_th) of the spiking layers. All exports are CSV with
a leading `# cadad ...` provenance comment and a one-line column header.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError

log = logging.getLogger(__name__)


def input_congestion_u(weights, delayed_inputs) -> float:
    """Peak absolute drive summed over neurons and leading batch axes."""
    w = np.abs(np.asarray(weights, dtype=float))
    x = np.asarray(delayed_inputs, dtype=float)
    if x.shape[-1] != w.shape[1]:
        raise ContractError(f"inputs have C={x.shape[-1]} but weights expect {w.shape[1]}")
    drive = x @ w.T  # [..., T, N]
    return float(drive.max(axis=-2).sum())


def overflow_sum(v_pre, v_threshold: float) -> float:
    """Summed threshold excess of a membrane trace."""
    v = np.asarray(v_pre, dtype=float)
    return float(np.maximum(v - v_threshold, 0.0).sum())


@dataclass(frozen=True)
class LayerDynamics:
    layer: int
    u: float
    overflow: float
    spikes: float
    overflow_per_spike: float


def dynamics_report(net, frames, epoch: int, batch_size: int = 64, discretize: bool = False):
    """Per-spiking-layer congestion/overflow over a data slice.

    Returns a list of LayerDynamics (one per spiking layer, in order) plus a
    totals entry with layer=-1. The non-spiking readout has no threshold and
    is excluded.
    """
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 3 or frames.shape[0] == 0:
        raise ContractError("need a nonempty [N, T, C] slice")
    spiking = [i for i in range(len(net.spec.layers)) if net.layer_is_spiking(i)]
    u = {i: 0.0 for i in spiking}
    over = {i: 0.0 for i in spiking}
    spk = {i: 0.0 for i in spiking}
    for lo in range(0, frames.shape[0], batch_size):
        _, cache = net.forward(
            frames[lo : lo + batch_size], epoch, training=False, discretize=discretize
        )
        for i in spiking:
            lc = cache.layers[i]
            u[i] += input_congestion_u(net.weights[i], lc.x_tilde)
            over[i] += overflow_sum(lc.v_pre, net.neuron.v_threshold)
            spk[i] += float(lc.spikes.sum())
    rows = [
        LayerDynamics(
            layer=i,
            u=u[i],
            overflow=over[i],
            spikes=spk[i],
            overflow_per_spike=over[i] / spk[i] if spk[i] > 0 else 0.0,
        )
        for i in spiking
    ]
    tu, to, ts = sum(r.u for r in rows), sum(r.overflow for r in rows), sum(r.spikes for r in rows)
    rows.append(
        LayerDynamics(
            layer=-1, u=tu, overflow=to, spikes=ts, overflow_per_spike=to / ts if ts > 0 else 0.0
        )
    )
    return rows


def _fmt(x) -> str:
    return f"{x:.10g}" if isinstance(x, float) else str(x)


def _write_csv(path, note: str, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# cadad {note}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_dynamics_csv(path, report, note: str = "") -> None:
    _write_csv(
        path,
        f"dynamics {note}".strip(),
        ("layer", "u", "overflow", "spikes", "overflow_per_spike"),
        [
            ("total" if r.layer < 0 else r.layer, r.u, r.overflow, r.spikes, r.overflow_per_spike)
            for r in report
        ],
    )


def export_membrane_traces(
    net,
    sample_frame,
    layer: int,
    epoch: int,
    top_k: int = 5,
    out_dir: Optional[str] = None,
    run_id: str = "run",
    note: str = "",
):
    """Rows (t, neuron, v_pre, spike, overflow) for the top_k spikiest neurons.

    Ties in spike count break toward the lower neuron id. Returns the rows;
    also writes `<run_id>_layer<i>_membrane.csv` when out_dir is given.
    """
    if not net.layer_is_spiking(layer):
        raise ContractError(f"layer {layer} is not spiking")
    x = np.asarray(sample_frame, dtype=float)[None, :, :]
    _, cache = net.forward(x, epoch, training=False)
    lc = cache.layers[layer]
    counts = lc.spikes[0].sum(axis=0)
    order = np.lexsort((np.arange(counts.size), -counts))[:top_k]
    rows = []
    for t in range(lc.v_pre.shape[1]):
        for nid in order:
            vp = lc.v_pre[0, t, nid]
            rows.append(
                (
                    t,
                    int(nid),
                    float(vp),
                    float(lc.spikes[0, t, nid]),
                    max(float(vp - net.neuron.v_threshold), 0.0),
                )
            )
    if out_dir is not None:
        _write_csv(
            os.path.join(out_dir, f"{run_id}_layer{layer}_membrane.csv"),
            f"membrane {note}".strip(),
            ("t", "neuron", "v_pre", "spike", "overflow"),
            rows,
        )
    return rows


def export_congestion_timeseries(
    net,
    sample_frame,
    epoch: int,
    out_dir: Optional[str] = None,
    run_id: str = "run",
    note: str = "",
):
    """Per-dynamic-layer rows (t, a_raw, a_smooth, d_shift, d_eff_min, d_eff_max).

    Returns {layer_index: rows}; warns and returns {} when no layer runs in
    dynamic mode. Writes `<run_id>_layer<i>_congestion.csv` per layer when
    out_dir is given.
    """
    x = np.asarray(sample_frame, dtype=float)[None, :, :]
    _, cache = net.forward(x, epoch, training=False)
    out = {}
    for i, lc in enumerate(cache.layers):
        if net.delays[i].mode != "dynamic":
            continue
        out[i] = lc.trace.csv_rows(sample=0)
        if out_dir is not None:
            _write_csv(
                os.path.join(out_dir, f"{run_id}_layer{i}_congestion.csv"),
                f"congestion {note}".strip(),
                ("t", "a_raw", "a_smooth", "d_shift", "d_eff_min", "d_eff_max"),
                out[i],
            )
    if not out:
        log.warning("no dynamic-delay layers; congestion export is empty")
    return out
