import numpy as np
import pytest

from cadad.delay import DelayHyper
from cadad.diagnostics import (
    dynamics_report,
    export_congestion_timeseries,
    export_membrane_traces,
    input_congestion_u,
    overflow_sum,
    write_dynamics_csv,
)
from cadad.errors import ContractError
from cadad.network import LayerSpec, Network, NetworkSpec
from cadad.neuron import NeuronConfig

HYPER = DelayHyper(d_max=4.0, gamma=2.0, k_smooth=4, s_max=0.3, s_min=0.1, e_decay=5)


def _net(mode="dynamic", readout="mean_membrane", seed=0):
    spec = NetworkSpec(
        layers=(LayerSpec(6, 8, delay_mode=mode), LayerSpec(8, 3, delay_mode=mode)),
        n_classes=3,
        readout=readout,
    )
    return Network.init(spec, NeuronConfig(leak=0.6), HYPER, seed=seed, w_gain=2.0)


def _frames(n=4, t=20, c=6, seed=0, p=0.3):
    rng = np.random.default_rng(seed)
    return (rng.random((n, t, c)) < p).astype(float)


def test_congestion_u_hand_case():
    # two neurons, drive = |w| @ x per step; peak picked per neuron then summed
    w = np.array([[1.0, -2.0], [0.5, 0.5]])
    x = np.zeros((3, 2))
    x[0] = [1.0, 0.0]  # drives: 1.0, 0.5
    x[1] = [0.0, 1.0]  # drives: 2.0, 0.5
    x[2] = [1.0, 1.0]  # drives: 3.0, 1.0
    assert input_congestion_u(w, x) == pytest.approx(4.0)


def test_congestion_u_sums_over_batch():
    w = np.array([[1.0]])
    x = np.ones((5, 3, 1))
    assert input_congestion_u(w, x) == pytest.approx(5.0)


def test_congestion_u_shape_mismatch():
    with pytest.raises(ContractError):
        input_congestion_u(np.ones((2, 3)), np.ones((4, 2)))


def test_overflow_hand_case():
    v = np.array([0.5, 1.5, 2.0, -3.0])
    assert overflow_sum(v, 1.0) == pytest.approx(0.5 + 1.0)
    assert overflow_sum(v, 5.0) == 0.0


def test_dynamics_report_totals_and_layers():
    net = _net()
    rows = dynamics_report(net, _frames(), epoch=0)
    # mean_membrane readout: only the hidden layer spikes
    assert [r.layer for r in rows] == [0, -1]
    assert rows[-1].u == pytest.approx(sum(r.u for r in rows[:-1]))
    assert rows[-1].overflow == pytest.approx(sum(r.overflow for r in rows[:-1]))
    assert rows[-1].spikes == pytest.approx(sum(r.spikes for r in rows[:-1]))
    for r in rows:
        assert r.u >= 0.0 and r.overflow >= 0.0 and r.spikes >= 0.0
        if r.spikes > 0:
            assert r.overflow_per_spike == pytest.approx(r.overflow / r.spikes)


def test_dynamics_report_includes_spiking_readout():
    rows = dynamics_report(_net(readout="spike_count"), _frames(), epoch=0)
    assert [r.layer for r in rows] == [0, 1, -1]


def test_dynamics_report_batching_invariance():
    net = _net(seed=3)
    frames = _frames(n=7, seed=4)
    a = dynamics_report(net, frames, epoch=1, batch_size=2)
    b = dynamics_report(net, frames, epoch=1, batch_size=7)
    for ra, rb in zip(a, b):
        assert ra.u == pytest.approx(rb.u, rel=1e-12)
        assert ra.overflow == pytest.approx(rb.overflow, rel=1e-12)
        assert ra.spikes == rb.spikes


def test_dynamics_report_silent_input():
    rows = dynamics_report(_net(), np.zeros((2, 10, 6)), epoch=0)
    for r in rows:
        assert r.u == 0.0 and r.overflow == 0.0 and r.spikes == 0.0
        assert r.overflow_per_spike == 0.0


def test_dynamics_report_rejects_bad_slice():
    net = _net()
    with pytest.raises(ContractError):
        dynamics_report(net, np.zeros((10, 6)), epoch=0)
    with pytest.raises(ContractError):
        dynamics_report(net, np.zeros((0, 10, 6)), epoch=0)


def test_dynamics_report_discretize_changes_lookup():
    net = _net(seed=5)
    net.delays[0].d_base[...] = 1.5  # halfway: continuous and rounded reads differ
    frames = _frames(seed=6)
    cont = dynamics_report(net, frames, epoch=0, discretize=False)
    disc = dynamics_report(net, frames, epoch=0, discretize=True)
    assert cont[-1].u != disc[-1].u


def test_write_dynamics_csv(tmp_path):
    rows = dynamics_report(_net(), _frames(), epoch=0)
    path = tmp_path / "dyn.csv"
    write_dynamics_csv(path, rows, note="epoch=0")
    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines[0] == "# cadad dynamics epoch=0"
    assert lines[1] == "layer,u,overflow,spikes,overflow_per_spike"
    assert lines[-1].startswith("total,")
    assert len(lines) == 2 + len(rows)


def test_membrane_traces_rows_and_file(tmp_path):
    net = _net(seed=7)
    frame = _frames(n=1, seed=8)[0]
    rows = export_membrane_traces(
        net, frame, layer=0, epoch=0, top_k=3, out_dir=str(tmp_path), run_id="m"
    )
    t_steps = frame.shape[0]
    assert len(rows) == t_steps * 3
    neurons = {r[1] for r in rows}
    assert len(neurons) == 3
    for t, nid, v_pre, spike, overflow in rows:
        assert spike in (0.0, 1.0)
        assert overflow == pytest.approx(max(v_pre - 1.0, 0.0))
    lines = open(tmp_path / "m_layer0_membrane.csv", encoding="utf-8").read().splitlines()
    assert lines[1] == "t,neuron,v_pre,spike,overflow"
    assert len(lines) == 2 + len(rows)


def test_membrane_traces_pick_spikiest_neurons():
    net = _net(seed=9)
    frame = _frames(n=1, seed=10, p=0.5)[0]
    rows = export_membrane_traces(net, frame, layer=0, epoch=0, top_k=2)
    _, cache = net.forward(frame[None], 0)
    counts = cache.layers[0].spikes[0].sum(axis=0)
    chosen = {r[1] for r in rows}
    worst_chosen = min(counts[n] for n in chosen)
    best_skipped = max((c for n, c in enumerate(counts) if n not in chosen), default=0.0)
    assert worst_chosen >= best_skipped


def test_membrane_traces_reject_non_spiking_layer():
    with pytest.raises(ContractError):
        export_membrane_traces(_net(), _frames(n=1)[0], layer=1, epoch=0)


def test_congestion_timeseries_per_dynamic_layer(tmp_path):
    net = _net(seed=11)
    frame = _frames(n=1, seed=12)[0]
    out = export_congestion_timeseries(net, frame, epoch=0, out_dir=str(tmp_path), run_id="c")
    assert set(out) == {0, 1}
    for i, rows in out.items():
        assert len(rows) == frame.shape[0]
        for t, a_raw, a_smooth, d_shift, lo, hi in rows:
            assert 0.0 <= a_raw <= 1.0
            assert 0.0 <= a_smooth <= 1.0
            assert 0.0 <= lo <= hi <= HYPER.d_max
        assert (tmp_path / f"c_layer{i}_congestion.csv").exists()


def test_congestion_timeseries_warns_without_dynamic_layers(caplog):
    import logging

    net = _net(mode="static")
    with caplog.at_level(logging.WARNING, logger="cadad.diagnostics"):
        out = export_congestion_timeseries(net, _frames(n=1)[0], epoch=0)
    assert out == {}
    assert "no dynamic-delay layers" in caplog.text
