import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cadad.data import (
    BinningConfig,
    EventStream,
    SpikeDataset,
    SynthConfig,
    bin_dataset,
    bin_events,
    load_event_file,
    save_event_file,
    synth_coincidence_task,
    synth_datasets,
)
from cadad.errors import ConfigError, ContractError, EventFileError


def _stream(times, chans, label=0, duration=100.0, sid=0):
    return EventStream(
        times_ms=np.asarray(times, dtype=float),
        channels=np.asarray(chans, dtype=np.int64),
        label=label,
        duration_ms=duration,
        sample_id=sid,
    )


def test_binning_places_events_by_floor():
    cfg = BinningConfig(dt_ms=10.0, t_steps=4, channels=2)
    frame = bin_events(_stream([0.0, 9.99, 10.0, 39.99], [0, 0, 1, 1]), cfg)
    assert frame[0, 0] == 1.0  # both sub-10ms events clamp into bin 0
    assert frame[1, 1] == 1.0
    assert frame[3, 1] == 1.0
    assert frame.sum() == 3.0


def test_binning_counts_without_clamp():
    cfg = BinningConfig(dt_ms=10.0, t_steps=2, channels=1, clamp_binary=False)
    frame = bin_events(_stream([1.0, 2.0, 3.0], [0, 0, 0]), cfg)
    assert frame[0, 0] == 3.0


def test_binning_drops_late_events():
    cfg = BinningConfig(dt_ms=10.0, t_steps=3, channels=1)
    frame = bin_events(_stream([5.0, 30.0, 95.0], [0, 0, 0]), cfg)
    assert frame.sum() == 1.0


def test_binning_rejects_bad_events():
    cfg = BinningConfig(dt_ms=10.0, t_steps=3, channels=2)
    with pytest.raises(ContractError):
        bin_events(_stream([5.0], [2]), cfg)
    with pytest.raises(ContractError):
        bin_events(_stream([-1.0], [0]), cfg)


def test_binning_config_validation():
    with pytest.raises(ConfigError):
        BinningConfig(dt_ms=0.0, t_steps=4, channels=2)
    with pytest.raises(ConfigError):
        BinningConfig(dt_ms=1.0, t_steps=0, channels=2)


def test_event_stream_requires_aligned_arrays():
    with pytest.raises(ContractError):
        _stream([1.0, 2.0], [0])


def test_dataset_shape_validation():
    with pytest.raises(ContractError):
        SpikeDataset(frames=np.zeros((2, 4)), labels=np.zeros(2))
    with pytest.raises(ContractError):
        SpikeDataset(frames=np.zeros((2, 4, 3)), labels=np.zeros(3))


def test_event_file_round_trip(tmp_path):
    streams = [
        _stream([1.0, 2.5, 40.125], [0, 2, 1], label=1, duration=50.0, sid=0),
        _stream([], [], label=0, duration=50.0, sid=1),
    ]
    path = tmp_path / "events.txt"
    save_event_file(path, streams, channels=3, classes=2)
    loaded, channels, classes = load_event_file(path)
    assert (channels, classes) == (3, 2)
    assert len(loaded) == 2
    assert np.allclose(loaded[0].times_ms, [1.0, 2.5, 40.125])
    assert np.array_equal(loaded[0].channels, [0, 2, 1])
    assert loaded[0].label == 1 and loaded[0].sample_id == 0
    assert loaded[1].times_ms.size == 0

    a = bin_dataset(streams, BinningConfig(dt_ms=10.0, t_steps=5, channels=3))
    b = bin_dataset(loaded, BinningConfig(dt_ms=10.0, t_steps=5, channels=3))
    assert np.array_equal(a.frames, b.frames)
    assert np.array_equal(a.labels, b.labels)


def test_event_file_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("# events v1 channels=2 classes=2\nsample 0 label 0 duration_ms 10\nnonsense\n")
    with pytest.raises(EventFileError, match="bad.txt:3"):
        load_event_file(path)

    path.write_text("not a header\n")
    with pytest.raises(EventFileError, match=":1"):
        load_event_file(path)

    path.write_text("# events v1 channels=2 classes=2\n5.0 0\n")
    with pytest.raises(EventFileError, match="before any sample"):
        load_event_file(path)

    path.write_text("# events v1 channels=2 classes=2\nsample 0 label 5 duration_ms 10\n")
    with pytest.raises(EventFileError, match="label 5"):
        load_event_file(path)

    path.write_text("# events v1 channels=2 classes=2\nsample 0 label 0 duration_ms 10\n1.0 7\n")
    with pytest.raises(EventFileError, match="channel 7"):
        load_event_file(path)


def test_event_file_sorts_disordered_times(tmp_path):
    path = tmp_path / "unsorted.txt"
    path.write_text(
        "# events v1 channels=2 classes=1\n"
        "sample 0 label 0 duration_ms 30\n"
        "20.0 1\n"
        "5.0 0\n"
    )
    with pytest.warns(UserWarning, match="out of order"):
        streams, _, _ = load_event_file(path)
    assert np.array_equal(streams[0].times_ms, [5.0, 20.0])
    assert np.array_equal(streams[0].channels, [0, 1])


def test_synth_config_validation():
    with pytest.raises(ConfigError):
        SynthConfig(n_classes=1)
    with pytest.raises(ConfigError):
        SynthConfig(n_classes=4, channels=6)
    with pytest.raises(ConfigError):
        SynthConfig(t_steps=10, max_lag=8, jitter_steps=2)
    with pytest.raises(ConfigError):
        SynthConfig(burst_prob=1.5)
    with pytest.raises(ConfigError):
        SynthConfig(n_volleys=0)


def test_synth_streams_are_valid_and_unique():
    cfg = SynthConfig(n_classes=3, channels=12, t_steps=40, n_train=9, n_eval=6)
    train, evals = synth_coincidence_task(cfg, seed=0)
    assert len(train) == 9 and len(evals) == 6
    ids = [s.sample_id for s in train + evals]
    assert len(set(ids)) == len(ids)
    labels = [s.label for s in train]
    assert sorted(set(labels)) == [0, 1, 2]
    for s in train + evals:
        assert np.all(s.channels >= 0) and np.all(s.channels < 12)
        assert np.all(s.times_ms >= 0.0)
        assert np.all(np.diff(s.times_ms) >= 0.0)


def test_synth_label_volley_uses_fixed_lags():
    # with jitter and bursts off, every sample of a class shows the same
    # within-group spike offsets relative to its anchor
    cfg = SynthConfig(
        n_classes=2,
        channels=8,
        t_steps=32,
        jitter_steps=0,
        burst_prob=0.0,
        max_lag=3,
        n_train=8,
        n_eval=2,
    )
    train, _ = synth_coincidence_task(cfg, seed=5)
    per_class = {}
    for s in train:
        group = np.nonzero(np.isin(s.channels, np.arange(s.label * 4, s.label * 4 + 4)))[0]
        own = {int(s.channels[i]): s.times_ms[i] for i in group}
        offs = tuple(own[c] - min(own.values()) for c in sorted(own))
        per_class.setdefault(s.label, set()).add(offs)
    for offsets in per_class.values():
        assert len(offsets) == 1


def test_synth_lags_are_distinct_within_group():
    cfg = SynthConfig(
        n_classes=2,
        channels=8,
        t_steps=32,
        jitter_steps=0,
        burst_prob=0.0,
        max_lag=5,
        n_train=2,
        n_eval=2,
    )
    train, _ = synth_coincidence_task(cfg, seed=7)
    s = train[0]
    own = [t for t, c in zip(s.times_ms, s.channels) if s.label * 4 <= c < s.label * 4 + 4]
    assert len(set(own)) == len(own)


def test_synth_decoys_equalize_spike_counts():
    cfg = SynthConfig(
        n_classes=2,
        channels=8,
        t_steps=32,
        jitter_steps=0,
        burst_prob=0.0,
        max_lag=3,
        n_train=20,
        n_eval=2,
    )
    train, _ = synth_coincidence_task(cfg, seed=9)
    counts = {s.sample_id: len(s.times_ms) for s in train}
    assert set(counts.values()) == {8}  # every group fires one full volley

    off = SynthConfig(
        n_classes=2,
        channels=8,
        t_steps=32,
        jitter_steps=0,
        burst_prob=0.0,
        max_lag=3,
        n_train=4,
        n_eval=2,
        decoys=False,
    )
    train_off, _ = synth_coincidence_task(off, seed=9)
    assert all(len(s.times_ms) == 4 for s in train_off)


def test_synth_volley_count_scales_events():
    base = dict(
        n_classes=2,
        channels=8,
        t_steps=48,
        jitter_steps=0,
        burst_prob=0.0,
        max_lag=3,
        n_train=4,
        n_eval=2,
    )
    one, _ = synth_coincidence_task(SynthConfig(**base), seed=3)
    three, _ = synth_coincidence_task(SynthConfig(**base, n_volleys=3), seed=3)
    assert all(len(s.times_ms) == 8 for s in one)
    assert all(len(s.times_ms) == 24 for s in three)


def test_synth_generation_is_deterministic():
    cfg = SynthConfig(n_train=6, n_eval=4)
    a_train, a_eval = synth_datasets(cfg, seed=42)
    b_train, b_eval = synth_datasets(cfg, seed=42)
    assert np.array_equal(a_train.frames, b_train.frames)
    assert np.array_equal(a_eval.frames, b_eval.frames)
    c_train, _ = synth_datasets(cfg, seed=43)
    assert not np.array_equal(a_train.frames, c_train.frames)


def test_synth_datasets_shapes_and_binary():
    cfg = SynthConfig(n_train=6, n_eval=4)
    train, evals = synth_datasets(cfg, seed=1)
    assert train.frames.shape == (6, cfg.t_steps, cfg.channels)
    assert evals.frames.shape == (4, cfg.t_steps, cfg.channels)
    assert set(np.unique(train.frames)) <= {0.0, 1.0}
    assert len(train) == 6


@settings(max_examples=25, deadline=None)
@given(
    times=st.lists(st.floats(min_value=0.0, max_value=49.99), max_size=20),
    dt=st.sampled_from([1.0, 2.5, 10.0]),
)
def test_binning_conserves_events_before_horizon(times, dt):
    cfg = BinningConfig(dt_ms=dt, t_steps=int(np.ceil(50.0 / dt)) + 1, channels=1, clamp_binary=False)
    frame = bin_events(_stream(sorted(times), [0] * len(times)), cfg)
    assert frame.sum() == len(times)
