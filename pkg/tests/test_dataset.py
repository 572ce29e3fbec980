import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neogat.dataset import (
    EPOCH_SAMPLES,
    EpochStore,
    EpochStoreError,
    SplitError,
    class_balance_report,
    epoch_windows,
    extract_epochs,
    make_split,
    normalize_epoch,
)
from neogat.dsp import DISAGREEMENT, NON_SEIZURE, SEIZURE, CleanSignal

FS = 32


def clean_signal(labels, segments=None, subject="s", seed=0):
    labels = np.asarray(labels, dtype=np.int8)
    n = len(labels) * FS
    if segments is None:
        segments = [(0, len(labels))]
    ch = np.random.default_rng(seed).standard_normal((12, n))
    return CleanSignal(subject, FS, ch, [(a * FS, b * FS) for a, b in segments], labels)


def enumerate_windows(labels, segments):
    """Brute force: test every integer start second against the rules."""
    out = []
    for a, b in segments:
        for t in range(a, b - 12 + 1):
            win = labels[t : t + 12]
            if not np.all(win == win[0]) or win[0] == DISAGREEMENT:
                continue
            run_start = t
            while run_start > a and labels[run_start - 1] == win[0]:
                run_start -= 1
            stride = 1 if win[0] == SEIZURE else 2
            if (t - run_start) % stride == 0:
                out.append((t, int(win[0])))
    return sorted(out)


def test_pure_seizure_segment():
    assert len(epoch_windows(clean_signal([SEIZURE] * 60))) == 49


def test_pure_non_seizure_segment():
    assert len(epoch_windows(clean_signal([NON_SEIZURE] * 60))) == 25


def test_disagreement_second_blocks_window():
    labels = [SEIZURE] * 12
    labels[5] = DISAGREEMENT
    assert epoch_windows(clean_signal(labels)) == []


def test_windows_never_cross_segments():
    labels = [SEIZURE] * 40
    w = epoch_windows(clean_signal(labels, segments=[(0, 20), (25, 40)]))
    assert [t for t, _ in w] == list(range(0, 9)) + list(range(25, 29))


@settings(max_examples=80, deadline=None)
@given(
    runs=st.lists(st.tuples(st.sampled_from([SEIZURE, NON_SEIZURE, DISAGREEMENT]), st.integers(1, 30)), min_size=1, max_size=8),
    cuts=st.lists(st.integers(0, 200), max_size=4),
)
def test_windows_match_enumeration_oracle(runs, cuts):
    labels = np.concatenate([np.full(n, lab, dtype=np.int8) for lab, n in runs])
    n = len(labels)
    edges = sorted({0, n, *(c for c in cuts if c < n)})
    # drop every other piece to create gaps between valid segments
    segments = [(a, b) for i, (a, b) in enumerate(zip(edges, edges[1:])) if i % 2 == 0]
    got = epoch_windows(clean_signal(labels, segments))
    assert got == enumerate_windows(labels, segments)
    for t, lab in got:
        assert np.all(labels[t : t + 12] == lab)


def test_extraction_is_deterministic_and_shaped():
    labels = [NON_SEIZURE] * 20 + [SEIZURE] * 20 + [NON_SEIZURE] * 20
    c = clean_signal(labels, seed=4)
    a, b = extract_epochs(c), extract_epochs(c)
    assert [(e.start_time, e.label) for e in a] == [(e.start_time, e.label) for e in b]
    assert all(e.data.shape == (12, EPOCH_SAMPLES) and e.data.dtype == np.float32 for e in a)
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a, b))


def test_normalize_constant_row():
    x = np.random.default_rng(0).standard_normal((12, 384))
    x[3] = 5.0
    y = normalize_epoch(x)
    assert np.all(y[3] == 0)


def test_normalize_alternating_row():
    y = normalize_epoch(np.tile([-1.0, 1.0], 192)[None])
    np.testing.assert_allclose(y[0], np.tile([-1.0, 1.0], 192), atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e3), shift=st.floats(-1e3, 1e3))
def test_normalize_statistics(seed, scale, shift):
    x = shift + scale * np.random.default_rng(seed).standard_normal((12, 384))
    y = normalize_epoch(x).astype(np.float64)
    assert np.all(np.abs(y.mean(axis=1)) < 1e-5)
    assert np.all(np.abs(y.std(axis=1) - 1) < 1e-3)


SUBJECTS = [f"n{i:02d}" for i in range(1, 40)]


def test_holdout_sizes():
    plan = make_split(SUBJECTS, "holdout", seed=0)
    train, test = plan.train_test()
    assert (len(train), len(test)) == (31, 8)
    assert not set(train) & set(test)


def test_kfold_sizes_and_disjointness():
    plan = make_split(SUBJECTS, "kfold", seed=3)
    assert plan.fold_sizes() == [4] * 9 + [3]
    seen = []
    for k in range(10):
        train, test = plan.train_test(k)
        assert not set(train) & set(test)
        assert sorted(train + test) == SUBJECTS
        seen += test
    assert sorted(seen) == SUBJECTS


def test_split_determinism():
    assert make_split(SUBJECTS, "kfold", seed=11) == make_split(SUBJECTS, "kfold", seed=11)
    assert make_split(SUBJECTS, "kfold", seed=11) != make_split(SUBJECTS, "kfold", seed=12)


def test_split_too_few_subjects():
    with pytest.raises(SplitError):
        make_split(SUBJECTS[:9], "kfold")
    with pytest.raises(SplitError):
        make_split(SUBJECTS, "random")


def test_balance_no_seizures():
    assert class_balance_report([0, 0, 0])["ratio"] == 0


def test_balance_equal_durations():
    labels = [SEIZURE] * 200 + [NON_SEIZURE] * 200
    y = [lab for _, lab in epoch_windows(clean_signal(labels, segments=[(0, 200), (200, 400)]))]
    assert class_balance_report(y)["ratio"] == pytest.approx(2.0, rel=0.05)


def test_balance_on_eighteen_percent_seizure_corpus():
    rng = np.random.default_rng(0)
    labels_all = []
    for _ in range(10):
        n, n_seiz = 1000, 180
        start = int(rng.integers(100, n - n_seiz - 100))
        labels = np.zeros(n, np.int8)
        labels[start : start + n_seiz] = SEIZURE
        labels_all += [lab for _, lab in epoch_windows(clean_signal(labels))]
    ratio = class_balance_report(labels_all)["ratio"]
    assert 1 / 2.5 <= ratio <= 1 / 1.5


def test_store_round_trip(tmp_path):
    c1 = clean_signal([SEIZURE] * 15 + [NON_SEIZURE] * 20, subject="b")
    c2 = clean_signal([NON_SEIZURE] * 30, subject="a", seed=1)
    store = EpochStore.from_epochs(extract_epochs(c1) + extract_epochs(c2), seed=5)
    store.split = make_split(["a", "b"], "holdout", seed=5)
    store.save(tmp_path / "st")
    back = EpochStore.load(tmp_path / "st")
    assert back.subjects == store.subjects and back.subjects[0] == "a"
    np.testing.assert_array_equal(back.data, store.data)
    np.testing.assert_array_equal(back.labels, store.labels)
    assert back.split == store.split and back.seed == 5


def test_store_rejects_truncated_payload(tmp_path):
    store = EpochStore.from_epochs(extract_epochs(clean_signal([SEIZURE] * 14)))
    store.save(tmp_path)
    raw = (tmp_path / "epochs.f32").read_bytes()
    (tmp_path / "epochs.f32").write_bytes(raw[:-4])
    with pytest.raises(EpochStoreError):
        EpochStore.load(tmp_path)
