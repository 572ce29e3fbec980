import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neogat.dsp import (
    CHANNEL_NAMES,
    CHANNELS,
    DISAGREEMENT,
    ELECTRODES,
    NON_SEIZURE,
    SEIZURE,
    FilterDesignError,
    MissingElectrodeError,
    RawRecording,
    SegmentTooShortError,
    consensus_labels,
    derive_montage,
    design_cheby2_bandpass,
    downsample,
    filter_forward_backward,
    preprocess_recording,
    remove_flat_lines,
)
from neogat.synth import SyntheticSpec, generate

FS = 256


@pytest.fixture(scope="module")
def coeffs():
    return design_cheby2_bandpass()


def response(sos, freq, fs=FS):
    """|H(e^{jw})| evaluated section by section with plain polynomials in z^-1."""
    z1 = np.exp(-2j * np.pi * np.asarray(freq, dtype=float) / fs)
    h = np.ones_like(z1)
    for b0, b1, b2, a0, a1, a2 in sos:
        h *= (b0 + b1 * z1 + b2 * z1**2) / (a0 + a1 * z1 + a2 * z1**2)
    return np.abs(h)


def fft_amplitude(x, freq, fs=FS):
    """Amplitude of the ``freq`` component; ``len(x)`` must hold whole cycles."""
    k = freq * len(x) / fs
    assert abs(k - round(k)) < 1e-9
    return 2 * np.abs(np.fft.rfft(x)[int(round(k))]) / len(x)


def tone(freq, seconds, fs=FS):
    return np.sin(2 * np.pi * freq * np.arange(int(seconds * fs)) / fs)


def recording(values: dict, n=FS * 4, ann=None):
    electrodes = {e: np.full(n, values.get(e, 0.0)) if np.isscalar(values.get(e, 0.0)) else values[e] for e in ELECTRODES}
    if ann is None:
        ann = np.zeros((3, n // FS), dtype=np.uint8)
    return RawRecording("s", FS, electrodes, ann)


def test_channel_order():
    assert list(CHANNEL_NAMES) == [
        "Fp1-T3", "T3-O1", "Fp1-C3", "C3-O1", "Fp2-C4", "C4-O2",
        "Fp2-T4", "T4-O2", "T3-C3", "C3-CZ", "CZ-C4", "C4-T4",
    ]  # fmt: skip


def test_montage_identical_electrodes_cancel():
    x = np.random.default_rng(0).standard_normal(FS)
    m = derive_montage(recording({"Fp1": x, "T3": x.copy()}, n=FS))
    assert np.all(m[0] == 0)


def test_montage_against_zero_reference():
    x = tone(3, 1)
    m = derive_montage(recording({"Fp1": x}, n=FS))
    np.testing.assert_array_equal(m[0], x)


def test_montage_constant_differences():
    consts = {e: float(i * 7 + 1) for i, e in enumerate(ELECTRODES)}
    m = derive_montage(recording(consts, n=10))
    for row, (a, b) in zip(m, CHANNELS):
        assert np.all(row == consts[a] - consts[b])


def test_montage_missing_electrode():
    rec = recording({}, n=10)
    del rec.electrodes["CZ"]
    with pytest.raises(MissingElectrodeError, match="CZ"):
        derive_montage(rec)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-100, 100, allow_nan=False), seed=st.integers(0, 1000))
def test_montage_is_linear(a, seed):
    rng = np.random.default_rng(seed)
    values = {e: rng.standard_normal(32) for e in ELECTRODES}
    scaled = {e: a * v for e, v in values.items()}
    np.testing.assert_allclose(derive_montage(recording(scaled, 32)), a * derive_montage(recording(values, 32)), atol=1e-9)


def test_flat_lines_all_zero():
    assert remove_flat_lines(np.zeros((12, 10 * FS)), FS) == []


def test_flat_lines_short_runs_are_kept():
    x = np.ones((12, 10 * FS))
    x[:, 100 : 100 + FS] = 0  # exactly 1 s is not "longer than 1 s"
    assert remove_flat_lines(x, FS) == [(0, 10 * FS)]


def test_flat_lines_must_be_zero_on_every_channel():
    x = np.ones((12, 10 * FS))
    x[:11, FS : 5 * FS] = 0
    assert remove_flat_lines(x, FS) == [(0, 10 * FS)]


def test_flat_lines_interior_gap():
    x = np.random.default_rng(0).standard_normal((12, 60 * FS)) + 5
    x[:, 20 * FS : 30 * FS] = 0
    assert remove_flat_lines(x, FS) == [(0, 20 * FS), (30 * FS, 60 * FS)]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2000), st.integers(1, 700)), max_size=5))
def test_flat_lines_segments_sorted_disjoint_and_nonzero(runs):
    n = 3000
    x = np.ones((2, n))
    for s, length in runs:
        x[:, s : s + length] = 0
    segs = remove_flat_lines(x, 100.0)
    for (s0, e0), (s1, e1) in zip(segs, segs[1:]):
        assert e0 < s1
    covered = np.zeros(n, bool)
    for s, e in segs:
        assert 0 <= s < e <= n
        covered[s:e] = True
    # every dropped sample sits inside an all-zero run longer than 1 s
    zero = np.all(x == 0, axis=0)
    assert np.all(zero[~covered])


def test_filter_sections_are_stable(coeffs):
    for *_, a0, a1, a2 in coeffs.sos:
        assert np.all(np.abs(np.roots([a0, a1, a2])) < 1)
    assert coeffs.order == 8 and coeffs.attenuation_db == 40


def test_filter_passband_centre(coeffs):
    db = 20 * np.log10(response(coeffs.sos, 8.0))
    assert abs(db) <= 1.0


def test_filter_dc_in_stopband(coeffs):
    # the stopband floor is equiripple at exactly -40 dB; allow rounding
    assert 20 * np.log10(response(coeffs.sos, 0.0)) <= -40 + 1e-9


def test_filter_stopband_beyond_edges(coeffs):
    f = np.concatenate([np.linspace(0, 0.5, 50), np.linspace(20, 128, 500)])
    assert np.all(20 * np.log10(response(coeffs.sos, f) + 1e-300) <= -40 + 1e-6)


def test_filter_response_matches_scipy(coeffs):
    from scipy.signal import sosfreqz

    f = np.linspace(0, 128, 257)
    _, h = sosfreqz(coeffs.sos, worN=f, fs=FS)
    np.testing.assert_allclose(np.abs(h), response(coeffs.sos, f), rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("bad", [dict(low=20.0, high=16.0), dict(stop_high=200.0), dict(stop_low=1.5)])
def test_filter_infeasible(bad):
    with pytest.raises(FilterDesignError):
        design_cheby2_bandpass(**bad)


def test_filter_zero_in_zero_out(coeffs):
    assert np.all(filter_forward_backward(np.zeros((3, 1000)), coeffs) == 0)


def test_filter_keeps_8hz_tone(coeffs):
    y = filter_forward_backward(tone(8, 104), coeffs)[2 * FS : -2 * FS]
    assert abs(fft_amplitude(y, 8) - 1) <= 0.12


def test_filter_removes_drift(coeffs):
    y = filter_forward_backward(tone(0.1, 104), coeffs)[2 * FS : -2 * FS]
    assert fft_amplitude(y, 0.1) < 0.02


def test_filter_too_short(coeffs):
    with pytest.raises(SegmentTooShortError):
        filter_forward_backward(np.ones(20), coeffs)


def test_filter_is_zero_phase(coeffs):
    t = np.arange(20 * FS) / FS
    burst = np.exp(-0.5 * ((t - 10) / 0.5) ** 2) * np.sin(2 * np.pi * 6 * t)
    y = filter_forward_backward(burst, coeffs)
    xc = np.correlate(y, burst, mode="full")
    assert np.argmax(xc) - (len(burst) - 1) == 0


def test_filtered_noise_energy_below_16hz(coeffs):
    x = np.random.default_rng(0).standard_normal(64 * FS)
    y = filter_forward_backward(x, coeffs)
    spec = np.abs(np.fft.rfft(y)) ** 2
    freqs = np.fft.rfftfreq(len(y), 1 / FS)
    assert spec[freqs > 16].sum() / spec.sum() < 0.01
    # decimated spectrum keeps (almost) all of that energy without folding
    d = downsample(y)
    assert np.var(d) == pytest.approx(np.var(y), rel=0.05)


def test_downsample_lengths_and_constants():
    assert downsample(np.zeros(2560)).shape == (320,)
    assert np.all(downsample(np.full(800, 3.5)) == 3.5)
    np.testing.assert_array_equal(downsample(np.arange(24)), [0, 8, 16])


def test_downsample_keeps_4hz_peak():
    y = downsample(tone(4, 10))
    freqs = np.fft.rfftfreq(len(y), 1 / 32)
    assert freqs[np.argmax(np.abs(np.fft.rfft(y)))] == 4.0


def test_consensus():
    ann = np.array([[1, 0, 1, 0], [1, 0, 1, 1], [1, 0, 0, 1]])
    np.testing.assert_array_equal(consensus_labels(ann), [SEIZURE, NON_SEIZURE, DISAGREEMENT, DISAGREEMENT])


def test_consensus_length_mismatch():
    with pytest.raises(ValueError):
        consensus_labels([[1, 0], [1], [1, 0]])


def test_preprocess_pipeline():
    spec = SyntheticSpec("p", 30, [(10, 20)], seed=3, flat_intervals=[(0, 3.5)])
    clean = preprocess_recording(generate(spec))
    assert clean.fs == 32 and clean.channels.shape == (12, 30 * 32)
    # flat run 0-3.5 s is dropped and the remainder snapped to whole seconds
    assert clean.valid_segments == [(4 * 32, 30 * 32)]
    assert np.all(clean.channels[:, : 4 * 32] == 0)
    np.testing.assert_array_equal(clean.annotations[9:21], [0] + [1] * 10 + [0])


def test_preprocess_is_deterministic():
    raw = generate(SyntheticSpec("d", 20, [(5, 15)], seed=1))
    a = preprocess_recording(raw)
    b = preprocess_recording(raw)
    assert a.channels.tobytes() == b.channels.tobytes()
