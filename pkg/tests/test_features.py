import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

import oracles
from soundmix.errors import DegenerateStd, InvalidRange, TooShort, UnknownSchema
from soundmix.features import (
    LOG_FLOOR,
    LOG_MEL,
    MFCC,
    FeatureConfig,
    FeatureMatrix,
    StftConfig,
    dct_matrix,
    export_png,
    fit_frames,
    fit_standardization,
    hz_to_mel,
    import_png,
    log_mel_spectrogram,
    mel_filterbank,
    mfcc,
    power_spectrogram,
    read_feature,
    resize_bilinear,
    standardize,
    stft,
    write_feature,
)

SR = 44100
CFG = StftConfig()


@pytest.fixture(scope="module")
def fb():
    return mel_filterbank()


def test_window_symmetric_hann():
    w = CFG.window
    np.testing.assert_allclose(w, oracles.hann_symmetric(2048), atol=1e-15)
    np.testing.assert_array_equal(w, w[::-1])
    assert w.min() >= 0 and w.max() <= 1


def test_stft_shape_and_zero():
    z = stft(np.zeros(10000), CFG)
    assert z.shape == (1025, (10000 - 2048) // 512 + 1)
    assert not np.any(z)


def test_stft_too_short():
    with pytest.raises(TooShort):
        stft(np.zeros(2047), CFG)


@pytest.mark.parametrize("k", [10, 93, 400])
def test_bin_centred_sine_peaks_at_bin(k):
    t = np.arange(SR) / SR
    z = stft(np.sin(2 * np.pi * k * SR / 2048 * t), CFG)
    assert np.all(np.argmax(np.abs(z), axis=0) == k)


def test_stft_matches_naive_dft_one_second():
    x = np.random.default_rng(3).uniform(-1, 1, SR)
    ref = oracles.NaiveDft(2048)(oracles.frames_of(x, 2048, 512) * oracles.hann_symmetric(2048))
    got = stft(x, CFG)
    assert np.max(np.abs(got - ref)) <= 1e-6 * np.max(np.abs(ref))


def test_stft_linearity():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=(2, 8192))
    a, b = 0.7, -2.3
    lhs = stft(a * x + b * y, CFG)
    rhs = a * stft(x, CFG) + b * stft(y, CFG)
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * np.max(np.abs(rhs))


def test_power_spectrogram_examples():
    assert power_spectrogram(np.array([[3 + 4j]])).values[0, 0] == 25.0
    np.testing.assert_array_equal(power_spectrogram(np.zeros((3, 2), complex)).values, 0)
    z = np.random.default_rng(0).normal(size=(5, 4)) + 1j
    np.testing.assert_allclose(power_spectrogram(3 * z).values, 9 * power_spectrogram(z).values)


def test_mel_landmarks():
    assert hz_to_mel(0.0) == 0.0
    assert hz_to_mel(700.0) == pytest.approx(2595 * math.log10(2), abs=1e-9)
    assert hz_to_mel(700.0) == pytest.approx(781.17, abs=0.01)


def test_filterbank_matches_independent_oracle(fb):
    np.testing.assert_allclose(fb.edges_hz, oracles.mel_edges(128, 0.0, 8000.0), rtol=0, atol=1e-9)
    ref = oracles.mel_weights(128, 2048, SR, 0.0, 8000.0)
    assert np.max(np.abs(fb.weights - ref)) < 1e-9


def test_filters_unimodal_peak_one_and_cover_band():
    fb = mel_filterbank(n_mels=40, n_fft=4096, sr=16000, f_max=8000)
    for row in fb.weights:
        nz = row[row > 0]
        if nz.size == 0:
            continue
        d = np.diff(nz)
        peak = int(np.argmax(nz))
        assert np.all(d[:peak] >= 0) and np.all(d[peak:] <= 0)
    assert fb.weights.max() <= 1.0
    # peak-1 triangles: apex weight is 1 where a bin lands on the apex frequency
    freqs = np.arange(fb.weights.shape[1]) * 16000 / 4096
    inside = (freqs > 0) & (freqs < 8000)
    assert np.all(fb.weights[:, inside].sum(axis=0) > 0)


def test_filter_apex_weight_is_one():
    # choose sr/n_fft so a bin lands exactly on every apex is impractical; evaluate
    # triangles at the apex frequencies directly instead
    from soundmix.features import triangular_weights

    edges = mel_filterbank(n_mels=16, n_fft=512, sr=16000, f_max=8000).edges_hz
    w = triangular_weights(edges[1:-1], edges)
    np.testing.assert_allclose(np.diag(w), 1.0)


@pytest.mark.parametrize("args", [
    dict(f_min=100, f_max=100), dict(f_min=0, f_max=30000), dict(n_mels=1), dict(f_min=-1),
])
def test_filterbank_invalid_range(args):
    with pytest.raises(InvalidRange):
        mel_filterbank(**args)


def test_log_mel_silence_is_floor(fb):
    m = log_mel_spectrogram(np.zeros(SR), CFG, fb)
    assert m.kind == LOG_MEL and m.shape[0] == 128
    np.testing.assert_array_equal(m.values, np.log(LOG_FLOOR))


def test_log_mel_doubling_adds_log4(fb):
    x = np.random.default_rng(5).uniform(-0.4, 0.4, SR)
    a = log_mel_spectrogram(x, CFG, fb).values
    b = log_mel_spectrogram(2 * x, CFG, fb).values
    big = a > np.log(LOG_FLOOR) + 20
    assert big.mean() > 0.9
    np.testing.assert_allclose((b - a)[big], np.log(4), atol=1e-6)


def test_log_mel_of_mixture_matches_composed_oracle(fb):
    from soundmix.mixer import mix_segments
    from soundmix.synthetic import synthetic_pool

    pool = synthetic_pool(per_class=1, seed=2)
    sample = mix_segments([pool[0].render(), pool[3].render(), pool[4].render()], 6)
    got = log_mel_spectrogram(sample.samples, CFG, fb).values
    ref = np.log(oracles.log_mel_oracle(sample.samples) + LOG_FLOOR)
    assert got.shape == (128, (4 * SR - 2048) // 512 + 1)
    assert np.max(np.abs(got - ref) / np.abs(ref)) < 1e-6


def test_mfcc_constant_energies_identity():
    U, c = 128, 1.7
    out = dct_matrix(40, U) @ np.full((U, 3), c)
    np.testing.assert_allclose(out[0], c * U, rtol=1e-12)
    np.testing.assert_allclose(out[1:], 0, atol=1e-9)


def test_mfcc_rows_and_double_loop_oracle(fb):
    x = np.random.default_rng(8).uniform(-1, 1, 4 * SR)
    m = mfcc(x, CFG, fb, 40)
    assert m.kind == MFCC and m.shape[0] == 40
    log_r = np.log(np.maximum(oracles.log_mel_oracle(x), LOG_FLOOR))
    ref = oracles.dct_double_loop(log_r, 40)
    assert np.max(np.abs(m.values - ref)) <= 1e-8 * np.max(np.abs(ref))


def test_mfcc_too_many_coefficients(fb):
    with pytest.raises(InvalidRange):
        mfcc(np.zeros(4096), CFG, fb, 129)


def test_dct_rows_orthogonal():
    D = dct_matrix(40, 128)
    G = D[1:] @ D[1:].T
    off = G - np.diag(np.diag(G))
    assert np.max(np.abs(off)) < 1e-9
    np.testing.assert_allclose(np.diag(G), 64.0, atol=1e-9)


@pytest.mark.parametrize("frames", [300, 400, 450])
def test_fit_frames(frames):
    v = np.random.default_rng(frames).normal(size=(40, frames))
    out = fit_frames(FeatureMatrix(MFCC, v), 400).values
    assert out.shape == (40, 400)
    keep = min(frames, 400)
    np.testing.assert_array_equal(out[:, :keep], v[:, :keep])
    assert not np.any(out[:, keep:])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 50), st.integers(1, 60))
def test_fit_frames_idempotent(frames, target):
    m = FeatureMatrix(MFCC, np.ones((3, frames)))
    once = fit_frames(m, target)
    np.testing.assert_array_equal(fit_frames(once, target).values, once.values)


def test_standardize_hand_example():
    m = standardize(FeatureMatrix(LOG_MEL, np.array([[1.0, 3.0], [5.0, 7.0]])))
    assert m.stats.mean == 4.0
    assert m.stats.std == pytest.approx(np.std([1, 3, 5, 7]))
    assert m.values.mean() == pytest.approx(0, abs=1e-15)
    assert m.values.std() == pytest.approx(1, abs=1e-12)


def test_standardize_idempotent_and_degenerate():
    v = np.random.default_rng(0).normal(size=(10, 12))
    once = standardize(FeatureMatrix(LOG_MEL, v))
    twice = standardize(FeatureMatrix(LOG_MEL, once.values))
    np.testing.assert_allclose(twice.values, once.values, atol=1e-12)
    with pytest.raises(DegenerateStd):
        standardize(FeatureMatrix(LOG_MEL, np.full((3, 3), 2.0)))


def test_train_stats_do_not_center_validation():
    rng = np.random.default_rng(1)
    train = [FeatureMatrix(LOG_MEL, rng.normal(0, 1, (8, 8))) for _ in range(5)]
    val = FeatureMatrix(LOG_MEL, rng.normal(3, 1, (8, 8)))
    stats = fit_standardization(train)
    out = standardize(val, stats)
    assert abs(out.values.mean()) > 1.0
    np.testing.assert_allclose(stats.invert(out.values), val.values, atol=1e-12)


def test_per_row_standardization():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(4, 50)) * np.array([[1], [2], [3], [4]]) + 10
    s = fit_standardization(FeatureMatrix(MFCC, v), per_row=True)
    out = s.apply(v)
    np.testing.assert_allclose(out.mean(axis=1), 0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=1), 1, atol=1e-12)


def test_resize_examples():
    np.testing.assert_array_equal(resize_bilinear(np.full((3, 5), 2.5), 7, 4), 2.5)
    m = np.arange(12.0).reshape(3, 4)
    np.testing.assert_array_equal(resize_bilinear(m, 3, 4), m)
    out = resize_bilinear(np.array([[0.0, 1.0], [2.0, 3.0]]), 3, 3)
    assert out[1, 1] == 1.5
    np.testing.assert_array_equal(out[[0, 0, -1, -1], [0, -1, 0, -1]], [0, 1, 2, 3])


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 9), st.integers(2, 9), st.integers(1, 12), st.integers(1, 12), st.integers(0, 99))
def test_resize_matches_hand_formula(r, c, R, C, seed):
    m = np.random.default_rng(seed).normal(size=(r, c))
    out = resize_bilinear(m, R, C)
    assert out.shape == (R, C)
    for i in range(R):
        for j in range(C):
            pr = 0.0 if R == 1 else i * (r - 1) / (R - 1)
            pc = 0.0 if C == 1 else j * (c - 1) / (C - 1)
            assert out[i, j] == pytest.approx(oracles.bilinear_point(m, pr, pc), abs=1e-12)


def test_png_roundtrip(tmp_path):
    v = np.random.default_rng(0).normal(size=(128, 128)) * 7 - 3
    export_png(FeatureMatrix(LOG_MEL, v), tmp_path / "a.png")
    with Image.open(tmp_path / "a.png") as im:
        assert im.size == (128, 128) and im.mode == "L"
    back = import_png(tmp_path / "a.png").values
    assert np.max(np.abs(back - v)) <= (v.max() - v.min()) / 255


def test_png_constant_is_single_level(tmp_path):
    export_png(FeatureMatrix(LOG_MEL, np.full((5, 6), -4.0)), tmp_path / "c.png")
    with Image.open(tmp_path / "c.png") as im:
        assert len(set(np.asarray(im).ravel().tolist())) == 1


def test_feature_file_layout(tmp_path):
    v = np.arange(6, dtype=float).reshape(2, 3) / 4
    write_feature(FeatureMatrix(MFCC, v), tmp_path / "x.smfx")
    raw = (tmp_path / "x.smfx").read_bytes()
    assert raw[:4] == b"SMFX" and raw[4:8] == (2).to_bytes(4, "little")
    assert raw[8:12] == (3).to_bytes(4, "little") and raw[12] == 1
    assert np.frombuffer(raw[13:], "<f4").tolist() == v.ravel().tolist()
    back = read_feature(tmp_path / "x.smfx")
    assert back.kind == MFCC
    np.testing.assert_array_equal(back.values, v)
    (tmp_path / "y.smfx").write_bytes(b"JUNK" + raw[4:])
    with pytest.raises(UnknownSchema):
        read_feature(tmp_path / "y.smfx")


@pytest.mark.parametrize("kind, rows", [(LOG_MEL, 128), (MFCC, 40)])
def test_feature_config_to_input(kind, rows):
    cfg = FeatureConfig(kind=kind, input_size=(32, 48))
    x = np.random.default_rng(0).uniform(-0.5, 0.5, 4 * SR)
    m = cfg.extract(x)
    assert m.shape == (rows, 341)
    stats = cfg.fit_stats([m])
    out = cfg.to_input(m, stats)
    assert out.shape == (32, 48)
    assert FeatureConfig.from_json(cfg.to_json()) == cfg
