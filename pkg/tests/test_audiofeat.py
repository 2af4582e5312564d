import math

import numpy as np
import pytest

import oracles
from stagelight import audiofeat as af
from stagelight.errors import DataError

SR = 16000


def tone(freq, seconds=1.0, sr=SR, amp=0.5):
    t = np.arange(int(sr * seconds))
    return af.AudioClip(sr, amp * np.sin(2 * np.pi * freq * t / sr))


def test_load_save_pcm16_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ints = rng.integers(-32768, 32768, size=2000)
    clip = af.AudioClip(SR, ints / 32768.0)
    path = tmp_path / "a.wav"
    af.save_wav(path, clip, "pcm16")
    back = af.load_wav(path)
    assert back.sample_rate == SR and back.channels == 1
    assert np.array_equal(back.samples, clip.samples)


def test_load_save_float32_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    data = rng.normal(0, 0.2, size=(500, 2)).astype(np.float32)
    clip = af.AudioClip(8000, data.astype(np.float64))
    path = tmp_path / "b.wav"
    af.save_wav(path, clip, "float32")
    back = af.load_wav(path)
    assert back.channels == 2
    assert np.array_equal(back.samples, data.astype(np.float64))


def test_pcm16_full_scale():
    clip = af.AudioClip(SR, np.array([32767 / 32768.0]))
    assert clip.samples[0, 0] == pytest.approx(0.999969482421875)


def test_load_wav_rejects_garbage(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"not a wave file at all")
    with pytest.raises(DataError):
        af.load_wav(path)


def test_load_wav_rejects_unsupported_encoding(tmp_path):
    import struct

    fmt = struct.pack("<HHIIHH", 1, 1, 8000, 8000, 1, 8)  # PCM8
    payload = b"\x00" * 16
    buf = (
        b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(payload)) + b"WAVE"
        + b"fmt " + struct.pack("<I", len(fmt)) + fmt
        + b"data" + struct.pack("<I", len(payload)) + payload
    )
    path = tmp_path / "u8.wav"
    path.write_bytes(buf)
    with pytest.raises(DataError, match="unsupported encoding"):
        af.load_wav(path)


def test_to_mono():
    mono = af.AudioClip(SR, np.ones(10))
    assert af.to_mono(mono) is mono
    x = np.arange(10.0)
    stereo = af.AudioClip(SR, np.stack([x, -x], axis=1))
    assert np.array_equal(af.to_mono(stereo).samples[:, 0], np.zeros(10))
    rng = np.random.default_rng(2)
    data = rng.normal(size=(100, 2))
    out = af.to_mono(af.AudioClip(SR, data)).samples[:, 0]
    assert np.allclose(out, (data[:, 0] + data[:, 1]) / 2, atol=0, rtol=0)


def test_frame_count_is_ceil_len_over_hop():
    for n in (160000, 160001, 159999, 1601, 1600):
        clip = af.AudioClip(SR, np.zeros(n))
        assert af.stft(clip).shape[0] == -(-n // 1600)


def test_stft_rejects_sub_hop_clip():
    with pytest.raises(ValueError, match="hop"):
        af.stft(af.AudioClip(SR, np.zeros(100)))


def test_stft_zero_signal():
    S = af.stft(af.AudioClip(SR, np.zeros(SR)))
    assert S.shape == (10, 1025)
    assert np.all(S == 0)


def test_stft_sine_peaks_at_bin():
    k = 200
    clip = tone(k * SR / 2048, seconds=2.0)
    mag = np.abs(af.stft(clip))
    interior = mag[4:-4]
    assert np.all(np.argmax(interior, axis=1) == k)


def test_stft_frame_matches_naive_dft():
    rng = np.random.default_rng(3)
    cfg = af.FeatureConfig(fft_size=64, mel_bands=16, mfcc_coeffs=8)
    clip = af.AudioClip(320, rng.normal(size=320))  # hop 32
    S = af.stft(clip, cfg)
    # rebuild frame 4 independently: centered at 4*hop with reflect padding
    x = clip.samples[:, 0]
    xp = np.pad(x, 32, mode="reflect")
    frame = xp[4 * 32 : 4 * 32 + 64] * (0.5 - 0.5 * np.cos(2 * np.pi * np.arange(64) / 64))
    ref = oracles.dft_frame(frame.tolist())
    assert np.allclose(S[4], np.array(ref), atol=1e-9)


def test_stft_parseval():
    rng = np.random.default_rng(4)
    cfg = af.FeatureConfig(fft_size=256, mel_bands=32, mfcc_coeffs=16)
    clip = af.AudioClip(2560, rng.normal(size=2560))
    S = af.stft(clip, cfg)
    x = clip.samples[:, 0]
    xp = np.pad(x, 128, mode="reflect")
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(256) / 256)
    for k in (0, 3, 7):
        frame = xp[k * 256 : k * 256 + 256] * win
        time_energy = float((frame**2).sum())
        spec = S[k]
        # one-sided spectrum: double every bin except DC and Nyquist
        freq_energy = (np.abs(spec[0]) ** 2 + np.abs(spec[-1]) ** 2
                       + 2 * (np.abs(spec[1:-1]) ** 2).sum()) / 256
        assert abs(freq_energy - time_energy) <= 1e-6 * max(time_energy, 1e-12)


def test_stft_scaling_linearity():
    rng = np.random.default_rng(5)
    x = rng.normal(size=SR)
    a = 3.7
    m1 = np.abs(af.stft(af.AudioClip(SR, x)))
    m2 = np.abs(af.stft(af.AudioClip(SR, a * x)))
    assert np.allclose(m2, a * m1, rtol=1e-9, atol=1e-12)


def test_mel_filterbank_unit_peaks():
    fb = af.mel_filterbank(SR, 2048, 128)
    assert fb.shape == (128, 1025)
    assert np.allclose(fb.max(axis=1), 1.0)
    assert (fb >= 0).all()


def test_mel_matches_dense_oracle_on_noise():
    rng = np.random.default_rng(6)
    cfg = af.FeatureConfig(fft_size=512, mel_bands=24, mfcc_coeffs=12)
    clip = af.AudioClip(SR, rng.normal(size=SR // 2))
    power = np.abs(af.stft(clip, cfg)) ** 2
    fb = af.mel_filterbank(SR, 512, 24)
    expected = np.einsum("tk,mk->tm", power, fb)
    got = af.mel_spectrogram(clip, cfg)
    assert np.allclose(got.data, expected, rtol=1e-12, atol=1e-12)
    assert got.dim == 24 and got.kind == "mel"


def test_log_mel_silence_is_flat_and_db_ratio():
    silent = af.log_mel(af.AudioClip(SR, np.zeros(SR)))
    assert np.allclose(silent.data, 0.0)  # floor everywhere, referenced to itself
    # two constant-power signals 10x apart differ by 10 dB on overlapping bands
    rng = np.random.default_rng(7)
    x = rng.normal(size=SR)
    cfg = af.FeatureConfig(fft_size=512, mel_bands=16, mfcc_coeffs=8)
    a = af.mel_spectrogram(af.AudioClip(SR, x), cfg).data
    da = 10 * np.log10(np.maximum(a, 1e-10))
    db10 = 10 * np.log10(np.maximum(10 * a, 1e-10))
    mask = a > 1e-8
    assert np.allclose((db10 - da)[mask], 10.0, atol=1e-9)


def test_log_mel_monotone_in_power():
    rng = np.random.default_rng(8)
    clip = af.AudioClip(SR, rng.normal(size=SR))
    cfg = af.FeatureConfig(fft_size=512, mel_bands=16, mfcc_coeffs=8)
    mel = af.mel_spectrogram(clip, cfg).data
    lm = af.log_mel(clip, cfg).data
    flat_mel = mel.ravel()
    flat_lm = lm.ravel()
    idx = np.argsort(flat_mel)
    assert np.all(np.diff(flat_lm[idx]) >= -1e-12)


def test_mfcc_constant_vector_concentrates_in_c0():
    q = af.dct_matrix(32)
    out = q @ np.full(32, 3.0)
    assert abs(out[0]) > 1e-9
    assert np.allclose(out[1:], 0.0, atol=1e-12)


def test_dct_orthonormal_and_matches_naive():
    q = af.dct_matrix(40)
    assert np.abs(q @ q.T - np.eye(40)).max() < 1e-10
    rng = np.random.default_rng(9)
    for _ in range(5):
        x = rng.normal(size=40)
        assert np.allclose(q @ x, oracles.dct2_orthonormal(x.tolist()), atol=1e-9)


def test_mfcc_shape_and_default_dim():
    clip = tone(440.0)
    out = af.mfcc(clip)
    assert out.dim == 128 and out.kind == "mfcc"
    cfg = af.FeatureConfig(mfcc_coeffs=13)
    assert af.mfcc(clip, cfg).dim == 13


def test_chroma_440_is_class_a_and_octave_equivalence():
    out = af.chroma_stft(tone(440.0, 2.0))
    mid = out.data[5:-5]
    assert np.all(np.argmax(mid, axis=1) == 0)  # class 0 = A
    pair = af.chroma_stft(
        af.AudioClip(SR, tone(440.0, 2.0).samples[:, 0] + tone(880.0, 2.0).samples[:, 0])
    )
    assert np.all(np.argmax(pair.data[5:-5], axis=1) == 0)
    silent = af.chroma_stft(af.AudioClip(SR, np.zeros(SR)))
    assert np.all(silent.data == 0)


def test_spectral_stats_tone_and_edges():
    clip = tone(1000.0, 2.0)
    stats = af.spectral_stats(clip)
    mid = slice(4, -4)
    assert np.all(np.abs(stats["centroid"].data[mid, 0] - 1000.0) < SR / 2048 + 1e-9)
    assert stats["contrast"].data.shape[1] == 7
    assert np.all(stats["rolloff"].data >= 0)
    const = af.spectral_stats(af.AudioClip(SR, np.ones(SR)))
    assert np.all(const["zcr"].data == 0)
    alternating = af.AudioClip(SR, np.where(np.arange(SR) % 2 == 0, 1.0, -1.0))
    assert np.all(af.spectral_stats(alternating)["zcr"].data == 1.0)


def test_spectral_stats_match_direct_formulas():
    rng = np.random.default_rng(10)
    cfg = af.FeatureConfig(fft_size=512, mel_bands=32, mfcc_coeffs=16)
    clip = af.AudioClip(SR, rng.normal(size=SR))
    stats = af.spectral_stats(clip, cfg)
    power = np.abs(af.stft(clip, cfg)) ** 2
    freqs = np.fft.rfftfreq(512, 1 / SR)
    for t in (0, 3, 9):
        p = power[t]
        cen = float(p @ freqs / p.sum())
        assert stats["centroid"].data[t, 0] == pytest.approx(cen, rel=1e-12)
        bw = math.sqrt(float(((freqs - cen) ** 2 * p).sum() / p.sum()))
        assert stats["bandwidth"].data[t, 0] == pytest.approx(bw, rel=1e-12)
        cum = np.cumsum(p)
        roll = freqs[np.searchsorted(cum, 0.95 * cum[-1])]
        assert stats["rolloff"].data[t, 0] == pytest.approx(roll)


def test_all_extractors_share_frame_count():
    clip = af.AudioClip(SR, np.random.default_rng(11).normal(size=32000))
    t = -(-32000 // 1600)
    cfg = af.FeatureConfig()
    outs = [
        af.mel_spectrogram(clip, cfg),
        af.log_mel(clip, cfg),
        af.mfcc(clip, cfg),
        af.chroma_stft(clip, cfg),
    ]
    outs.extend(af.spectral_stats(clip, cfg).values())
    for fm in outs:
        assert fm.frames == t
        assert np.all(np.isfinite(fm.data))


def test_default_features_shape_and_delegation():
    clip = af.AudioClip(SR, np.random.default_rng(12).normal(size=160000))
    fm = af.extract_default_features(clip)
    assert (fm.frames, fm.dim) == (100, 128)
    assert np.array_equal(fm.data, af.log_mel(clip).data)


def test_hop_rejects_non_divisible_rate():
    with pytest.raises(ValueError, match="divisible"):
        af.hop_length(44104)
    assert af.hop_length(44100, 10) == 4410


def test_resample_linear():
    clip = af.AudioClip(10, np.arange(10.0))
    out = af.resample(clip, 20)
    assert out.sample_rate == 20
    assert np.allclose(out.samples[:10, 0], np.arange(10.0) / 2 + 0.0, atol=0.5)
    assert af.resample(clip, 10) is clip


def test_feature_dump_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    fm = af.FeatureMatrix(rng.normal(size=(20, 8)).astype(np.float32), kind="external")
    path = tmp_path / "dump.f32"
    af.write_feature_dump(path, fm)
    back = af.read_feature_dump(path)
    assert back.kind == "external"
    assert np.array_equal(back.data, fm.data)
    # corrupt length
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(DataError):
        af.read_feature_dump(path)


def test_feature_matrix_rejects_nonfinite():
    with pytest.raises(ValueError):
        af.FeatureMatrix(np.array([[np.nan, 1.0]]))
