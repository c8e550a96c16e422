import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dft_half_spectrum, istft_loops, rel_err, stft_loops
from sjen.audio import (
    Spectrogram,
    StftConfig,
    Waveform,
    istft,
    make_window,
    read_wav,
    stft,
    write_wav,
)
from sjen.errors import DataError, WavFormatError


def interior(cfg: StftConfig, n: int) -> slice:
    # samples covered by a full complement of overlapping windows
    ramp = cfg.window_len - cfg.hop
    return slice(ramp, n - ramp)


# -- StftConfig ----------------------------------------------------------------


def test_default_config_is_cola():
    cfg = StftConfig()
    assert cfg.window_len == 320 and cfg.hop == 160 and cfg.n_freq == 161
    assert cfg._cola_deviation() <= 1e-10


def test_plain_hann_at_half_overlap_rejected_at_construction():
    # the overlapped squared-window sum of a full hann at 50% ripples by 0.25,
    # so synthesis normalization would not be constant; the config refuses it
    with pytest.raises(DataError, match="COLA"):
        StftConfig(window_kind="hann", hop=160)


def test_plain_hann_at_quarter_hop_accepted():
    cfg = StftConfig(window_kind="hann", hop=80)
    assert cfg._cola_deviation() <= 1e-10


def test_bad_geometry_rejected():
    with pytest.raises(DataError):
        StftConfig(hop=0)
    with pytest.raises(DataError):
        StftConfig(window_len=400, fft_len=320)
    with pytest.raises(DataError):
        StftConfig(window_kind="blackman")


def test_too_short_waveform_error_names_minimum():
    cfg = StftConfig()
    with pytest.raises(DataError, match="320"):
        stft(Waveform(np.zeros(100), 16000), cfg)


# -- stft examples -------------------------------------------------------------


def test_dc_input_rect_window_concentrates_in_bin_zero():
    cfg = StftConfig(window_kind="rect")
    x = Waveform(np.ones(1600), 16000)
    spec = stft(x, cfg)
    assert np.all(spec.magnitude[:, 0] > 100.0)
    assert np.max(spec.magnitude[:, 1:]) <= 1e-10


def test_bin_centered_sinusoid_peaks_at_its_bin():
    cfg = StftConfig(window_kind="rect")
    k = 7
    n = np.arange(3200)
    x = Waveform(np.cos(2 * np.pi * k * n / cfg.fft_len), 16000)
    spec = stft(x, cfg)
    mags = spec.magnitude
    assert np.all(mags[:, k] > 100.0)
    off = np.delete(mags, k, axis=1)
    assert np.max(off) <= 1e-9


def test_stft_matches_direct_dft_oracle():
    cfg = StftConfig()
    rng = np.random.default_rng(0)
    x = rng.standard_normal(16000)
    spec = stft(Waveform(x, 16000), cfg)
    want = stft_loops(x, cfg.window, cfg.hop, cfg.fft_len)
    got = spec.magnitude * (spec.phase[..., 0] + 1j * spec.phase[..., 1])
    assert rel_err(np.abs(got), np.abs(want)) <= 1e-9
    assert rel_err(got.real, want.real) <= 1e-9
    assert rel_err(got.imag, want.imag) <= 1e-9


def test_phase_bins_are_unit_vectors():
    cfg = StftConfig()
    rng = np.random.default_rng(1)
    spec = stft(Waveform(rng.standard_normal(8000), 16000), cfg)
    norms = np.sqrt(spec.phase[..., 0] ** 2 + spec.phase[..., 1] ** 2)
    assert np.max(np.abs(norms - 1.0)) <= 1e-6


def test_parseval_per_frame():
    cfg = StftConfig()
    rng = np.random.default_rng(2)
    x = rng.standard_normal(4800)
    spec = stft(Waveform(x, 16000), cfg)
    grid = spec.magnitude * (spec.phase[..., 0] + 1j * spec.phase[..., 1])
    for m in range(grid.shape[0]):
        seg = x[m * cfg.hop : m * cfg.hop + cfg.window_len] * cfg.window
        time_energy = float(np.sum(seg**2))
        mags2 = np.abs(grid[m]) ** 2
        spec_energy = (mags2[0] + 2 * np.sum(mags2[1:-1]) + mags2[-1]) / cfg.fft_len
        assert abs(spec_energy - time_energy) <= 1e-8 * max(time_energy, 1.0)


# -- istft examples ------------------------------------------------------------


def test_round_trip_interior():
    cfg = StftConfig()
    rng = np.random.default_rng(3)
    x = rng.standard_normal(16000)
    y = istft(stft(Waveform(x, 16000), cfg)).samples
    sl = interior(cfg, len(y))
    err = np.linalg.norm(y[sl] - x[: len(y)][sl]) / np.linalg.norm(x[: len(y)][sl])
    assert err <= 1e-6


def test_zero_spectrogram_gives_silence():
    cfg = StftConfig()
    phase = np.zeros((30, cfg.n_freq, 2))
    phase[..., 0] = 1.0
    spec = Spectrogram(np.zeros((30, cfg.n_freq)), phase, cfg)
    out = istft(spec)
    assert np.array_equal(out.samples, np.zeros_like(out.samples))
    assert len(out) == 29 * cfg.hop + cfg.window_len


def test_mixed_magnitude_and_phase_synthesis_matches_oracle():
    cfg = StftConfig()
    rng = np.random.default_rng(4)
    x = rng.standard_normal(4800)
    y = rng.standard_normal(4800)
    sx = stft(Waveform(x, 16000), cfg)
    sy = stft(Waveform(y, 16000), cfg)
    mixed = Spectrogram(sx.magnitude, sy.phase, cfg)
    out = istft(mixed).samples
    assert np.all(np.isfinite(out))
    # differs from both parents
    n = len(out)
    assert np.linalg.norm(out - x[:n]) / np.linalg.norm(x[:n]) > 1e-3
    assert np.linalg.norm(out - y[:n]) / np.linalg.norm(y[:n]) > 1e-3
    grid = sx.magnitude * (sy.phase[..., 0] + 1j * sy.phase[..., 1])
    want = istft_loops(grid, cfg.window, cfg.hop, cfg.fft_len)
    assert rel_err(out, want) <= 1e-9


@given(st.integers(0, 2**32 - 1), st.integers(2000, 9000))
@settings(max_examples=20, deadline=None)
def test_round_trip_interior_property(seed, n):
    cfg = StftConfig()
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    y = istft(stft(Waveform(x, 16000), cfg)).samples
    sl = interior(cfg, len(y))
    err = np.linalg.norm(y[sl] - x[: len(y)][sl]) / np.linalg.norm(x[: len(y)][sl])
    assert err <= 1e-6


# -- waveform / spectrogram validation -------------------------------------------


def test_waveform_rejects_nonfinite_and_empty():
    with pytest.raises(DataError):
        Waveform(np.array([1.0, np.inf]), 16000)
    with pytest.raises(DataError):
        Waveform(np.array([]), 16000)
    with pytest.raises(DataError):
        Waveform(np.zeros(10), 0)


def test_spectrogram_rejects_negative_magnitude_and_nonunit_phase():
    cfg = StftConfig()
    phase = np.zeros((5, cfg.n_freq, 2))
    phase[..., 0] = 1.0
    with pytest.raises(DataError):
        Spectrogram(-np.ones((5, cfg.n_freq)), phase, cfg)
    bad_phase = phase * 2.0
    with pytest.raises(DataError):
        Spectrogram(np.ones((5, cfg.n_freq)), bad_phase, cfg)


# -- WAV io ----------------------------------------------------------------------


def test_float32_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(5)
    x = rng.standard_normal(1000).astype(np.float32).astype(np.float64)
    path = tmp_path / "f32.wav"
    write_wav(path, Waveform(x, 16000), codec="float32")
    (back,) = read_wav(path)
    assert np.array_equal(back.samples, x)
    assert back.sample_rate == 16000


def test_pcm16_scale_definition(tmp_path):
    path = tmp_path / "p16.wav"
    write_wav(path, Waveform(np.array([0.5, -0.5, 0.0]), 8000), codec="pcm16")
    (back,) = read_wav(path)
    assert back.samples[0] == 16384 / 32768  # exactly 0.5
    assert back.samples[2] == 0.0


def test_stereo_file_loads_as_two_equal_length_waveforms(tmp_path):
    rng = np.random.default_rng(6)
    quant = lambda a: a.astype(np.float32).astype(np.float64)
    left = Waveform(quant(rng.standard_normal(500) * 0.1), 16000)
    right = Waveform(quant(rng.standard_normal(500) * 0.1), 16000)
    path = tmp_path / "st.wav"
    write_wav(path, [left, right], codec="float32")
    chans = read_wav(path)
    assert len(chans) == 2
    assert len(chans[0]) == len(chans[1]) == 500
    assert np.array_equal(chans[0].samples, left.samples)
    assert np.array_equal(chans[1].samples, right.samples)


def test_malformed_header_truncated_data_and_bad_codec_are_distinct(tmp_path):
    bad_magic = tmp_path / "a.wav"
    bad_magic.write_bytes(b"JUNKJUNKJUNKJUNK")
    with pytest.raises(WavFormatError, match="RIFF"):
        read_wav(bad_magic)

    ok = tmp_path / "ok.wav"
    write_wav(ok, Waveform(np.zeros(100), 16000), codec="pcm16")
    blob = ok.read_bytes()
    truncated = tmp_path / "b.wav"
    truncated.write_bytes(blob[: len(blob) - 50])
    with pytest.raises(WavFormatError, match="truncat"):
        read_wav(truncated)

    # flip the format tag to an unsupported codec id
    mutated = bytearray(blob)
    fmt_at = blob.find(b"fmt ") + 8
    mutated[fmt_at : fmt_at + 2] = struct.pack("<H", 7)  # mu-law
    bad_codec = tmp_path / "c.wav"
    bad_codec.write_bytes(bytes(mutated))
    with pytest.raises(WavFormatError, match="codec|format"):
        read_wav(bad_codec)


def test_missing_file_is_data_error():
    with pytest.raises(DataError):
        read_wav("/nonexistent/nowhere.wav")


def test_window_kinds():
    w = make_window("sqrt_hann", 320)
    assert abs(w[160] - 1.0) <= 1e-12  # midpoint of the periodic window
    assert w[0] == 0.0
    assert np.all(make_window("rect", 8) == 1.0)
