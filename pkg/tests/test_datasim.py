import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import convolve_loops, rel_err
from sjen.audio import Waveform, read_wav
from sjen.datasim import (
    EPSILON_GRID,
    CorpusConfig,
    achieved_snr_db,
    build_specs,
    load_manifest,
    load_record_audio,
    mix_binaural,
    mix_mono,
    scale_clean,
    scale_noise,
    simulate_record,
    synth_brir,
    synth_clean,
    synth_corpus,
    synth_noise,
)
from sjen.errors import DataError


def rand_wave(seed, n=4000, scale=1.0):
    rng = np.random.default_rng(seed)
    return Waveform(rng.standard_normal(n) * scale, 16000)


# -- level scaling ------------------------------------------------------------


def test_scale_clean_unit_rms_at_minus_20db():
    x = rand_wave(0)
    x = Waveform(x.samples / x.rms(), 16000)  # exact unit RMS
    out = scale_clean(x, -20.0)
    assert abs(out.rms() - 0.1) <= 1e-12


def test_scale_clean_half_rms_at_zero_db():
    x = rand_wave(1)
    x = Waveform(x.samples / x.rms() * 0.5, 16000)
    out = scale_clean(x, 0.0)
    assert abs(out.rms() - 1.0) <= 1e-12
    # the gain itself is 1/0.5 = 2
    assert rel_err(out.samples, 2.0 * x.samples) <= 1e-12


@given(st.integers(0, 2**32 - 1), st.floats(-40, 5))
@settings(max_examples=50, deadline=None)
def test_scale_clean_hits_target_rms(seed, eps_db):
    out = scale_clean(rand_wave(seed, scale=3.0), eps_db)
    target = 10.0 ** (eps_db / 20.0)
    assert abs(out.rms() - target) <= 1e-12 * max(1.0, target)


def test_scale_noise_equal_power_cases():
    x = rand_wave(2)
    v = Waveform(rand_wave(3).samples * (x.rms() / rand_wave(3).rms()), 16000)
    # equal power at 0 dB: gain 1
    out0 = scale_noise(v, x, 0.0)
    assert rel_err(out0.samples, v.samples) <= 1e-12
    # 10 dB: amplitude shrinks by 10^(-1/2)
    out10 = scale_noise(v, x, 10.0)
    assert rel_err(out10.samples, v.samples * 10 ** (-0.5)) <= 1e-12


@given(st.integers(0, 2**32 - 1), st.floats(-10, 20))
@settings(max_examples=50, deadline=None)
def test_scale_noise_achieves_requested_snr(seed, snr_db):
    x = rand_wave(seed, scale=0.7)
    v = rand_wave(seed + 1, scale=2.0)
    v_hat = scale_noise(v, x, snr_db)
    assert abs(achieved_snr_db(x, v_hat) - snr_db) <= 0.01


def test_silent_inputs_rejected():
    silent = Waveform(np.zeros(100), 16000)
    live = rand_wave(4, n=100)
    with pytest.raises(DataError):
        scale_clean(silent, -20.0)
    with pytest.raises(DataError):
        scale_noise(silent, live, 0.0)
    with pytest.raises(DataError):
        scale_noise(live, silent, 0.0)


# -- mixing ----------------------------------------------------------------------


def test_mix_mono_degenerate_and_linear():
    x = rand_wave(5)
    v = rand_wave(6)
    zero = Waveform(np.zeros(len(x)), 16000)
    with pytest.raises(DataError):
        mix_mono(x, Waveform(np.zeros(10), 16000))  # length mismatch
    assert np.array_equal(mix_mono(x, zero).samples, x.samples)
    assert np.array_equal(mix_mono(zero, v).samples, v.samples)
    a = 2.5
    left = mix_mono(Waveform(a * x.samples, 16000), Waveform(a * v.samples, 16000))
    right = mix_mono(x, v)
    assert rel_err(left.samples, a * right.samples) <= 1e-12


def delta(k=0, taps=32):
    h = np.zeros(taps)
    h[k] = 1.0
    return h


def test_mix_binaural_with_identity_impulses_equals_mono():
    x = rand_wave(7)
    v = rand_wave(8)
    yl, yr = mix_binaural(x, v, delta(), delta(), delta(), delta())
    mono = mix_mono(x, v)
    assert np.array_equal(yl.samples, mono.samples)
    assert np.array_equal(yr.samples, mono.samples)


def test_mix_binaural_delayed_impulse_shifts_output():
    x = rand_wave(9)
    v = rand_wave(10)
    k = 5
    yl, _ = mix_binaural(x, v, delta(k), delta(), delta(k), delta())
    mono = mix_mono(x, v)
    # delayed delta: output is the mix shifted by k (truncated to input length)
    assert rel_err(yl.samples[k:], mono.samples[: len(x) - k]) <= 1e-12
    assert np.allclose(yl.samples[:k], 0.0)


def test_mix_binaural_matches_direct_convolution_oracle():
    rng = np.random.default_rng(11)
    x = rand_wave(12, n=300)
    v = rand_wave(13, n=300)
    hxl, hxr, hvl, hvr = (rng.standard_normal(24) * 0.3 for _ in range(4))
    yl, yr = mix_binaural(x, v, hxl, hxr, hvl, hvr)
    want_l = convolve_loops(x.samples, hxl)[:300] + convolve_loops(v.samples, hvl)[:300]
    want_r = convolve_loops(x.samples, hxr)[:300] + convolve_loops(v.samples, hvr)[:300]
    assert rel_err(yl.samples, want_l) <= 1e-10
    assert rel_err(yr.samples, want_r) <= 1e-10


# -- synthesis sources --------------------------------------------------------------


def test_synth_clean_is_normalized_and_voiced():
    rng = np.random.default_rng(14)
    x = synth_clean(rng, 8000, 16000)
    assert abs(x.rms() - 1.0) <= 1e-9
    spec = np.abs(np.fft.rfft(x.samples))
    freqs = np.fft.rfftfreq(len(x.samples), 1 / 16000)
    # energy concentrates in the harmonic band, not above 6 kHz
    assert spec[freqs < 3000].sum() > 5 * spec[freqs > 6000].sum()


def test_synth_noise_colors_shape_the_spectrum():
    rng = np.random.default_rng(15)
    n = 16000
    white = synth_noise(rng, n, 16000, "white")
    pink = synth_noise(rng, n, 16000, "pink")
    assert abs(white.rms() - 1.0) <= 1e-9

    def band_energy(w, lo, hi):
        s = np.abs(np.fft.rfft(w.samples)) ** 2
        f = np.fft.rfftfreq(n, 1 / 16000)
        return s[(f >= lo) & (f < hi)].sum()

    # pink noise tilts energy toward low frequencies relative to white
    white_ratio = band_energy(white, 100, 500) / band_energy(white, 4000, 8000)
    pink_ratio = band_energy(pink, 100, 500) / band_energy(pink, 4000, 8000)
    assert pink_ratio > 5 * white_ratio


def test_synth_brir_bounded_delay_and_level_difference():
    rng = np.random.default_rng(16)
    hl, hr = synth_brir(rng, 96, 16000)
    assert len(hl) == len(hr) == 96
    dl, dr = np.argmax(np.abs(hl)), np.argmax(np.abs(hr))
    assert abs(int(dl) - int(dr)) <= int(0.7e-3 * 16000) + 1  # interaural delay cap
    el, er = np.sum(hl**2), np.sum(hr**2)
    ild = abs(10 * np.log10(el / er))
    assert ild <= 6.0 + 1e-6


# -- corpus ---------------------------------------------------------------------------


def test_epsilon_grid_range():
    assert min(EPSILON_GRID) == -35 and max(EPSILON_GRID) == -15


def test_build_specs_snr_policy():
    cfg = CorpusConfig(out_dir="unused", seed=0, n_train=8, n_test=8)
    train = build_specs(cfg, "train")
    test = build_specs(cfg, "test")
    assert len(train) == 8 and len(test) == 8
    assert all(s.snr_db in cfg.train_snr_db for s in train)
    assert [s.snr_db for s in test] == [-5.0, 0.0, 5.0, 10.0] * 2  # round robin
    assert all(s.epsilon_db in EPSILON_GRID for s in train)


def test_simulate_record_is_pure():
    cfg = CorpusConfig(out_dir="unused", seed=3, n_train=2, n_test=0, duration_s=0.3)
    spec = build_specs(cfg, "train")[0]
    a = simulate_record(spec, cfg)
    b = simulate_record(spec, cfg)
    assert np.array_equal(a.mono.samples, b.mono.samples)
    assert np.array_equal(a.left.samples, b.left.samples)


def test_synth_corpus_files_manifest_and_determinism(tmp_path):
    cfg_a = CorpusConfig(out_dir=str(tmp_path / "a"), seed=21, n_train=3, n_test=2,
                         duration_s=0.3)
    cfg_b = CorpusConfig(out_dir=str(tmp_path / "b"), seed=21, n_train=3, n_test=2,
                         duration_s=0.3)
    man_a = synth_corpus(cfg_a)
    man_b = synth_corpus(cfg_b)

    rows = [json.loads(line) for line in open(man_a["train"])]
    assert len(rows) == 3
    wavs = sorted((tmp_path / "a" / "train").glob("*.wav"))
    assert len(wavs) == 3 * 5  # clean, noise, mono, left, right per record

    for row in rows:
        assert abs(row["achieved_snr_db"] - row["snr_db"]) <= 0.01
        clean = read_wav(tmp_path / "a" / row["clean"])[0]
        noise = read_wav(tmp_path / "a" / row["noise"])[0]
        measured = achieved_snr_db(clean, noise)
        assert abs(measured - row["snr_db"]) <= 0.011  # float32 storage rounding

    # same seed, different directory: byte-identical files
    for split in ("train", "test"):
        for f in sorted((tmp_path / "a" / split).glob("*.wav")):
            twin = tmp_path / "b" / split / f.name
            assert f.read_bytes() == twin.read_bytes()
    assert Path(man_a["train"]).read_text() == Path(man_b["train"]).read_text()


def test_load_manifest_round_trip_and_errors(tmp_path):
    cfg = CorpusConfig(out_dir=str(tmp_path / "c"), seed=5, n_train=2, n_test=1,
                       duration_s=0.3)
    manifests = synth_corpus(cfg)
    rows = load_manifest(manifests["train"])
    assert len(rows) == 2
    audio = load_record_audio(rows[0])
    assert set(audio) >= {"clean", "noise", "mono", "left", "right"}
    assert len(audio["left"]) == len(audio["mono"])

    broken = tmp_path / "broken.jsonl"
    good = json.loads(Path(manifests["train"]).read_text().splitlines()[0])
    bad = {k: v for k, v in good.items() if k != "snr_db"}
    broken.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(DataError, match=":2:"):
        load_manifest(broken)

    with pytest.raises(DataError):
        load_manifest(tmp_path / "missing.jsonl")


def test_corpus_rejects_bad_shapes():
    with pytest.raises(DataError):
        CorpusConfig(out_dir="x", duration_s=0.0)
    with pytest.raises(DataError):
        CorpusConfig(out_dir="x", n_train=-1)
    with pytest.raises(DataError):
        CorpusConfig(out_dir="x", train_snr_db=())
