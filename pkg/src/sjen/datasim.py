"""Mixture simulation: level randomization, SNR-exact noise scaling,
binaural convolution, and the synthetic desk-scale corpus generator.

The clean utterance is rescaled so its RMS is exactly 10^(eps/20) for an
integer eps drawn from [-35, -15] dB. The noise is rescaled so the
clean-to-noise power ratio hits the requested SNR exactly. The binaural
pair convolves the scaled clean and noise with per-ear impulse responses
(full convolution truncated to the input length, so the monaural and
binaural views share one time geometry).

Synthetic sources stand in for real corpora: amplitude-modulated harmonic
complexes for speech, spectrally colored noise, and sparse decaying impulse
response pairs with interaural time and level differences. Every record is
generated from its own seed derived from (corpus seed, split, index), so
corpora are byte-identical across runs and machines regardless of
generation order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, read_wav, write_wav
from .errors import DataError

EPSILON_GRID = tuple(range(-35, -14))  # -35 .. -15 dB inclusive
NOISE_COLORS = ("white", "pink", "brown", "band")


def _power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


@dataclass(frozen=True)
class MixtureSpec:
    epsilon_db: int
    snr_db: float
    seed: int
    brir_id: str = ""

    def __post_init__(self):
        if self.epsilon_db not in EPSILON_GRID:
            raise DataError(
                f"epsilon_db must lie on the integer grid "
                f"[{EPSILON_GRID[0]}, {EPSILON_GRID[-1]}], got {self.epsilon_db}"
            )
        if not np.isfinite(self.snr_db):
            raise DataError(f"snr_db must be finite, got {self.snr_db}")


@dataclass(frozen=True)
class MixtureRecord:
    clean_scaled: Waveform
    noise_scaled: Waveform
    mono: Waveform
    left: Waveform
    right: Waveform
    spec: MixtureSpec
    achieved_snr_db: float


def scale_clean(x: Waveform, epsilon_db: float) -> Waveform:
    """Rescale so the output RMS equals 10^(epsilon_db/20) exactly."""
    sigma = x.rms()
    if sigma == 0.0:
        raise DataError("cannot level a silent clean signal (zero RMS)")
    nu = 10.0 ** (epsilon_db / 20.0) / sigma
    return Waveform(nu * x.samples, x.sample_rate)


def scale_noise(v: Waveform, x_hat: Waveform, snr_db: float) -> Waveform:
    """Rescale noise so 10*log10(P_clean / P_noise) equals snr_db exactly."""
    p_v = _power(v.samples)
    if p_v == 0.0:
        raise DataError("cannot rescale silent noise (zero power)")
    p_x = _power(x_hat.samples)
    if p_x == 0.0:
        raise DataError("SNR is undefined against a silent clean reference")
    theta = np.sqrt(p_x / (p_v * 10.0 ** (snr_db / 10.0)))
    return Waveform(theta * v.samples, v.sample_rate)


def mix_mono(x_hat: Waveform, v_hat: Waveform) -> Waveform:
    if len(x_hat) != len(v_hat):
        raise DataError(
            f"mixture operands must share length, got {len(x_hat)} and {len(v_hat)}"
        )
    return Waveform(x_hat.samples + v_hat.samples, x_hat.sample_rate)


def _binaural_channel(x: np.ndarray, v: np.ndarray, h_x, h_v) -> np.ndarray:
    n = len(x)
    return (np.convolve(x, h_x) + np.convolve(v, h_v))[:n]


def mix_binaural(
    x_hat: Waveform,
    v_hat: Waveform,
    h_x_left: np.ndarray,
    h_x_right: np.ndarray,
    h_v_left: np.ndarray,
    h_v_right: np.ndarray,
) -> tuple[Waveform, Waveform]:
    """Per-ear mixtures: convolve source and noise with their ear responses.

    Full linear convolution, truncated back to the input length.
    """
    if len(x_hat) != len(v_hat):
        raise DataError(
            f"mixture operands must share length, got {len(x_hat)} and {len(v_hat)}"
        )
    responses = (h_x_left, h_x_right, h_v_left, h_v_right)
    for i, h in enumerate(responses):
        h = np.asarray(h, dtype=np.float64)
        if h.size == 0:
            raise DataError(f"impulse response {i} is empty")
        if not np.all(np.isfinite(h)):
            raise DataError(f"impulse response {i} contains non-finite values")
    x, v = x_hat.samples, v_hat.samples
    left = _binaural_channel(x, v, np.asarray(h_x_left, float), np.asarray(h_v_left, float))
    right = _binaural_channel(x, v, np.asarray(h_x_right, float), np.asarray(h_v_right, float))
    sr = x_hat.sample_rate
    return Waveform(left, sr), Waveform(right, sr)


# -- synthetic sources -------------------------------------------------------


def synth_clean(rng: np.random.Generator, n_samples: int, sample_rate: int) -> Waveform:
    """Amplitude-modulated harmonic complex with slow pitch drift."""
    t = np.arange(n_samples) / sample_rate
    f0 = rng.uniform(100.0, 280.0)
    drift = rng.uniform(-12.0, 12.0)
    inst_f0 = f0 + drift * t
    phase0 = 2.0 * np.pi * np.cumsum(inst_f0) / sample_rate
    n_harm = int(rng.integers(6, 13))
    x = np.zeros(n_samples)
    for k in range(1, n_harm + 1):
        if k * (f0 + abs(drift) * t[-1]) >= sample_rate / 2:
            break
        amp = 1.0 / k * rng.uniform(0.6, 1.0)
        x += amp * np.sin(k * phase0 + rng.uniform(0, 2 * np.pi))
    am_rate = rng.uniform(2.5, 7.5)
    am_depth = rng.uniform(0.5, 0.9)
    envelope = 1.0 + am_depth * np.sin(2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi))
    x *= envelope
    x /= max(np.sqrt(_power(x)), 1e-12)
    return Waveform(x, sample_rate)


def synth_noise(
    rng: np.random.Generator, n_samples: int, sample_rate: int, color: str
) -> Waveform:
    """Spectrally shaped Gaussian noise of the requested color."""
    if color not in NOISE_COLORS:
        raise DataError(f"unknown noise color {color!r}, expected one of {NOISE_COLORS}")
    white = rng.standard_normal(n_samples)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / sample_rate)
    safe = np.maximum(freqs, freqs[1] if n_samples > 1 else 1.0)
    if color == "white":
        gain = np.ones_like(safe)
    elif color == "pink":
        gain = 1.0 / np.sqrt(safe)
    elif color == "brown":
        gain = 1.0 / safe
    else:
        lo = rng.uniform(200.0, 1500.0)
        hi = lo * rng.uniform(2.0, 6.0)
        gain = np.where((freqs >= lo) & (freqs <= min(hi, sample_rate / 2)), 1.0, 0.05)
    gain[0] = 0.0
    x = np.fft.irfft(spectrum * gain, n=n_samples)
    x /= max(np.sqrt(_power(x)), 1e-12)
    return Waveform(x, sample_rate)


def synth_brir(
    rng: np.random.Generator, n_taps: int, sample_rate: int
) -> tuple[np.ndarray, np.ndarray]:
    """Sparse decaying impulse-response pair with interaural differences.

    One ear leads by up to ~0.7 ms and is up to 6 dB louder; both ears share
    late sparse reflections with exponential decay.
    """
    if n_taps < 16:
        raise DataError(f"impulse responses need at least 16 taps, got {n_taps}")
    itd = int(rng.integers(0, int(0.0007 * sample_rate) + 1))
    ild_db = rng.uniform(0.0, 6.0)
    left_leads = bool(rng.integers(0, 2))
    g_near, g_far = 1.0, 10.0 ** (-ild_db / 20.0)
    h_l = np.zeros(n_taps)
    h_r = np.zeros(n_taps)
    t0 = 2
    if left_leads:
        h_l[t0] = g_near
        h_r[min(t0 + itd, n_taps - 1)] = g_far
    else:
        h_r[t0] = g_near
        h_l[min(t0 + itd, n_taps - 1)] = g_far
    n_ref = int(rng.integers(3, 7))
    for _ in range(n_ref):
        pos = int(rng.integers(t0 + itd + 2, n_taps))
        amp = rng.uniform(0.05, 0.35) * np.exp(-3.0 * pos / n_taps)
        sign = 1.0 if rng.integers(0, 2) else -1.0
        h_l[pos] += sign * amp
        h_r[min(pos + int(rng.integers(0, 3)), n_taps - 1)] += sign * amp * rng.uniform(0.7, 1.0)
    return h_l, h_r


# -- corpus generation -------------------------------------------------------


@dataclass(frozen=True)
class CorpusConfig:
    out_dir: str
    seed: int = 0
    n_train: int = 64
    n_test: int = 16
    duration_s: float = 1.0
    sample_rate: int = 16000
    train_snr_db: tuple[float, ...] = tuple(float(s) for s in range(-5, 11))
    test_snr_db: tuple[float, ...] = (-5.0, 0.0, 5.0, 10.0)
    ir_taps: int = 96

    def __post_init__(self):
        if self.n_train < 0 or self.n_test < 0:
            raise DataError("corpus sizes must be >= 0")
        if self.duration_s <= 0:
            raise DataError(f"duration must be positive, got {self.duration_s}")
        if not self.train_snr_db or not self.test_snr_db:
            raise DataError("SNR grids must be non-empty")


def achieved_snr_db(x_hat: Waveform, v_hat: Waveform) -> float:
    return 10.0 * np.log10(_power(x_hat.samples) / _power(v_hat.samples))


def simulate_record(spec: MixtureSpec, cfg: CorpusConfig) -> MixtureRecord:
    """Generate one fully synthetic mixture from its spec's own seed."""
    rng = np.random.default_rng(spec.seed)
    n = int(round(cfg.duration_s * cfg.sample_rate))
    clean = synth_clean(rng, n, cfg.sample_rate)
    color = NOISE_COLORS[int(rng.integers(0, len(NOISE_COLORS)))]
    noise = synth_noise(rng, n, cfg.sample_rate, color)
    x_hat = scale_clean(clean, spec.epsilon_db)
    v_hat = scale_noise(noise, x_hat, spec.snr_db)
    mono = mix_mono(x_hat, v_hat)
    h_xl, h_xr = synth_brir(rng, cfg.ir_taps, cfg.sample_rate)
    h_vl, h_vr = synth_brir(rng, cfg.ir_taps, cfg.sample_rate)
    left, right = mix_binaural(x_hat, v_hat, h_xl, h_xr, h_vl, h_vr)
    return MixtureRecord(
        clean_scaled=x_hat,
        noise_scaled=v_hat,
        mono=mono,
        left=left,
        right=right,
        spec=spec,
        achieved_snr_db=achieved_snr_db(x_hat, v_hat),
    )


def _record_seed(corpus_seed: int, split_index: int, record_index: int) -> int:
    ss = np.random.SeedSequence((corpus_seed, split_index, record_index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def build_specs(cfg: CorpusConfig, split: str) -> list[MixtureSpec]:
    """Deterministic per-record specs; test SNRs cycle through the conditions."""
    if split == "train":
        count, split_index, snrs = cfg.n_train, 0, cfg.train_snr_db
    elif split == "test":
        count, split_index, snrs = cfg.n_test, 1, cfg.test_snr_db
    else:
        raise DataError(f"unknown split {split!r}")
    specs = []
    for i in range(count):
        seed = _record_seed(cfg.seed, split_index, i)
        pick = np.random.default_rng(seed)
        eps = int(pick.integers(EPSILON_GRID[0], EPSILON_GRID[-1] + 1))
        if split == "train":
            snr = float(snrs[int(pick.integers(0, len(snrs)))])
        else:
            snr = float(snrs[i % len(snrs)])
        specs.append(
            MixtureSpec(epsilon_db=eps, snr_db=snr, seed=seed, brir_id=f"{split}-{i}")
        )
    return specs


def synth_corpus(cfg: CorpusConfig) -> dict[str, Path]:
    """Write both splits: five WAVs per record plus one JSONL manifest per split.

    Returns {"train": manifest_path, "test": manifest_path}.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifests = {}
    for split in ("train", "test"):
        split_dir = out / split
        split_dir.mkdir(parents=True, exist_ok=True)
        rows = []
        for i, spec in enumerate(build_specs(cfg, split)):
            record = simulate_record(spec, cfg)
            rid = f"{split}-{i:04d}"
            paths = {}
            for part, wave in (
                ("clean", record.clean_scaled),
                ("noise", record.noise_scaled),
                ("mono", record.mono),
                ("left", record.left),
                ("right", record.right),
            ):
                rel = f"{split}/{rid}_{part}.wav"
                write_wav(out / rel, wave, codec="float32")
                paths[part] = rel
            rows.append(
                {
                    "id": rid,
                    **paths,
                    "epsilon_db": spec.epsilon_db,
                    "snr_db": spec.snr_db,
                    "achieved_snr_db": record.achieved_snr_db,
                    "seed": spec.seed,
                }
            )
        manifest = out / f"{split}.jsonl"
        with open(manifest, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
        manifests[split] = manifest
    return manifests


def load_manifest(path) -> list[dict]:
    """Read a JSONL manifest; WAV paths come back resolved against its directory."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest {path} does not exist")
    base = path.parent
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed manifest row: {exc}") from exc
            for key in ("id", "clean", "noise", "mono", "left", "right",
                        "epsilon_db", "snr_db", "achieved_snr_db", "seed"):
                if key not in row:
                    raise DataError(f"{path}:{lineno}: manifest row missing field {key!r}")
            for key in ("clean", "noise", "mono", "left", "right"):
                row[key] = str(base / row[key])
            rows.append(row)
    if not rows:
        raise DataError(f"manifest {path} is empty")
    return rows


def load_record_audio(row: dict) -> dict[str, Waveform]:
    """Load the five waveforms a manifest row points at."""
    out = {}
    for key in ("clean", "noise", "mono", "left", "right"):
        channels = read_wav(row[key])
        if len(channels) != 1:
            raise DataError(f"{row[key]}: expected mono WAV, found {len(channels)} channels")
        out[key] = channels[0]
    return out
