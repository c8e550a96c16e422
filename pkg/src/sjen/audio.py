"""Waveform I/O and the STFT/ISTFT analysis-synthesis front end.

Spectrograms are stored as a non-negative magnitude grid plus a per-bin unit
phase vector (cos, sin). Unit vectors keep the phase-similarity loss a plain
dot product and avoid angle-wrapping discontinuities in gradients.

The synthesis path applies the analysis window a second time and divides by
the overlapped window-squared sum, so configs are required to satisfy the
constant-overlap-add (COLA) property on the squared window. The default
window is the square root of a periodic Hann, which satisfies it exactly at
50% overlap.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError, WavFormatError

WINDOW_KINDS = ("sqrt_hann", "hann", "rect")

# |sum(w^2) - const| tolerance for accepting a config as COLA.
COLA_TOL = 1e-10
# Overlapped w^2 below this fraction of the COLA constant is treated as
# unrecoverable (the very first/last samples of a tapered window).
_EDGE_FLOOR = 1e-12


def make_window(kind: str, length: int) -> np.ndarray:
    """Periodic analysis window of the given kind."""
    if kind not in WINDOW_KINDS:
        raise DataError(f"unknown window kind {kind!r}; expected one of {WINDOW_KINDS}")
    if kind == "rect":
        return np.ones(length, dtype=np.float64)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)
    if kind == "hann":
        return hann
    return np.sqrt(hann)


@dataclass(frozen=True)
class Waveform:
    """Time-domain signal; samples are dimensionless amplitudes."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or samples.size < 1:
            raise DataError("waveform must be a non-empty 1-D sample sequence")
        if self.sample_rate <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise DataError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2)))


@dataclass(frozen=True)
class StftConfig:
    """Analysis-synthesis geometry. Validated for COLA at construction."""

    sample_rate: int = 16000
    window_len: int = 320
    hop: int = 160
    fft_len: int = 320
    window_kind: str = "sqrt_hann"
    window: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0 < self.hop <= self.window_len <= self.fft_len):
            raise DataError(
                f"need 0 < hop <= window_len <= fft_len, got "
                f"hop={self.hop} window_len={self.window_len} fft_len={self.fft_len}"
            )
        if self.sample_rate <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        window = make_window(self.window_kind, self.window_len)
        object.__setattr__(self, "window", window)
        dev = self._cola_deviation()
        if dev > COLA_TOL:
            raise DataError(
                f"window {self.window_kind!r} with hop {self.hop} is not COLA: "
                f"overlapped window-squared sum deviates by {dev:.3e} (> {COLA_TOL:.0e})"
            )

    @property
    def n_freq(self) -> int:
        return self.fft_len // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_len:
            raise DataError(
                f"waveform of {n_samples} samples is shorter than one window; "
                f"need at least {self.window_len} samples"
            )
        return 1 + (n_samples - self.window_len) // self.hop

    def frames_for_duration(self, seconds: float) -> int:
        return self.n_frames(int(round(seconds * self.sample_rate)))

    def output_len(self, n_frames: int) -> int:
        return (n_frames - 1) * self.hop + self.window_len

    def wsq_overlap(self, n_frames: int) -> np.ndarray:
        """Per-sample sum of squared windows over all frames."""
        acc = np.zeros(self.output_len(n_frames))
        wsq = self.window**2
        for m in range(n_frames):
            start = m * self.hop
            acc[start : start + self.window_len] += wsq
        return acc

    def cola_constant(self) -> float:
        # Value of the overlapped w^2 sum in the fully covered interior.
        per_period = self.window**2
        acc = np.zeros(self.hop)
        for off in range(0, self.window_len, self.hop):
            chunk = per_period[off : off + self.hop]
            acc[: chunk.size] += chunk
        return float(np.median(acc))

    def _cola_deviation(self) -> float:
        # Enough frames to cover several periods of the overlap pattern.
        n_frames = 4 * max(1, self.window_len // self.hop)
        acc = self.wsq_overlap(n_frames)
        interior = acc[self.window_len : self.output_len(n_frames) - self.window_len]
        if interior.size == 0:
            interior = acc
        return float(np.max(np.abs(interior - self.cola_constant())))

    def valid_interior(self, n_frames: int) -> np.ndarray:
        """Boolean mask of output samples whose w^2 coverage equals the COLA constant."""
        acc = self.wsq_overlap(n_frames)
        return np.abs(acc - self.cola_constant()) <= 1e-9 * self.cola_constant()


@dataclass(frozen=True)
class Spectrogram:
    """Magnitude (T, F) plus per-bin unit phase vectors (T, F, 2)."""

    magnitude: np.ndarray
    phase: np.ndarray
    config: StftConfig

    def __post_init__(self):
        mag = np.asarray(self.magnitude, dtype=np.float64)
        phase = np.asarray(self.phase, dtype=np.float64)
        object.__setattr__(self, "magnitude", mag)
        object.__setattr__(self, "phase", phase)
        if mag.ndim != 2:
            raise ShapeError(f"magnitude must be (T, F), got shape {mag.shape}")
        if phase.shape != mag.shape + (2,):
            raise ShapeError(
                f"phase must be (T, F, 2) matching magnitude {mag.shape}, got {phase.shape}"
            )
        if mag.shape[1] != self.config.n_freq:
            raise ShapeError(
                f"F={mag.shape[1]} does not match config fft_len//2+1={self.config.n_freq}"
            )
        if np.any(mag < 0):
            raise DataError("magnitude must be non-negative")
        norm_err = np.abs(np.sum(phase**2, axis=-1) - 1.0)
        if np.max(norm_err) > 1e-6:
            raise DataError(
                f"phase vectors must be unit length (max |cos^2+sin^2 - 1| = {np.max(norm_err):.3e})"
            )

    @property
    def n_frames(self) -> int:
        return int(self.magnitude.shape[0])

    @property
    def n_freq(self) -> int:
        return int(self.magnitude.shape[1])

    def to_complex(self) -> np.ndarray:
        return self.magnitude * (self.phase[..., 0] + 1j * self.phase[..., 1])


def polar_split(spec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Complex (T, F) grid -> (magnitude, unit phase vectors).

    Zero bins get the conventional phase (1, 0) so the unit-norm invariant holds.
    """
    mag = np.abs(spec)
    safe = np.where(mag > 0.0, mag, 1.0)
    phase = np.stack([spec.real / safe, spec.imag / safe], axis=-1)
    phase[mag == 0.0] = (1.0, 0.0)
    return mag, phase


def stft(w: Waveform, cfg: StftConfig) -> Spectrogram:
    """Windowed one-sided DFT; frames start at sample 0, no center padding."""
    n = len(w)
    n_frames = cfg.n_frames(n)  # raises if shorter than one window
    idx = np.arange(cfg.window_len)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    frames = w.samples[idx] * cfg.window[None, :]
    spec = np.fft.rfft(frames, n=cfg.fft_len, axis=1)
    mag, phase = polar_split(spec)
    return Spectrogram(magnitude=mag, phase=phase, config=cfg)


def istft(s: Spectrogram) -> Waveform:
    """Weighted overlap-add synthesis, normalized by the overlapped w^2 sum."""
    cfg = s.config
    frames = np.fft.irfft(s.to_complex(), n=cfg.fft_len, axis=1)[:, : cfg.window_len]
    frames = frames * cfg.window[None, :]
    out = np.zeros(cfg.output_len(s.n_frames))
    for m in range(s.n_frames):
        start = m * cfg.hop
        out[start : start + cfg.window_len] += frames[m]
    wsq = cfg.wsq_overlap(s.n_frames)
    floor = _EDGE_FLOOR * cfg.cola_constant()
    np.divide(out, wsq, out=out, where=wsq > floor)
    out[wsq <= floor] = 0.0
    return Waveform(samples=out, sample_rate=cfg.sample_rate)


# --------------------------------------------------------------------------
# WAV container. Hand-rolled RIFF so malformed headers, unsupported codecs,
# and truncated payloads raise distinct, specific errors.

_PCM16 = 1
_FLOAT32 = 3


def read_wav(path) -> list[Waveform]:
    """Load a mono or stereo WAV file; one Waveform per channel.

    PCM-16 samples are scaled by 1/32768; float-32 is read losslessly.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read WAV file {path}: {exc}") from exc
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file (malformed header)")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        body = blob[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if size < 16:
                raise WavFormatError(f"{path}: fmt chunk too small (malformed header)")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            if len(body) < size:
                raise WavFormatError(
                    f"{path}: truncated data chunk ({len(body)} of {size} bytes)"
                )
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise WavFormatError(f"{path}: missing fmt or data chunk (malformed header)")
    codec, n_channels, sample_rate, _, block_align, bits = fmt
    if codec == _PCM16 and bits == 16:
        raw = np.frombuffer(data, dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif codec == _FLOAT32 and bits == 32:
        raw = np.frombuffer(data, dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        raise WavFormatError(
            f"{path}: unsupported codec (format tag {codec}, {bits}-bit); "
            "only PCM-16 and IEEE float-32 are readable"
        )
    if n_channels not in (1, 2):
        raise WavFormatError(f"{path}: {n_channels} channels; only mono/stereo supported")
    if samples.size % n_channels:
        raise WavFormatError(f"{path}: sample count not divisible by channel count")
    deinterleaved = samples.reshape(-1, n_channels)
    return [Waveform(deinterleaved[:, c].copy(), sample_rate) for c in range(n_channels)]


def write_wav(path, w, codec: str = "float32") -> None:
    """Write one Waveform (mono) or a sequence of equal-length Waveforms (multichannel)."""
    channels = [w] if isinstance(w, Waveform) else list(w)
    if not channels:
        raise DataError("write_wav needs at least one channel")
    n = len(channels[0])
    sample_rate = channels[0].sample_rate
    for ch in channels:
        if len(ch) != n or ch.sample_rate != sample_rate:
            raise DataError("all channels must share length and sample rate")
    stacked = np.stack([ch.samples for ch in channels], axis=1).reshape(-1)
    if codec == "float32":
        payload = stacked.astype("<f4").tobytes()
        tag, bits = _FLOAT32, 32
    elif codec == "pcm16":
        clipped = np.clip(np.rint(stacked * 32768.0), -32768, 32767)
        payload = clipped.astype("<i2").tobytes()
        tag, bits = _PCM16, 16
    else:
        raise DataError(f"unknown codec {codec!r}; expected 'float32' or 'pcm16'")
    n_channels = len(channels)
    block_align = n_channels * bits // 8
    header = b"".join(
        [
            b"RIFF",
            struct.pack("<I", 36 + len(payload)),
            b"WAVE",
            b"fmt ",
            struct.pack(
                "<IHHIIHH",
                16,
                tag,
                n_channels,
                sample_rate,
                sample_rate * block_align,
                block_align,
                bits,
            ),
            b"data",
            struct.pack("<I", len(payload)),
        ]
    )
    with open(path, "wb") as fh:
        fh.write(header + payload)
