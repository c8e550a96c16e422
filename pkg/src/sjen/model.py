"""Speech enhancement networks: magnitude sub-module, phase sub-module,
student, teacher, and bad student.

The magnitude sub-module is a dual-encoder convolutional recurrent network.
Each ear-specific encoder is five conv(2x3, stride (1,2), freq pad 1) +
batchnorm + ELU stages; the two bottlenecks are concatenated channel-wise,
flattened per frame, passed through two LSTM layers whose hidden size equals
the flattened feature size, and decoded by five mirrored deconv stages. Each
decoder stage consumes the running feature concatenated with the sum of the
matching left and right encoder taps; the last stage has no batchnorm or ELU
and the output passes through softplus so magnitudes are strictly positive.

The monaural student duplicates its single noisy magnitude into both
encoders, which keeps the student architecture identical to the binaural
teacher; that agreement is what makes stage-by-stage feature matching
between the two well-defined.

The phase sub-module maps the magnitude estimate (1 channel) and the noisy
phase (2 channels) through 1x1-conv projections to 4 channels each,
concatenates to 8, applies three residual blocks (conv 5x3 SAME, ELU, conv
25x1 SAME, identity skip), projects to 2 channels, normalizes the residual
globally, adds the noisy phase back, and renormalizes every TF bin to unit
length.

The time-axis kernels are unpadded (encoder conv shrinks time by 1 per
stage, decoder deconv restores it); the 25x1 kernel in the phase blocks sets
the minimum sequence length of 25 frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .audio import Spectrogram, StftConfig, Waveform, istft, stft
from .errors import DataError, ShapeError
from .layers import (
    LSTM,
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    GlobalLayerNorm,
    Module,
)
from .tensor import Tensor

N_STAGES = 5
TIME_KERNEL = 2
FREQ_KERNEL = 3
FREQ_STRIDE = 2
FREQ_PAD = 1
MIN_FRAMES = 25  # largest time kernel in the phase blocks
PHASE_CHANNELS = 8
N_PHASE_BLOCKS = 3
N_LSTM = 2

PRESETS: dict[str, tuple[int, ...]] = {
    "tiny": (4, 8, 8, 16, 16),
    "default": (16, 32, 48, 64, 80),
    "paper_shape": (8, 16, 16, 24, 24),
}


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple[int, ...] = PRESETS["default"]
    n_freq: int = 161

    def __post_init__(self):
        if len(self.channels) != N_STAGES:
            raise DataError(
                f"model needs {N_STAGES} encoder widths, got {len(self.channels)}"
            )
        if any(c < 1 for c in self.channels):
            raise DataError(f"encoder widths must be >= 1, got {self.channels}")
        if self.n_freq < 1:
            raise DataError(f"n_freq must be >= 1, got {self.n_freq}")

    @staticmethod
    def from_preset(name: str, n_freq: int) -> "ModelConfig":
        if name not in PRESETS:
            raise DataError(f"unknown preset {name!r}, expected one of {sorted(PRESETS)}")
        return ModelConfig(channels=PRESETS[name], n_freq=n_freq)

    def freq_chain(self) -> list[int]:
        """Frequency-axis sizes entering each stage, bottleneck last."""
        fs = [self.n_freq]
        for _ in range(N_STAGES):
            fs.append((fs[-1] + 2 * FREQ_PAD - FREQ_KERNEL) // FREQ_STRIDE + 1)
        return fs

    @property
    def bottleneck_features(self) -> int:
        return 2 * self.channels[-1] * self.freq_chain()[-1]

    def tap_shapes(self, n_frames: int) -> list[tuple[int, int, int, int]]:
        """Per-stage encoder output shapes (batch 1) from conv arithmetic."""
        fs = self.freq_chain()
        return [
            (1, self.channels[i], n_frames - (i + 1), fs[i + 1])
            for i in range(N_STAGES)
        ]


@dataclass
class EncoderTaps:
    """The five per-stage encoder outputs for each ear."""

    left: list[Tensor]
    right: list[Tensor]

    def __post_init__(self):
        if len(self.left) != N_STAGES or len(self.right) != N_STAGES:
            raise ShapeError(
                f"encoder taps must hold {N_STAGES} stages per ear, got "
                f"{len(self.left)} and {len(self.right)}"
            )

    def detach(self) -> "EncoderTaps":
        return EncoderTaps(
            [t.detach() for t in self.left], [t.detach() for t in self.right]
        )


class _EncoderStage(Module):
    def __init__(self, in_ch: int, out_ch: int, rng):
        super().__init__()
        self.conv = Conv2d(
            in_ch,
            out_ch,
            (TIME_KERNEL, FREQ_KERNEL),
            stride=(1, FREQ_STRIDE),
            padding=(0, FREQ_PAD),
            rng=rng,
        )
        self.bn = BatchNorm2d(out_ch)

    def __call__(self, x: Tensor) -> Tensor:
        return T.elu(self.bn(self.conv(x)))

    def macs(self, input_shape) -> int:
        return self.conv.macs(input_shape)

    def out_shape(self, input_shape):
        return self.conv.out_shape(input_shape)


class _DecoderStage(Module):
    def __init__(self, in_ch: int, out_ch: int, output_padding: int, final: bool, rng):
        super().__init__()
        self.final = final
        self.deconv = ConvTranspose2d(
            in_ch,
            out_ch,
            (TIME_KERNEL, FREQ_KERNEL),
            stride=(1, FREQ_STRIDE),
            padding=(0, FREQ_PAD),
            output_padding=(0, output_padding),
            rng=rng,
        )
        if not final:
            self.bn = BatchNorm2d(out_ch)

    def __call__(self, x: Tensor) -> Tensor:
        y = self.deconv(x)
        if self.final:
            return y
        return T.elu(self.bn(y))

    def macs(self, input_shape) -> int:
        return self.deconv.macs(input_shape)

    def out_shape(self, input_shape):
        return self.deconv.out_shape(input_shape)


class MagnitudeNet(Module):
    """Dual-encoder CRN mapping two magnitude planes to one positive plane."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        ch = cfg.channels
        ins = (1,) + ch[:-1]
        self.encoder_l = [_EncoderStage(ins[i], ch[i], rng) for i in range(N_STAGES)]
        self.encoder_r = [_EncoderStage(ins[i], ch[i], rng) for i in range(N_STAGES)]
        feat = cfg.bottleneck_features
        self.lstms = [LSTM(feat, feat, rng) for _ in range(N_LSTM)]
        fs = cfg.freq_chain()
        self.decoder = []
        running = 2 * ch[-1]
        for j in range(N_STAGES):
            stage = N_STAGES - 1 - j  # encoder stage being mirrored
            skip_ch = ch[stage]
            out_ch = 1 if stage == 0 else ch[stage - 1]
            # restore fs[stage] from fs[stage + 1]; op is 1 when the parity dropped
            op = fs[stage] - (FREQ_STRIDE * fs[stage + 1] - 2 * FREQ_PAD + FREQ_KERNEL - 2)
            if op not in (0, 1):
                raise ShapeError(
                    f"decoder stage {j} cannot restore freq size {fs[stage]} "
                    f"from {fs[stage + 1]}"
                )
            self.decoder.append(
                _DecoderStage(running + skip_ch, out_ch, op, final=stage == 0, rng=rng)
            )
            running = out_ch

    def __call__(self, mag_l: Tensor, mag_r: Tensor):
        if mag_l.shape != mag_r.shape:
            raise ShapeError(
                f"left/right inputs must agree, got {mag_l.shape} and {mag_r.shape}"
            )
        if mag_l.data.ndim != 4 or mag_l.shape[1] != 1:
            raise ShapeError(f"expected (B, 1, T, F) magnitudes, got {mag_l.shape}")
        b, _, t, f = mag_l.shape
        if f != self.cfg.n_freq:
            raise ShapeError(f"model built for F={self.cfg.n_freq}, input has F={f}")
        if t < MIN_FRAMES:
            raise DataError(
                f"input has {t} frames but the network needs at least {MIN_FRAMES}; "
                "zero-pad the spectrogram in time before the forward pass"
            )
        taps_l, taps_r = [], []
        xl, xr = mag_l, mag_r
        for sl, sr in zip(self.encoder_l, self.encoder_r):
            xl = sl(xl)
            taps_l.append(xl)
            xr = sr(xr)
            taps_r.append(xr)
        z = T.concat([xl, xr], axis=1)
        _, c2, t5, f5 = z.shape
        seq = T.reshape(T.transpose(z, (0, 2, 1, 3)), (b, t5, c2 * f5))
        for lstm in self.lstms:
            seq = lstm(seq)
        y = T.transpose(T.reshape(seq, (b, t5, c2, f5)), (0, 2, 1, 3))
        for j, stage in enumerate(self.decoder):
            i = N_STAGES - 1 - j
            skip = taps_l[i] + taps_r[i]
            y = stage(T.concat([y, skip], axis=1))
        return T.softplus(y), taps_l, taps_r

    def count_macs(self, n_frames: int) -> int:
        """Analytic multiply-accumulates of one forward at batch 1."""
        total = 0
        shape = (1, 1, n_frames, self.cfg.n_freq)
        tap_shapes = []
        for stage in self.encoder_l:
            total += 2 * stage.macs(shape)  # two ears, identical geometry
            shape = stage.out_shape(shape)
            tap_shapes.append(shape)
        b, c5, t5, f5 = shape
        feat = 2 * c5 * f5
        for lstm in self.lstms:
            total += lstm.macs((b, t5, feat))
        shape = (b, 2 * c5, t5, f5)
        for j, stage in enumerate(self.decoder):
            i = N_STAGES - 1 - j
            cat = (b, shape[1] + tap_shapes[i][1], shape[2], shape[3])
            total += stage.macs(cat)
            shape = stage.out_shape(cat)
        return total


class _PhaseBlock(Module):
    def __init__(self, rng):
        super().__init__()
        c = PHASE_CHANNELS
        self.conv_a = Conv2d(c, c, (5, 3), padding=(2, 1), rng=rng)
        self.conv_b = Conv2d(c, c, (25, 1), padding=(12, 0), rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.conv_b(T.elu(self.conv_a(x)))

    def macs(self, input_shape) -> int:
        return self.conv_a.macs(input_shape) + self.conv_b.macs(input_shape)


class PhaseNet(Module):
    """Residual phase refinement conditioned on the magnitude estimate."""

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        half = PHASE_CHANNELS // 2
        self.fuse_mag = Conv2d(1, half, (1, 1), rng=rng)
        self.fuse_phase = Conv2d(2, half, (1, 1), rng=rng)
        self.blocks = [_PhaseBlock(rng) for _ in range(N_PHASE_BLOCKS)]
        self.proj = Conv2d(PHASE_CHANNELS, 2, (1, 1), rng=rng)
        self.out_norm = GlobalLayerNorm(2)

    def __call__(self, mag_est: Tensor, noisy_phase: Tensor) -> Tensor:
        if noisy_phase.data.ndim != 4 or noisy_phase.shape[1] != 2:
            raise ShapeError(f"noisy phase must be (B, 2, T, F), got {noisy_phase.shape}")
        if mag_est.shape[0] != noisy_phase.shape[0] or mag_est.shape[2:] != noisy_phase.shape[2:]:
            raise ShapeError(
                f"magnitude {mag_est.shape} and phase {noisy_phase.shape} grids disagree"
            )
        z = T.concat([self.fuse_mag(mag_est), self.fuse_phase(noisy_phase)], axis=1)
        for block in self.blocks:
            z = block(z)
        residual = self.out_norm(self.proj(z))
        raw = noisy_phase + residual
        norm = T.sqrt(
            raw[:, 0:1] * raw[:, 0:1] + raw[:, 1:2] * raw[:, 1:2]
        )
        return raw / T.maximum(norm, Tensor(1e-12))

    def count_macs(self, n_frames: int, n_freq: int) -> int:
        grid = (1, PHASE_CHANNELS, n_frames, n_freq)
        total = self.fuse_mag.macs((1, 1, n_frames, n_freq))
        total += self.fuse_phase.macs((1, 2, n_frames, n_freq))
        total += sum(block.macs(grid) for block in self.blocks)
        total += self.proj.macs(grid)
        return total


def _to_mag_tensor(spec: Spectrogram) -> Tensor:
    return Tensor(spec.magnitude[None, None])


def _to_phase_tensor(spec: Spectrogram) -> Tensor:
    return Tensor(np.ascontiguousarray(spec.phase.transpose(2, 0, 1))[None])


def pad_frames(spec: Spectrogram, n_frames: int) -> Spectrogram:
    """Zero-pad a spectrogram in time; padded bins get the resting phase (1, 0)."""
    t = spec.magnitude.shape[0]
    if t >= n_frames:
        return spec
    extra = n_frames - t
    mag = np.concatenate([spec.magnitude, np.zeros((extra, spec.magnitude.shape[1]))])
    rest = np.zeros((extra,) + spec.phase.shape[1:])
    rest[..., 0] = 1.0
    phase = np.concatenate([spec.phase, rest])
    return Spectrogram(mag, phase, spec.config)


class StudentModel(Module):
    """Monaural enhancer: magnitude sub-module plus phase sub-module."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.mag_net = MagnitudeNet(cfg, rng)
        self.phase_net = PhaseNet(rng)

    def __call__(self, mag: Tensor, noisy_phase: Tensor):
        """Returns (mag_est, phase_est, taps); the single magnitude feeds both encoders."""
        mag_est, taps_l, taps_r = self.mag_net(mag, mag)
        phase_est = self.phase_net(mag_est, noisy_phase)
        return mag_est, phase_est, EncoderTaps(taps_l, taps_r)

    def forward_spec(self, spec: Spectrogram):
        return self(_to_mag_tensor(spec), _to_phase_tensor(spec))

    def enhance(self, spec: Spectrogram) -> Spectrogram:
        """Numpy-level inference; short inputs are padded to the minimum and
        cropped back.

        Runs with per-utterance normalization statistics, the same regime the
        model trains under (training always normalizes each utterance over its
        own frames, so every input's absolute level is divided out; frozen
        running statistics cannot reproduce that). Normalization buffers are
        snapshotted and restored, so enhancement leaves the model unchanged.
        """
        saved_mode = self.training
        saved_buffers = [(b, b.data.copy()) for _, b in self.named_buffers()]
        self.train(True)
        try:
            t = spec.magnitude.shape[0]
            padded = pad_frames(spec, MIN_FRAMES)
            mag_est, phase_est, _ = self.forward_spec(padded)
            mag = mag_est.data[0, 0, :t]
            phase = np.ascontiguousarray(phase_est.data[0, :, :t].transpose(1, 2, 0))
            return Spectrogram(mag, phase, spec.config)
        finally:
            for buf, data in saved_buffers:
                buf.data = data
            self.train(saved_mode)

    def count_macs(self, n_frames: int) -> int:
        return self.mag_net.count_macs(n_frames) + self.phase_net.count_macs(
            n_frames, self.cfg.n_freq
        )


class TeacherModel(Module):
    """Binaural magnitude estimator with the student's architecture."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.mag_net = MagnitudeNet(cfg, rng)

    def __call__(self, mag_l: Tensor, mag_r: Tensor):
        mag_est, taps_l, taps_r = self.mag_net(mag_l, mag_r)
        return mag_est, EncoderTaps(taps_l, taps_r)

    def forward_spec(self, spec_l: Spectrogram, spec_r: Spectrogram):
        if spec_l.magnitude.shape != spec_r.magnitude.shape:
            raise ShapeError(
                f"binaural spectrograms disagree: {spec_l.magnitude.shape} "
                f"vs {spec_r.magnitude.shape}"
            )
        return self(_to_mag_tensor(spec_l), _to_mag_tensor(spec_r))

    def count_macs(self, n_frames: int) -> int:
        return self.mag_net.count_macs(n_frames)


def build_student(cfg: ModelConfig, seed: int) -> StudentModel:
    return StudentModel(cfg, np.random.default_rng(seed))


def build_teacher(cfg: ModelConfig, seed: int) -> TeacherModel:
    return TeacherModel(cfg, np.random.default_rng(seed))


def reconstruct(mag_est: np.ndarray, phase_est: np.ndarray, cfg: StftConfig) -> Waveform:
    """Compose a magnitude grid and unit-phase grid, then invert to a waveform."""
    spec = Spectrogram(np.asarray(mag_est, dtype=np.float64), np.asarray(phase_est, dtype=np.float64), cfg)
    return istft(spec)


def enhance_waveform(model: StudentModel, wave: Waveform, cfg: StftConfig) -> Waveform:
    """End-to-end enhancement of a mono waveform.

    The waveform is zero-padded by one overlap-add ramp (window_len - hop) on
    each side before analysis.  Resynthesis divides by the summed squared
    window, which decays to zero at the signal edges; without the padding that
    division amplifies spectral estimation errors in the first and last frames
    by orders of magnitude.  Padding keeps every real sample inside the
    constant-overlap region, and the output is cropped back to the input length.
    """
    samples = np.asarray(wave.samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ShapeError(f"enhance_waveform expects a mono waveform, got shape {samples.shape}")
    pad = cfg.window_len - cfg.hop
    padded = Waveform(np.concatenate([np.zeros(pad), samples, np.zeros(pad)]), wave.sample_rate)
    spec = stft(padded, cfg)
    est = istft(model.enhance(spec))
    out = np.zeros_like(samples)
    avail = est.samples[pad:pad + samples.shape[0]]
    out[:avail.shape[0]] = avail
    return Waveform(out, wave.sample_rate)
