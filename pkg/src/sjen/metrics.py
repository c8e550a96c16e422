"""Evaluation surface: intelligibility, scale-invariant SDR, model size,
analytic compute cost, and real-time factor.

The intelligibility metric follows the standard short-time objective
intelligibility construction: resample to 10 kHz, drop frames more than
40 dB below the loudest clean frame, analyze with a 256/128/512 STFT,
collect 15 one-third-octave band envelopes from 150 Hz, and average the
clipped, normalized correlation of 30-frame (384 ms) segments.

Compute cost is counted in multiply-accumulates (one MAC = one FLOP unit
here, stated in every report) two independent ways: analytic per-layer
formulas, and a runtime counter fed by the shapes of every matrix multiply
the forward pass actually executes. The two must agree exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import resample_poly

from .audio import StftConfig, Waveform, stft
from .datasim import load_manifest, load_record_audio
from .errors import DataError
from .layers import Module
from .model import reconstruct

EPS = np.finfo(np.float64).eps

STOI_FS = 10000
STOI_FRAME = 256
STOI_HOP = 128
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEG = 30  # frames per segment, 384 ms
STOI_BETA = -15.0  # lower SDR clipping bound, dB
STOI_DYN_RANGE = 40.0  # silent-frame threshold below the loudest frame, dB

SI_SDR_CAP = 60.0


def _stoi_window() -> np.ndarray:
    return np.hanning(STOI_FRAME + 2)[1:-1]


def _frame(x: np.ndarray, window: np.ndarray) -> np.ndarray:
    n = (len(x) - STOI_FRAME) // STOI_HOP + 1
    idx = np.arange(STOI_FRAME)[None, :] + STOI_HOP * np.arange(n)[:, None]
    return x[idx] * window[None, :]


def _remove_silent_frames(x: np.ndarray, y: np.ndarray):
    """Drop frames whose clean energy is >40 dB below the loudest frame,
    then rebuild both signals by overlap-adding the surviving frames."""
    w = _stoi_window()
    xf = _frame(x, w)
    yf = _frame(y, w)
    energies = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + EPS)
    keep = energies > np.max(energies) - STOI_DYN_RANGE
    xf, yf = xf[keep], yf[keep]
    if len(xf) == 0:
        raise DataError("no frames above the silence threshold")
    out_len = (len(xf) - 1) * STOI_HOP + STOI_FRAME
    xs = np.zeros(out_len)
    ys = np.zeros(out_len)
    for i in range(len(xf)):
        xs[i * STOI_HOP : i * STOI_HOP + STOI_FRAME] += xf[i]
        ys[i * STOI_HOP : i * STOI_HOP + STOI_FRAME] += yf[i]
    return xs, ys


def _third_octave_matrix() -> np.ndarray:
    f = np.linspace(0, STOI_FS, STOI_NFFT + 1)[: STOI_NFFT // 2 + 1]
    k = np.arange(STOI_BANDS, dtype=np.float64)
    f_low = STOI_MIN_FREQ * 2.0 ** ((2 * k - 1) / 6.0)
    f_high = STOI_MIN_FREQ * 2.0 ** ((2 * k + 1) / 6.0)
    obm = np.zeros((STOI_BANDS, len(f)))
    for i in range(STOI_BANDS):
        lo = int(np.argmin(np.square(f - f_low[i])))
        hi = int(np.argmin(np.square(f - f_high[i])))
        obm[i, lo:hi] = 1.0
    return obm


def _band_envelopes(x: np.ndarray, obm: np.ndarray) -> np.ndarray:
    frames = _frame(x, _stoi_window())
    spec = np.fft.rfft(frames, n=STOI_NFFT, axis=1)
    return np.sqrt(obm @ np.square(np.abs(spec)).T)  # (bands, frames)


def stoi(clean: Waveform, processed: Waveform) -> float:
    """Mean clipped correlation of short-time one-third-octave envelopes."""
    if len(clean) != len(processed):
        raise DataError(
            f"inputs must share length, got {len(clean)} and {len(processed)}"
        )
    if clean.sample_rate != processed.sample_rate:
        raise DataError(
            f"inputs must share sample rate, got {clean.sample_rate} "
            f"and {processed.sample_rate}"
        )
    x, y = clean.samples, processed.samples
    if clean.sample_rate != STOI_FS:
        ratio = Fraction(STOI_FS, clean.sample_rate)
        x = resample_poly(x, ratio.numerator, ratio.denominator)
        y = resample_poly(y, ratio.numerator, ratio.denominator)
    min_len = (STOI_SEG - 1) * STOI_HOP + STOI_FRAME
    if len(x) < min_len:
        raise DataError(
            f"input too short for the intelligibility metric: needs about "
            f"0.5 s, got {len(clean) / clean.sample_rate:.3f} s"
        )
    x, y = _remove_silent_frames(x, y)
    if len(x) < min_len:
        raise DataError(
            "input too short after silent-frame removal; needs about 0.5 s of audible signal"
        )
    obm = _third_octave_matrix()
    xb = _band_envelopes(x, obm)
    yb = _band_envelopes(y, obm)
    n_frames = xb.shape[1]
    clip_gain = 1.0 + 10.0 ** (-STOI_BETA / 20.0)
    scores = []
    for m in range(STOI_SEG, n_frames + 1):
        xs = xb[:, m - STOI_SEG : m]
        ys = yb[:, m - STOI_SEG : m]
        alpha = np.linalg.norm(xs, axis=1, keepdims=True) / (
            np.linalg.norm(ys, axis=1, keepdims=True) + EPS
        )
        ys_clip = np.minimum(ys * alpha, xs * clip_gain)
        xm = xs - xs.mean(axis=1, keepdims=True)
        ym = ys_clip - ys_clip.mean(axis=1, keepdims=True)
        corr = np.sum(xm * ym, axis=1) / (
            np.linalg.norm(xm, axis=1) * np.linalg.norm(ym, axis=1) + EPS
        )
        scores.append(corr)
    return float(np.mean(scores))


def si_sdr(clean: Waveform, processed: Waveform) -> float:
    """Scale-invariant SDR in dB: project onto the clean signal, compare
    target energy to residual energy, capped at +/-60 dB."""
    if len(clean) != len(processed):
        raise DataError(
            f"inputs must share length, got {len(clean)} and {len(processed)}"
        )
    s = clean.samples
    y = processed.samples
    s_energy = float(np.dot(s, s))
    if s_energy == 0.0:
        raise DataError("clean reference is silent")
    alpha = float(np.dot(y, s)) / s_energy
    target = alpha * s
    residual = y - target
    p_target = float(np.dot(target, target))
    p_residual = float(np.dot(residual, residual))
    if p_target == 0.0:
        return -SI_SDR_CAP
    if p_residual == 0.0:
        return SI_SDR_CAP
    return float(np.clip(10.0 * np.log10(p_target / p_residual), -SI_SDR_CAP, SI_SDR_CAP))


def count_params(model: Module, freeze_mask=None) -> int:
    """Trainable parameter count; names matched by freeze_mask are excluded."""
    total = 0
    for name, p in model.named_parameters():
        if freeze_mask is not None and freeze_mask(name):
            continue
        total += p.size
    return total


def count_flops(model, n_frames: int) -> int:
    """Analytic forward-pass MACs for a batch-1 input of n_frames frames."""
    return model.count_macs(n_frames)


def measure_rtf(enhance_fn, wave: Waveform, repeats: int = 5, clock=time.perf_counter) -> float:
    """Median over repeats of wall-clock enhancement time / audio duration."""
    if repeats < 1:
        raise DataError(f"repeats must be >= 1, got {repeats}")
    times = []
    for _ in range(repeats):
        t0 = clock()
        enhance_fn(wave)
        times.append(clock() - t0)
    return float(np.median(times) / wave.duration)


# -- corpus-level evaluation ---------------------------------------------------


@dataclass(frozen=True)
class EvalRow:
    snr_db: float
    n_utterances: int
    stoi_unprocessed: float  # percent
    si_sdr_unprocessed: float  # dB
    stoi_enhanced: float  # percent
    si_sdr_enhanced: float  # dB


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[EvalRow, ...]
    params: int
    flops_per_second_audio: int
    rtf: float | None  # populated by the benchmark path only

    @property
    def params_m(self) -> float:
        return self.params / 1e6

    @property
    def flops_g(self) -> float:
        return self.flops_per_second_audio / 1e9


def identity_enhancer(audio: dict[str, Waveform]) -> Waveform:
    return audio["mono"]


def oracle_enhancer(stft_cfg: StftConfig):
    """Ground-truth magnitude and phase, round-tripped through the transform."""

    def enhance(audio: dict[str, Waveform]) -> Waveform:
        spec = stft(audio["clean"], stft_cfg)
        return reconstruct(spec.magnitude, spec.phase, stft_cfg)

    return enhance


def model_enhancer(model, stft_cfg: StftConfig):
    from .model import enhance_waveform

    def enhance(audio: dict[str, Waveform]) -> Waveform:
        return enhance_waveform(model, audio["mono"], stft_cfg)

    return enhance


def _match_length(wave: Waveform, n: int) -> Waveform:
    x = wave.samples
    if len(x) >= n:
        return Waveform(x[:n], wave.sample_rate)
    return Waveform(np.concatenate([x, np.zeros(n - len(x))]), wave.sample_rate)


def evaluate(
    manifest_path,
    enhancer,
    stft_cfg: StftConfig,
    snr_conditions=(-5.0, 0.0, 5.0, 10.0),
    model=None,
) -> EvalReport:
    """Per-condition mean intelligibility and SI-SDR, enhanced next to
    unprocessed; model rows require a model for the size/compute stats."""
    rows = load_manifest(manifest_path)
    by_snr: dict[float, list[dict]] = {float(s): [] for s in snr_conditions}
    for row in rows:
        snr = float(row["snr_db"])
        if snr in by_snr:
            by_snr[snr].append(row)
    out_rows = []
    for snr in sorted(by_snr):
        group = by_snr[snr]
        if not group:
            raise DataError(f"manifest has no utterances at {snr} dB")
        stoi_u, sdr_u, stoi_e, sdr_e = [], [], [], []
        for row in group:
            audio = load_record_audio(row)
            clean = audio["clean"]
            noisy = audio["mono"]
            enhanced = _match_length(enhancer(audio), len(clean))
            stoi_u.append(stoi(clean, noisy))
            sdr_u.append(si_sdr(clean, noisy))
            stoi_e.append(stoi(clean, enhanced))
            sdr_e.append(si_sdr(clean, enhanced))
        out_rows.append(
            EvalRow(
                snr_db=snr,
                n_utterances=len(group),
                stoi_unprocessed=100.0 * float(np.mean(stoi_u)),
                si_sdr_unprocessed=float(np.mean(sdr_u)),
                stoi_enhanced=100.0 * float(np.mean(stoi_e)),
                si_sdr_enhanced=float(np.mean(sdr_e)),
            )
        )
    if model is not None:
        params = count_params(model)
        flops = count_flops(model, stft_cfg.frames_for_duration(1.0))
    else:
        params, flops = 0, 0
    return EvalReport(rows=tuple(out_rows), params=params,
                      flops_per_second_audio=flops, rtf=None)


def render_table(report: EvalReport, title: str = "evaluation") -> str:
    lines = [
        f"# {title}",
        "# FLOPs counted as multiply-accumulates (1 MAC = 1 FLOP unit)",
    ]
    if report.params or report.flops_per_second_audio:
        lines.append(
            f"# params: {report.params} ({report.params_m:.3f} M)   "
            f"flops/s audio: {report.flops_per_second_audio} ({report.flops_g:.3f} G)   "
            f"rtf: {report.rtf if report.rtf is not None else '-'}"
        )
    lines.append(
        f"{'SNR (dB)':>9} {'n':>4} {'STOI% in':>9} {'STOI% out':>10} "
        f"{'SI-SDR in':>10} {'SI-SDR out':>11}"
    )
    for r in report.rows:
        lines.append(
            f"{r.snr_db:>9.1f} {r.n_utterances:>4d} {r.stoi_unprocessed:>9.2f} "
            f"{r.stoi_enhanced:>10.2f} {r.si_sdr_unprocessed:>10.2f} "
            f"{r.si_sdr_enhanced:>11.2f}"
        )
    return "\n".join(lines) + "\n"


def render_csv(report: EvalReport) -> str:
    lines = [
        "snr_db,n_utterances,stoi_unprocessed_percent,stoi_enhanced_percent,"
        "si_sdr_unprocessed_db,si_sdr_enhanced_db"
    ]
    for r in report.rows:
        lines.append(
            f"{r.snr_db},{r.n_utterances},{r.stoi_unprocessed:.6f},"
            f"{r.stoi_enhanced:.6f},{r.si_sdr_unprocessed:.6f},{r.si_sdr_enhanced:.6f}"
        )
    return "\n".join(lines) + "\n"
