"""Three-phase training: binaural teacher, monaural bad student, then the
distilled student against both frozen references.

Phases share one loop: per-utterance forward passes (each utterance is
normalized over its own valid frames, so zero-padding never leaks into the
objective), batch loss as the mean of per-utterance losses, Adam updates,
and one CSV row of component means per epoch. All randomness (parameter
init, epoch shuffling) flows from the config seed, making checkpoints
bit-reproducible.

For the student phase the teacher and bad student are loaded from their
checkpoints, every parameter is frozen, and their encoder taps are computed
once per record and cached as constants. Frozen references run with
batch-statistics normalization, the same regime the student trains under;
that choice makes a student warm-started from the bad-student checkpoint
score a bad-student distance of exactly zero at step one.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint
from .audio import Spectrogram, StftConfig, stft
from .datasim import load_manifest, load_record_audio
from .errors import ConfigError, DataError
from .losses import (
    KD_FORMS,
    MAG_LOSS_FORMS,
    LossWeights,
    kd_loss,
    kd_total,
    magnitude_loss,
    reconstruction_loss,
)
from .model import (
    MIN_FRAMES,
    EncoderTaps,
    ModelConfig,
    StudentModel,
    TeacherModel,
    build_student,
    build_teacher,
    pad_frames,
)
from .optim import Adam
from .tensor import Tensor

log = logging.getLogger("sjen.trainer")

PHASES = ("teacher", "bad_student", "student")


@dataclass(frozen=True)
class TrainConfig:
    phase: str = "teacher"
    learning_rate: float = 0.001
    batch_size: int = 4
    epochs: int = 10
    seed: int = 0
    weights: LossWeights = LossWeights()
    mag_loss: str = "l2_norm"
    kd_form: str = "summed"
    init_from_bad_student: bool = False

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigError(f"phase must be one of {PHASES}, got {self.phase!r}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError(
                f"batch_size and epochs must be >= 1, got {self.batch_size} and {self.epochs}"
            )
        if self.mag_loss not in MAG_LOSS_FORMS:
            raise ConfigError(f"mag_loss must be one of {MAG_LOSS_FORMS}, got {self.mag_loss!r}")
        if self.kd_form not in KD_FORMS:
            raise ConfigError(f"kd_form must be one of {KD_FORMS}, got {self.kd_form!r}")


@dataclass
class TrainResult:
    identity: str
    ckpt_path: str
    log_path: str
    initial_loss: float
    final_loss: float
    n_steps: int


LOG_COLUMNS = ("epoch", "l_rl", "l_ts", "l_bs", "l_kd_total", "l_total", "wall_seconds")


def pad_batch(specs: list[Spectrogram]):
    """Stack spectrograms, zero-padding time to the longest; returns
    (magnitude (B,1,T,F), phase (B,2,T,F), valid-frame mask (B,T))."""
    if not specs:
        raise DataError("cannot pad an empty batch")
    n_freq = specs[0].magnitude.shape[1]
    for s in specs:
        if s.magnitude.shape[1] != n_freq:
            raise DataError(
                f"batch mixes frequency sizes {n_freq} and {s.magnitude.shape[1]}"
            )
    t_max = max(s.magnitude.shape[0] for s in specs)
    b = len(specs)
    mag = np.zeros((b, 1, t_max, n_freq))
    phase = np.zeros((b, 2, t_max, n_freq))
    phase[:, 0] = 1.0  # resting unit phase in the padding
    mask = np.zeros((b, t_max), dtype=bool)
    for i, s in enumerate(specs):
        t = s.magnitude.shape[0]
        mag[i, 0, :t] = s.magnitude
        phase[i, :, :t] = s.phase.transpose(2, 0, 1)
        mask[i, :t] = True
    return mag, phase, mask


def _spec_tensors(spec: Spectrogram) -> tuple[Tensor, Tensor]:
    mag = Tensor(spec.magnitude[None, None])
    phase = Tensor(np.ascontiguousarray(spec.phase.transpose(2, 0, 1))[None])
    return mag, phase


class _Record:
    """STFTs of one manifest row, padded to the model's minimum length."""

    __slots__ = ("id", "mono_mag", "mono_phase", "clean_mag", "clean_phase",
                 "left_mag", "right_mag", "mask")

    def __init__(self, row: dict, stft_cfg: StftConfig, need_binaural: bool):
        audio = load_record_audio(row)
        self.id = row["id"]
        mono = stft(audio["mono"], stft_cfg)
        t_valid = mono.magnitude.shape[0]
        t_padded = max(t_valid, MIN_FRAMES)
        mono = pad_frames(mono, t_padded)
        clean = pad_frames(stft(audio["clean"], stft_cfg), t_padded)
        self.mono_mag, self.mono_phase = _spec_tensors(mono)
        self.clean_mag, self.clean_phase = _spec_tensors(clean)
        if need_binaural:
            left = pad_frames(stft(audio["left"], stft_cfg), t_padded)
            right = pad_frames(stft(audio["right"], stft_cfg), t_padded)
            self.left_mag, _ = _spec_tensors(left)
            self.right_mag, _ = _spec_tensors(right)
        else:
            self.left_mag = self.right_mag = None
        mask = np.zeros((1, t_padded), dtype=bool)
        mask[0, :t_valid] = True
        self.mask = mask


def load_records(manifest_path, stft_cfg: StftConfig, need_binaural: bool) -> list[_Record]:
    rows = load_manifest(manifest_path)
    return [_Record(row, stft_cfg, need_binaural) for row in rows]


def _freeze(model) -> None:
    for p in model.parameters():
        p.requires_grad = False


def _run_phase(model, records, loss_fn, cfg: TrainConfig, identity, ckpt_out, log_out):
    """Shared epoch loop; loss_fn(record) returns component dict with 'l_total'."""
    opt = Adam(model.named_parameters(), lr=cfg.learning_rate)
    shuffle_rng = np.random.default_rng(cfg.seed)
    initial_loss = None
    final_loss = None
    n_steps = 0
    log_out = Path(log_out)
    log_out.parent.mkdir(parents=True, exist_ok=True)
    with open(log_out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            order = shuffle_rng.permutation(len(records))
            sums = {k: 0.0 for k in ("l_rl", "l_ts", "l_bs", "l_kd_total", "l_total")}
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                batch_total = None
                for idx in batch:
                    parts = loss_fn(records[idx])
                    for key in sums:
                        val = parts.get(key)
                        sums[key] += float(val.data) if isinstance(val, Tensor) else float(val or 0.0)
                    contrib = parts["l_total"] * (1.0 / len(batch))
                    batch_total = contrib if batch_total is None else batch_total + contrib
                if initial_loss is None:
                    initial_loss = float(batch_total.data)
                opt.zero_grad()
                batch_total.backward()
                opt.step()
                n_steps += 1
            means = {k: v / len(records) for k, v in sums.items()}
            final_loss = means["l_total"]
            wall = time.perf_counter() - t0
            writer.writerow(
                [epoch] + [f"{means[k]:.10g}" for k in
                           ("l_rl", "l_ts", "l_bs", "l_kd_total", "l_total")]
                + [f"{wall:.3f}"]
            )
            log.info(
                "%s epoch %d/%d: l_total %.6g (%.1f s)",
                identity, epoch, cfg.epochs, means["l_total"], wall,
            )
    Path(ckpt_out).parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save(ckpt_out, model, identity)
    return TrainResult(
        identity=identity,
        ckpt_path=str(ckpt_out),
        log_path=str(log_out),
        initial_loss=initial_loss,
        final_loss=final_loss,
        n_steps=n_steps,
    )


def train_teacher(
    manifest_path,
    stft_cfg: StftConfig,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    ckpt_out,
    log_out,
) -> TrainResult:
    """Fit the binaural teacher to the clean magnitude with the L2 term only."""
    records = load_records(manifest_path, stft_cfg, need_binaural=True)
    model = build_teacher(model_cfg, cfg.seed)

    def loss_fn(rec: _Record):
        mag_est, _ = model(rec.left_mag, rec.right_mag)
        l = magnitude_loss(mag_est, rec.clean_mag, cfg.mag_loss, frame_mask=rec.mask)
        return {"l_rl": l, "l_total": l}

    return _run_phase(model, records, loss_fn, cfg, "teacher", ckpt_out, log_out)


def train_bad_student(
    manifest_path,
    stft_cfg: StftConfig,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    ckpt_out,
    log_out,
) -> TrainResult:
    """Fit the full monaural model with the reconstruction loss alone."""
    records = load_records(manifest_path, stft_cfg, need_binaural=False)
    model = build_student(model_cfg, cfg.seed)

    def loss_fn(rec: _Record):
        mag_est, phase_est, _ = model(rec.mono_mag, rec.mono_phase)
        l = reconstruction_loss(
            mag_est,
            rec.clean_mag,
            phase_est,
            rec.clean_phase,
            alpha=cfg.weights.alpha,
            mag_loss=cfg.mag_loss,
            frame_mask=rec.mask,
        )
        return {"l_rl": l, "l_total": l}

    return _run_phase(model, records, loss_fn, cfg, "bad_student", ckpt_out, log_out)


def cache_reference_taps(
    records: list[_Record],
    teacher: TeacherModel,
    bad_student: StudentModel,
) -> dict[str, tuple[EncoderTaps, EncoderTaps]]:
    """One frozen forward per record; taps come back as grad-free constants."""
    out = {}
    for rec in records:
        if rec.left_mag is None:
            raise DataError(f"record {rec.id} lacks binaural audio for the teacher")
        _, t_taps = teacher(rec.left_mag, rec.right_mag)
        _, _, b_taps = bad_student(rec.mono_mag, rec.mono_phase)
        out[rec.id] = (t_taps.detach(), b_taps.detach())
    return out


def train_student(
    manifest_path,
    stft_cfg: StftConfig,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    teacher_ckpt,
    bad_student_ckpt,
    ckpt_out,
    log_out,
) -> TrainResult:
    """Fit the student with reconstruction plus the frozen-reference
    distillation ratio; beta = 0 degenerates to the bad-student objective."""
    records = load_records(manifest_path, stft_cfg, need_binaural=True)
    teacher = build_teacher(model_cfg, cfg.seed)
    checkpoint.load_into(teacher_ckpt, teacher, expect_identity="teacher")
    _freeze(teacher)
    bad = build_student(model_cfg, cfg.seed)
    checkpoint.load_into(bad_student_ckpt, bad, expect_identity="bad_student")
    _freeze(bad)
    # batch-statistics regime for the cached taps, matching the learner
    teacher.train()
    bad.train()
    taps_cache = cache_reference_taps(records, teacher, bad)

    model = build_student(model_cfg, cfg.seed)
    if cfg.init_from_bad_student:
        checkpoint.load_into(bad_student_ckpt, model, expect_identity="bad_student")
    w = cfg.weights

    def loss_fn(rec: _Record):
        mag_est, phase_est, taps = model(rec.mono_mag, rec.mono_phase)
        l_rl = reconstruction_loss(
            mag_est,
            rec.clean_mag,
            phase_est,
            rec.clean_phase,
            alpha=w.alpha,
            mag_loss=cfg.mag_loss,
            frame_mask=rec.mask,
        )
        if w.beta == 0.0:
            return {"l_rl": l_rl, "l_ts": 0.0, "l_bs": 0.0, "l_kd_total": 0.0,
                    "l_total": l_rl}
        t_taps, b_taps = taps_cache[rec.id]
        l_ts = kd_loss(taps, t_taps, form=cfg.kd_form)
        l_bs = kd_loss(taps, b_taps, form=cfg.kd_form)
        l_kd = kd_total(l_ts, l_bs, w.kd_eps)
        l_tot = l_rl + w.beta * l_kd
        return {"l_rl": l_rl, "l_ts": l_ts, "l_bs": l_bs, "l_kd_total": l_kd,
                "l_total": l_tot}

    return _run_phase(model, records, loss_fn, cfg, "student", ckpt_out, log_out)
