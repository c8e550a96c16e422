"""Training objectives: reconstruction, feature-matching distillation, and
their weighted combination.

The reconstruction loss is a Euclidean norm on the magnitude error minus a
magnitude-weighted mean cosine similarity between estimated and ground-truth
phase. The teacher-student and bad student-student losses sum the left and
right per-stage tap differences BEFORE taking the L1 norm, which permits
left/right cancellation; the split variant (norm per ear, then sum) is
available behind ``form="split"``. The combined distillation term divides
the teacher loss by the bad-student loss (floored), so gradients both pull
the student toward the teacher's features and push it away from the bad
student's.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DataError, NumericError, ShapeError
from .model import N_STAGES, EncoderTaps
from .tensor import Tensor

MAG_LOSS_FORMS = ("l2_norm", "mse")
KD_FORMS = ("summed", "split")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.1
    kd_eps: float = 1e-8

    def __post_init__(self):
        for name in ("alpha", "beta", "kd_eps"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise DataError(f"loss weight {name} must be finite, got {v}")
        if self.alpha < 0 or self.beta < 0:
            raise DataError(
                f"loss weights must be >= 0, got alpha={self.alpha} beta={self.beta}"
            )
        if self.kd_eps <= 0:
            raise DataError(f"kd_eps must be > 0, got {self.kd_eps}")


def _check_grids(mag_est, mag_gt, phase_est, phase_gt):
    if mag_est.shape != mag_gt.shape:
        raise ShapeError(
            f"magnitude grids disagree: {mag_est.shape} vs {mag_gt.shape}"
        )
    if phase_est.shape != phase_gt.shape:
        raise ShapeError(f"phase grids disagree: {phase_est.shape} vs {phase_gt.shape}")
    if mag_est.data.ndim != 4 or mag_est.shape[1] != 1:
        raise ShapeError(f"magnitudes must be (B, 1, T, F), got {mag_est.shape}")
    if phase_est.data.ndim != 4 or phase_est.shape[1] != 2:
        raise ShapeError(f"phases must be (B, 2, T, F), got {phase_est.shape}")
    if mag_est.shape[0] != phase_est.shape[0] or mag_est.shape[2:] != phase_est.shape[2:]:
        raise ShapeError(
            f"magnitude {mag_est.shape} and phase {phase_est.shape} grids disagree"
        )
    for name, t in (
        ("mag_est", mag_est),
        ("mag_gt", mag_gt),
        ("phase_est", phase_est),
        ("phase_gt", phase_gt),
    ):
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"reconstruction loss input {name} is not finite")


def reconstruction_loss(
    mag_est,
    mag_gt,
    phase_est,
    phase_gt,
    alpha: float = 1.0,
    mag_loss: str = "l2_norm",
    frame_mask: np.ndarray | None = None,
) -> Tensor:
    """Magnitude error minus alpha times the magnitude-weighted phase cosine.

    Inputs are (B, 1, T, F) magnitudes and (B, 2, T, F) unit-phase grids.
    ``frame_mask`` is an optional boolean (B, T) array selecting valid frames;
    masked-out frames contribute nothing, so a zero-padded utterance scores
    exactly what it scores unpadded.
    """
    if mag_loss not in MAG_LOSS_FORMS:
        raise DataError(f"mag_loss must be one of {MAG_LOSS_FORMS}, got {mag_loss!r}")
    mag_est, mag_gt = T.as_tensor(mag_est), T.as_tensor(mag_gt)
    phase_est, phase_gt = T.as_tensor(phase_est), T.as_tensor(phase_gt)
    _check_grids(mag_est, mag_gt, phase_est, phase_gt)
    b, _, t, f = mag_est.shape
    if frame_mask is None:
        weight = None
        n_bins = b * t * f
    else:
        frame_mask = np.asarray(frame_mask, dtype=np.float64)
        if frame_mask.shape != (b, t):
            raise ShapeError(f"frame mask must be ({b}, {t}), got {frame_mask.shape}")
        weight = Tensor(frame_mask[:, None, :, None])
        n_bins = int(frame_mask.sum()) * f
        if n_bins == 0:
            raise DataError("frame mask selects no valid frames")
    diff = mag_est - mag_gt
    if weight is not None:
        diff = diff * weight
    if mag_loss == "l2_norm":
        mag_term = T.sqrt((diff * diff).sum())
    else:
        mag_term = (diff * diff).sum() * (1.0 / n_bins)
    cos = (phase_est * phase_gt).sum(axis=1, keepdims=True)
    weighted = mag_gt * cos
    if weight is not None:
        weighted = weighted * weight
    phase_term = weighted.sum() * (1.0 / n_bins)
    return mag_term - alpha * phase_term


def magnitude_loss(
    mag_est,
    mag_gt,
    mag_loss: str = "l2_norm",
    frame_mask: np.ndarray | None = None,
) -> Tensor:
    """Just the magnitude error term, for models with no phase output."""
    if mag_loss not in MAG_LOSS_FORMS:
        raise DataError(f"mag_loss must be one of {MAG_LOSS_FORMS}, got {mag_loss!r}")
    mag_est, mag_gt = T.as_tensor(mag_est), T.as_tensor(mag_gt)
    if mag_est.shape != mag_gt.shape:
        raise ShapeError(f"magnitude grids disagree: {mag_est.shape} vs {mag_gt.shape}")
    if mag_est.data.ndim != 4 or mag_est.shape[1] != 1:
        raise ShapeError(f"magnitudes must be (B, 1, T, F), got {mag_est.shape}")
    for name, t in (("mag_est", mag_est), ("mag_gt", mag_gt)):
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"magnitude loss input {name} is not finite")
    b, _, t_frames, f = mag_est.shape
    diff = mag_est - mag_gt
    n_bins = b * t_frames * f
    if frame_mask is not None:
        frame_mask = np.asarray(frame_mask, dtype=np.float64)
        if frame_mask.shape != (b, t_frames):
            raise ShapeError(f"frame mask must be ({b}, {t_frames}), got {frame_mask.shape}")
        diff = diff * Tensor(frame_mask[:, None, :, None])
        n_bins = int(frame_mask.sum()) * f
        if n_bins == 0:
            raise DataError("frame mask selects no valid frames")
    if mag_loss == "l2_norm":
        return T.sqrt((diff * diff).sum())
    return (diff * diff).sum() * (1.0 / n_bins)


def kd_loss(student: EncoderTaps, other: EncoderTaps, form: str = "summed") -> Tensor:
    """Sum over the five stages of the L1 feature-matching error.

    ``summed`` adds the left and right difference tensors before the norm
    (the default reading); ``split`` norms each ear separately and adds.
    """
    if form not in KD_FORMS:
        raise DataError(f"kd form must be one of {KD_FORMS}, got {form!r}")
    total = None
    for i in range(N_STAGES):
        sl, sr = student.left[i], student.right[i]
        ol, or_ = other.left[i], other.right[i]
        if sl.shape != ol.shape or sr.shape != or_.shape:
            raise ShapeError(
                f"encoder tap stage {i + 1} shapes disagree: student "
                f"{sl.shape}/{sr.shape} vs other {ol.shape}/{or_.shape}"
            )
        if form == "summed":
            term = T.absval((sl - ol) + (sr - or_)).sum()
        else:
            term = T.absval(sl - ol).sum() + T.absval(sr - or_).sum()
        total = term if total is None else total + term
    return total


def kd_total(l_ts, l_bs, kd_eps: float = 1e-8) -> Tensor:
    """Teacher-side loss over the floored bad-student-side loss."""
    if kd_eps <= 0:
        raise DataError(f"kd_eps must be > 0, got {kd_eps}")
    l_ts, l_bs = T.as_tensor(l_ts), T.as_tensor(l_bs)
    if float(l_ts.data) < 0 or float(l_bs.data) < 0:
        raise DataError(
            f"distillation losses are norms and cannot be negative, got "
            f"{float(l_ts.data)} and {float(l_bs.data)}"
        )
    return l_ts / T.maximum(l_bs, Tensor(kd_eps))


def total_loss(l_rl, l_kd_total, beta: float) -> Tensor:
    return T.as_tensor(l_rl) + beta * T.as_tensor(l_kd_total)
