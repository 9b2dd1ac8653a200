"""
Complex Image Utilities

Images are plain numpy arrays: complex128 for fields (object, exit waves,
Fourier data) and float64 for amplitudes, phases and weight maps. This module
holds the amplitude/phase conventions and the quality metrics used to score
reconstructions.
"""

import logging
from typing import NamedTuple

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)

ComplexImage = npt.NDArray[np.complex128]
RealImage = npt.NDArray[np.float64]

# MSE values below this are reported as saturated
MSE_FLOOR = 1e-12
PHASE_PEAK = 2.0 * np.pi


# ============ PYDANTIC MODELS ============

class MetricReport(BaseModel):
    """Quality of a reconstruction against its ground truth."""
    psnr_amplitude: float = Field(..., description="Amplitude PSNR in dB")
    psnr_phase: float = Field(..., description="Phase PSNR in dB")
    amplitude_saturated: bool = Field(False, description="Amplitude MSE hit the floor")
    phase_saturated: bool = Field(False, description="Phase MSE hit the floor")
    border_excluded: int = Field(0, ge=0, description="Border pixels excluded on each side")


class PSNR(NamedTuple):
    db: float
    saturated: bool


# ============ VALIDATION ============

def as_complex_image(img: npt.ArrayLike) -> ComplexImage:
    """Validate and convert to a 2D complex128 image."""
    arr = np.asarray(img, dtype=np.complex128)
    if arr.ndim != 2:
        raise ValueError(f"Expected a 2D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("Image contains non-finite values")
    return arr


def as_real_image(img: npt.ArrayLike) -> RealImage:
    """Validate and convert to a 2D float64 image."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"Expected a 2D image, got shape {arr.shape}")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "images") -> None:
    if a.shape != b.shape:
        raise ValueError(f"Shape mismatch between {what}: {a.shape} vs {b.shape}")


# ============ AMPLITUDE / PHASE ============

def wrap_phase(phi: npt.ArrayLike) -> RealImage:
    """Wrap angles into (-pi, pi]."""
    phi = np.asarray(phi, dtype=np.float64)
    return np.pi - np.mod(np.pi - phi, 2.0 * np.pi)


def phase_of(img: ComplexImage) -> RealImage:
    """arg(img) in (-pi, pi]; zero-magnitude entries get phase 0."""
    phase = np.angle(img)
    phase = np.where(phase <= -np.pi, np.pi, phase)
    return np.where(np.abs(img) == 0, 0.0, phase)


def decompose(img: npt.ArrayLike) -> tuple[RealImage, RealImage]:
    """Split a complex image into amplitude and phase."""
    img = as_complex_image(img)
    return np.abs(img), phase_of(img)


def global_phase_align(reco: npt.ArrayLike, gt: npt.ArrayLike) -> ComplexImage:
    """
    Rotate reco by the constant phase that best matches gt.

    theta* = arg(sum gt * conj(reco)) minimises ||exp(i theta) reco - gt||^2.
    """
    reco = as_complex_image(reco)
    gt = as_complex_image(gt)
    check_same_shape(reco, gt, "reconstruction and ground truth")

    inner = np.vdot(reco, gt)
    theta = float(np.angle(inner)) if inner != 0 else 0.0
    return np.exp(1j * theta) * reco


def crop_border(img: np.ndarray, border: int) -> np.ndarray:
    """Central (h - 2b) x (w - 2b) sub-image."""
    if border < 0:
        raise ValueError(f"Border must be nonnegative, got {border}")
    h, w = img.shape[:2]
    if 2 * border >= min(h, w):
        raise ValueError(f"Border {border} too large for image of shape {h}x{w}")
    if border == 0:
        return img
    return img[border:h - border, border:w - border]


# ============ METRICS ============

def _psnr(peak_sq: float, mse: float) -> PSNR:
    if mse < MSE_FLOOR:
        return PSNR(10.0 * np.log10(peak_sq / MSE_FLOOR), True)
    return PSNR(10.0 * np.log10(peak_sq / mse), False)


def mse_phase(phi_reco: npt.ArrayLike, phi_gt: npt.ArrayLike) -> float:
    """Mean squared error on the circle."""
    phi_reco = as_real_image(phi_reco)
    phi_gt = as_real_image(phi_gt)
    check_same_shape(phi_reco, phi_gt, "phase images")

    diff = np.mod(phi_reco - phi_gt + np.pi, 2.0 * np.pi) - np.pi
    return float(np.mean(diff ** 2))


def psnr_phase(phi_reco: npt.ArrayLike, phi_gt: npt.ArrayLike) -> PSNR:
    return _psnr(PHASE_PEAK ** 2, mse_phase(phi_reco, phi_gt))


def psnr_amplitude(a_reco: npt.ArrayLike, a_gt: npt.ArrayLike) -> PSNR:
    """PSNR with the ground-truth maximum as peak."""
    a_reco = as_real_image(a_reco)
    a_gt = as_real_image(a_gt)
    check_same_shape(a_reco, a_gt, "amplitude images")

    peak = float(np.max(a_gt))
    if peak <= 0:
        raise ValueError("Ground-truth amplitude is all zero")
    mse = float(np.mean((a_reco - a_gt) ** 2))
    return _psnr(peak ** 2, mse)


def evaluate(reco: npt.ArrayLike, gt: npt.ArrayLike, border: int = 0) -> MetricReport:
    """Align global phase, crop the border and score amplitude and phase."""
    aligned = global_phase_align(reco, gt)
    amp_reco, phi_reco = decompose(crop_border(aligned, border))
    amp_gt, phi_gt = decompose(crop_border(as_complex_image(gt), border))

    amp = psnr_amplitude(amp_reco, amp_gt)
    phase = psnr_phase(phi_reco, phi_gt)
    logger.debug(f"PSNR_a={amp.db:.2f} dB, PSNR_phi={phase.db:.2f} dB (border={border})")

    return MetricReport(
        psnr_amplitude=amp.db,
        psnr_phase=phase.db,
        amplitude_saturated=amp.saturated,
        phase_saturated=phase.saturated,
        border_excluded=border,
    )
