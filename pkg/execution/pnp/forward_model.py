"""
Ptychographic Forward Model

Probe and scan geometry construction, window extraction/embedding (E_l and
its adjoint), the probe-weighted operators A_l = P o E_l, far-field
measurements y_l = |FFT2(A_l x)| and the shot-noise simulator.

Windows are addressed by their top-left corner; l runs over 0..L-1 in the
order of ScanGeometry.positions. The FFT is the unnormalised forward DFT.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import numpy.typing as npt
import scipy.fft
from pydantic import BaseModel, ConfigDict, Field, model_validator

from execution.pnp.core_image import ComplexImage, RealImage, as_complex_image, crop_border

logger = logging.getLogger(__name__)

MAX_SEED = 2 ** 64


class NoiseModel(str, Enum):
    INTENSITY = "intensity"  # I' = I + alpha * I * eta
    SHOT = "shot"            # I' = I + alpha * sqrt(I) * eta (Poisson-matched variance)


# ============ DOMAIN TYPES ============

class ScanGeometry(BaseModel):
    """Ordered probe positions (top-left corners) on an image."""
    model_config = ConfigDict(frozen=True)

    image_h: int = Field(..., ge=1, description="Image height in pixels")
    image_w: int = Field(..., ge=1, description="Image width in pixels")
    window_n: int = Field(..., ge=1, description="Window size N (windows are N x N)")
    positions: list[tuple[int, int]] = Field(..., min_length=1, description="Top-left (row, col) per probe")
    allow_repeated_positions: bool = Field(False, description="Permit degenerate scans with repeated positions")

    @model_validator(mode="after")
    def _check_positions(self) -> "ScanGeometry":
        n = self.window_n
        for row, col in self.positions:
            if not (0 <= row <= self.image_h - n and 0 <= col <= self.image_w - n):
                raise ValueError(
                    f"Window at ({row}, {col}) of size {n} does not fit a {self.image_h}x{self.image_w} image"
                )
        if not self.allow_repeated_positions and len(set(self.positions)) != len(self.positions):
            raise ValueError("Scan positions must be distinct")
        return self

    @property
    def n_positions(self) -> int:
        return len(self.positions)

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.image_h, self.image_w)

    def window(self, ell: int) -> tuple[slice, slice]:
        """Slices selecting window ell."""
        if not 0 <= ell < self.n_positions:
            raise ValueError(f"Window index {ell} out of range 0..{self.n_positions - 1}")
        row, col = self.positions[ell]
        return slice(row, row + self.window_n), slice(col, col + self.window_n)


@dataclass(frozen=True)
class Probe:
    """Complex illumination P on an N x N window."""
    values: ComplexImage

    def __post_init__(self):
        values = as_complex_image(self.values)
        if values.shape[0] != values.shape[1]:
            raise ValueError(f"Probe must be square, got {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def size_n(self) -> int:
        return self.values.shape[0]

    @property
    def support(self) -> npt.NDArray[np.bool_]:
        return np.abs(self.values) > 0

    @property
    def intensity(self) -> RealImage:
        return np.abs(self.values) ** 2


@dataclass(frozen=True)
class MeasurementSet:
    """Far-field amplitudes y_l for every probe position."""
    geometry: ScanGeometry
    probe: Probe
    amplitudes: npt.NDArray[np.float64]
    alpha: float = 0.0
    seed: Optional[int] = None  # None means noiseless

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.float64)
        n = self.geometry.window_n
        expected = (self.geometry.n_positions, n, n)
        if amps.shape != expected:
            raise ValueError(f"Amplitudes have shape {amps.shape}, expected {expected}")
        if self.probe.size_n != n:
            raise ValueError(f"Probe size {self.probe.size_n} does not match window size {n}")
        if np.any(amps < 0) or not np.all(np.isfinite(amps)):
            raise ValueError("Amplitudes must be finite and nonnegative")
        if self.seed is not None and not 0 <= self.seed < MAX_SEED:
            raise ValueError(f"Seed must fit in an unsigned 64-bit integer, got {self.seed}")
        object.__setattr__(self, "amplitudes", amps)


# ============ CONSTRUCTION ============

def make_circular_probe(n: int, radius: float) -> Probe:
    """Binary disc of the given radius centred at ((n-1)/2, (n-1)/2)."""
    if n < 1:
        raise ValueError(f"Probe size must be positive, got {n}")
    if radius <= 0:
        raise ValueError(f"Probe radius must be positive, got {radius}")
    c = (n - 1) / 2.0
    ii, jj = np.mgrid[0:n, 0:n]
    disc = (ii - c) ** 2 + (jj - c) ** 2 <= radius ** 2
    return Probe(values=disc.astype(np.complex128))


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def _lattice_offsets(extent: int, count: int, window_n: int) -> list[int]:
    span = extent - window_n
    if count == 1:
        return [_round_half_up(span / 2)]
    return [_round_half_up(t * span / (count - 1)) for t in range(count)]


def make_scan_grid(image_h: int, image_w: int, grid_rows: int, grid_cols: int, window_n: int) -> ScanGeometry:
    """Evenly spaced grid_rows x grid_cols lattice, row-major."""
    if grid_rows < 1 or grid_cols < 1:
        raise ValueError(f"Grid must have at least one row and column, got {grid_rows}x{grid_cols}")
    if window_n > min(image_h, image_w):
        raise ValueError(f"Window {window_n} larger than image {image_h}x{image_w}")

    rows = _lattice_offsets(image_h, grid_rows, window_n)
    cols = _lattice_offsets(image_w, grid_cols, window_n)
    positions = [(r, c) for r in rows for c in cols]
    return ScanGeometry(image_h=image_h, image_w=image_w, window_n=window_n, positions=positions)


def overlap_fraction(probe: Probe, geometry: ScanGeometry) -> float:
    """Intersection over union of the probe support at two horizontally adjacent positions."""
    first_in_row: dict[int, int] = {}
    pair = None
    for row, col in geometry.positions:
        if row in first_in_row:
            pair = (first_in_row[row], col)
            break
        first_in_row[row] = col
    if pair is None:
        raise ValueError("Overlap needs at least two scan positions sharing a row")

    support = probe.support
    n = probe.size_n
    stride = abs(pair[1] - pair[0])
    if stride >= n:
        inter = 0
    else:
        inter = int(np.count_nonzero(support[:, stride:] & support[:, :n - stride]))
    union = 2 * int(np.count_nonzero(support)) - inter
    return inter / union if union > 0 else 0.0


# ============ WINDOW OPERATORS ============

def extract_window(x: ComplexImage, geometry: ScanGeometry, ell: int) -> ComplexImage:
    """E_l x."""
    rows, cols = geometry.window(ell)
    return np.array(x[rows, cols], dtype=np.complex128)


def embed_window(w: ComplexImage, geometry: ScanGeometry, ell: int) -> ComplexImage:
    """E_l^* w: w placed at window ell of a zero image."""
    rows, cols = geometry.window(ell)
    out = np.zeros(geometry.image_shape, dtype=np.result_type(w, np.float64))
    out[rows, cols] = w
    return out


def apply_A(x: ComplexImage, probe: Probe, geometry: ScanGeometry, ell: int) -> ComplexImage:
    return probe.values * extract_window(x, geometry, ell)


def apply_A_adjoint(w: ComplexImage, probe: Probe, geometry: ScanGeometry, ell: int) -> ComplexImage:
    return embed_window(np.conj(probe.values) * w, geometry, ell)


def extract_windows(x: np.ndarray, geometry: ScanGeometry) -> np.ndarray:
    """Stack of all windows, shape (L, N, N)."""
    return np.stack([x[geometry.window(ell)] for ell in range(geometry.n_positions)])


def accumulate_windows(stack: np.ndarray, geometry: ScanGeometry) -> np.ndarray:
    """sum_l E_l^* stack[l], added in position order."""
    out = np.zeros(geometry.image_shape, dtype=np.result_type(stack, np.float64))
    for ell in range(geometry.n_positions):
        out[geometry.window(ell)] += stack[ell]
    return out


def apply_A_all(x: ComplexImage, probe: Probe, geometry: ScanGeometry) -> np.ndarray:
    return probe.values * extract_windows(x, geometry)


def apply_A_adjoint_all(stack: np.ndarray, probe: Probe, geometry: ScanGeometry) -> ComplexImage:
    return accumulate_windows(np.conj(probe.values) * stack, geometry)


def fft2_windows(stack: np.ndarray, workers: Optional[int] = None) -> np.ndarray:
    return scipy.fft.fft2(stack, axes=(-2, -1), workers=workers)


def ifft2_windows(stack: np.ndarray, workers: Optional[int] = None) -> np.ndarray:
    return scipy.fft.ifft2(stack, axes=(-2, -1), workers=workers)


# ============ MEASUREMENTS ============

def forward(x: ComplexImage, probe: Probe, geometry: ScanGeometry, workers: Optional[int] = None) -> MeasurementSet:
    """Noiseless far-field amplitudes y_l = |FFT2(A_l x)|."""
    x = as_complex_image(x)
    if x.shape != geometry.image_shape:
        raise ValueError(f"Object shape {x.shape} does not match geometry {geometry.image_shape}")
    if probe.size_n != geometry.window_n:
        raise ValueError(f"Probe size {probe.size_n} does not match window size {geometry.window_n}")

    amplitudes = np.abs(fft2_windows(apply_A_all(x, probe, geometry), workers=workers))
    return MeasurementSet(geometry=geometry, probe=probe, amplitudes=amplitudes)


def perturb_intensity(
    intensity: np.ndarray,
    alpha: float,
    rng: np.random.Generator,
    model: NoiseModel = NoiseModel.INTENSITY,
) -> np.ndarray:
    """Unclamped noisy intensity I + alpha * s(I) * eta, eta ~ N(0, 1)."""
    eta = rng.standard_normal(intensity.shape)
    if NoiseModel(model) is NoiseModel.SHOT:
        return intensity + alpha * np.sqrt(intensity) * eta
    return intensity + alpha * intensity * eta


def add_shot_noise(
    measurements: MeasurementSet,
    alpha: float,
    seed: int,
    model: NoiseModel = NoiseModel.INTENSITY,
) -> MeasurementSet:
    """
    Apply the shot-noise model in the intensity domain.

    Each probe position draws from its own substream spawned from the seed,
    so the result does not depend on how positions are scheduled.
    """
    if alpha < 0:
        raise ValueError(f"Noise level must be nonnegative, got {alpha}")
    if alpha == 0:
        return measurements
    if not 0 <= seed < MAX_SEED:
        raise ValueError(f"Seed must fit in an unsigned 64-bit integer, got {seed}")

    streams = np.random.SeedSequence(seed).spawn(measurements.geometry.n_positions)
    noisy = np.empty_like(measurements.amplitudes)
    for ell, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        intensity = measurements.amplitudes[ell] ** 2
        perturbed = perturb_intensity(intensity, alpha, rng, model)
        noisy[ell] = np.sqrt(np.maximum(perturbed, 0.0))

    logger.debug(f"Applied {NoiseModel(model).value} noise, alpha={alpha}, seed={seed}")
    return MeasurementSet(
        geometry=measurements.geometry,
        probe=measurements.probe,
        amplitudes=noisy,
        alpha=float(alpha),
        seed=int(seed),
    )


def intensity_weight_map(probe: Probe, geometry: ScanGeometry) -> RealImage:
    """D^2 = sum_l E_l^* |P|^2, the accumulated probe intensity per pixel."""
    stack = np.broadcast_to(probe.intensity, (geometry.n_positions,) + probe.intensity.shape)
    return accumulate_windows(stack, geometry)


def min_weight_in_crop(weights: RealImage, border: int) -> float:
    return float(np.min(crop_border(weights, border)))
