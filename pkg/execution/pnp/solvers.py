"""
Reconstruction Algorithms

- hqs_data_step        closed-form data-fidelity step (pointwise in Fourier space)
- hqs_phase_retrieval  plug-and-play HQS for Fourier phase retrieval
- hqs_ptychography     plug-and-play HQS for ptychography with per-probe splitting
- sim_pie / seq_pie    classical simultaneous and sequential PIE baselines

All solvers are deterministic: per-probe work is batched and reduced in
position order, so iterates do not depend on the FFT worker count.
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Literal, NamedTuple, Optional

import numpy as np
import scipy.fft
from pydantic import BaseModel, Field, model_validator

from execution.pnp.config import DEFAULT_BORDER
from execution.pnp.core_image import ComplexImage, RealImage, as_real_image, check_same_shape, crop_border, phase_of
from execution.pnp.denoisers import DenoiserKind, DenoiserSpec, build_denoiser
from execution.pnp.forward_model import (
    MeasurementSet,
    Probe,
    ScanGeometry,
    apply_A_adjoint_all,
    apply_A_all,
    fft2_windows,
    ifft2_windows,
    intensity_weight_map,
)

logger = logging.getLogger(__name__)

FLAT_AMPLITUDE = 0.5
# Relative floor for the normalised weight on uncovered pixels in the weighted prox
WEIGHT_FLOOR = 1e-3

Callback = Callable[[int, ComplexImage], None]


class ConfigurationError(ValueError):
    pass


class Algorithm(str, Enum):
    HQS = "hqs"
    SIMPIE = "simpie"
    SEQPIE = "seqpie"
    ERROR_REDUCTION = "error_reduction"


# ============ CONFIGURATION MODELS ============

class Schedule(BaseModel):
    """Denoiser strengths tau_k, log-spaced, and the derived penalties mu_k = lambda / tau_k^2."""
    tau_start: float = Field(30.0, gt=0, description="First denoising strength")
    tau_end: float = Field(6.0, gt=0, description="Last denoising strength")
    iterations: int = Field(600, ge=1, description="Number of HQS iterations K")
    lambda_tilde: float = Field(1e-4, gt=0, description="Regularisation strength, lambda = lambda_tilde * sigma_hat^2")
    sigma_hat: float = Field(1.0, gt=0, description="Estimated noise level")

    @model_validator(mode="after")
    def _check_range(self) -> "Schedule":
        if self.tau_start < self.tau_end:
            raise ValueError(f"tau_start ({self.tau_start}) must be >= tau_end ({self.tau_end})")
        return self

    @property
    def lam(self) -> float:
        return self.lambda_tilde * self.sigma_hat ** 2

    def taus(self) -> np.ndarray:
        k = self.iterations
        if k == 1:
            return np.array([self.tau_start])
        ratio = self.tau_end / self.tau_start
        return self.tau_start * ratio ** (np.arange(k) / (k - 1))

    def mus(self) -> np.ndarray:
        return self.lam / self.taus() ** 2

    def data_weights(self, n: int) -> np.ndarray:
        """c_k = n / (n + mu_k)."""
        return n / (n + self.mus())


class InitPolicy(BaseModel):
    kind: Literal["flat", "simpie_warmstart"] = Field("simpie_warmstart", description="Initialisation")
    iterations: int = Field(100, ge=0, description="SimPIE warm-start iterations")


class SolverConfig(BaseModel):
    """Everything a reconstruction run needs besides the measurements."""
    name: str = Field("hqs", description="Label used in reports")
    algorithm: Algorithm = Field(Algorithm.HQS)
    schedule: Schedule = Field(default_factory=Schedule)
    denoiser: DenoiserSpec = Field(default_factory=DenoiserSpec)
    init: InitPolicy = Field(default_factory=InitPolicy)
    pie_step: float = Field(1.0, ge=0, le=2, description="SeqPIE step size beta")
    use_weighted_prox: bool = Field(True, description="Spatially weighted prox (False: averaged prox)")
    fixed_c: Optional[float] = Field(None, ge=0, le=1, description="Pin the data weight c_k")
    iterations: Optional[int] = Field(None, ge=0, description="Override K from the schedule")
    border: int = Field(DEFAULT_BORDER, ge=0, description="Metric border that must be fully covered")
    threads: Optional[int] = Field(None, ge=1, description="FFT workers (results do not depend on it)")

    @property
    def n_iterations(self) -> int:
        return self.schedule.iterations if self.iterations is None else self.iterations

    def resolved_schedule(self) -> Schedule:
        k = self.n_iterations
        if k < 1 or k == self.schedule.iterations:
            return self.schedule
        return self.schedule.model_copy(update={"iterations": k})


def make_schedule(tau_start: float, tau_end: float, K: int, lambda_tilde: float, sigma_hat: float = 1.0) -> Schedule:
    return Schedule(tau_start=tau_start, tau_end=tau_end, iterations=K, lambda_tilde=lambda_tilde, sigma_hat=sigma_hat)


# ============ STATE ============

class IterationRecord(NamedTuple):
    k: int
    tau: Optional[float]
    mu: Optional[float]
    c: float
    relative_residual: float


@dataclass
class SolverState:
    x: ComplexImage
    k: int = 0
    residual_history: list[float] = field(default_factory=list)
    records: list[IterationRecord] = field(default_factory=list)

    def record(self, x: ComplexImage, tau: Optional[float], mu: Optional[float], c: float, residual: float) -> None:
        self.x = x
        self.k += 1
        self.residual_history.append(residual)
        self.records.append(IterationRecord(self.k, tau, mu, c, residual))


# ============ CLOSED-FORM STEPS ============

def hqs_data_step(x_hat: np.ndarray, y: np.ndarray, c: float) -> np.ndarray:
    """
    Pointwise minimiser of (y - |z|)^2 + (mu/n) |z - x_hat|^2 for c = n / (n + mu).

    Amplitude c*y + (1-c)*|x_hat|, phase of x_hat (0 where x_hat vanishes).
    """
    check_same_shape(x_hat, y, "Fourier iterate and measurements")
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"Data weight c must lie in [0, 1], got {c}")
    amplitude = c * y + (1.0 - c) * np.abs(x_hat)
    return amplitude * np.exp(1j * phase_of(x_hat))


def modulus_replacement(x_hat: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Measured amplitude with the phase of x_hat."""
    check_same_shape(x_hat, y, "Fourier iterate and measurements")
    return y * np.exp(1j * phase_of(x_hat))


def weighted_average(z_list: np.ndarray, probe: Probe, geometry: ScanGeometry) -> ComplexImage:
    """
    sum_l A_l^* z_l / sum_l |A_l|^2, the pixelwise least-squares fit of the windows.

    Pixels no probe reaches are set to 0.
    """
    weights = intensity_weight_map(probe, geometry)
    uncovered = int(np.count_nonzero(weights == 0))
    if uncovered:
        logger.debug(f"{uncovered} pixels outside the reconstructable region")
    return _weighted_average(np.asarray(z_list), probe, geometry, weights)


def _weighted_average(z_stack: np.ndarray, probe: Probe, geometry: ScanGeometry, weights: RealImage) -> ComplexImage:
    numerator = apply_A_adjoint_all(z_stack, probe, geometry)
    covered = weights > 0
    return np.where(covered, numerator / np.where(covered, weights, 1.0), 0.0)


def _relative_residual(y: np.ndarray, x_hat: np.ndarray) -> float:
    norm = float(np.linalg.norm(y))
    if norm == 0:
        return float(np.linalg.norm(np.abs(x_hat)))
    return float(np.linalg.norm(y - np.abs(x_hat)) / norm)


# ============ INITIALISATION ============

def flat_init(shape: tuple[int, int]) -> ComplexImage:
    return np.full(shape, FLAT_AMPLITUDE, dtype=np.complex128)


def initialize(measurements: MeasurementSet, config: SolverConfig) -> ComplexImage:
    x0 = flat_init(measurements.geometry.image_shape)
    if config.init.kind == "simpie_warmstart" and config.init.iterations > 0:
        logger.info(f"Warm start: {config.init.iterations} SimPIE iterations")
        warm = config.model_copy(update={"iterations": config.init.iterations})
        x0 = sim_pie(measurements, warm, x0=x0).x
    return x0


# ============ PHASE RETRIEVAL ============

def hqs_phase_retrieval(
    y: RealImage,
    config: SolverConfig,
    x0: Optional[ComplexImage] = None,
    callback: Optional[Callback] = None,
) -> SolverState:
    """Plug-and-play HQS for full-image Fourier phase retrieval."""
    y = as_real_image(y)
    n = y.size
    workers = config.threads
    denoiser = build_denoiser(config.denoiser)
    scale = config.denoiser.strength_scale

    x = flat_init(y.shape) if x0 is None else np.asarray(x0, dtype=np.complex128)
    check_same_shape(x, y, "initialisation and measurements")
    state = SolverState(x=x)

    K = config.n_iterations
    if K == 0:
        return state
    schedule = config.resolved_schedule()
    taus, mus = schedule.taus(), schedule.mus()
    cs = np.full(K, config.fixed_c) if config.fixed_c is not None else schedule.data_weights(n)

    x_hat = scipy.fft.fft2(x, workers=workers)
    for k in range(K):
        z = scipy.fft.ifft2(hqs_data_step(x_hat, y, cs[k]), workers=workers)
        x = denoiser(z, scale * taus[k])
        x_hat = scipy.fft.fft2(x, workers=workers)
        state.record(x, float(taus[k]), float(mus[k]), float(cs[k]), _relative_residual(y, x_hat))
        if callback is not None:
            callback(state.k, x)
    return state


# ============ PTYCHOGRAPHY ============

def _coverage(measurements: MeasurementSet, config: SolverConfig) -> RealImage:
    weights = intensity_weight_map(measurements.probe, measurements.geometry)
    if config.border > 0 and np.min(crop_border(weights, config.border)) <= 0:
        raise ConfigurationError(
            f"Probe coverage has zero-weight pixels inside the {config.border}px metric crop"
        )
    return weights


def _prox_weight(weights: RealImage) -> RealImage:
    """D normalised to mean D^2 = 1 over covered pixels, floored on uncovered ones."""
    covered = weights > 0
    d2 = weights / np.mean(weights[covered])
    return np.sqrt(np.maximum(d2, WEIGHT_FLOOR))


def hqs_ptychography(
    measurements: MeasurementSet,
    config: SolverConfig,
    x0: Optional[ComplexImage] = None,
    callback: Optional[Callback] = None,
) -> SolverState:
    """
    Plug-and-play HQS for ptychography.

    Per iteration: mu_k = lambda / tau_k^2, c_k = N^2 / (N^2 + mu_k); every
    window gets the closed-form data step, the windows are merged by the
    probe-weighted average z~, and the prior is applied either as the
    spatially weighted prox D^-1 prox(D z~) or as a plain denoiser on z~.
    """
    geometry, probe = measurements.geometry, measurements.probe
    y = measurements.amplitudes
    n = geometry.window_n ** 2
    workers = config.threads

    weights = _coverage(measurements, config)
    covered = weights > 0
    prox_weight = _prox_weight(weights) if config.use_weighted_prox else None
    denoiser = build_denoiser(config.denoiser)
    scale = config.denoiser.strength_scale

    x = initialize(measurements, config) if x0 is None else np.asarray(x0, dtype=np.complex128)
    state = SolverState(x=x)
    K = config.n_iterations
    if K == 0:
        return state

    schedule = config.resolved_schedule()
    taus, mus = schedule.taus(), schedule.mus()
    cs = np.full(K, config.fixed_c) if config.fixed_c is not None else schedule.data_weights(n)
    logger.info(f"HQS ptychography: K={K}, L={geometry.n_positions}, denoiser={config.denoiser.kind.value}")
    start = time.perf_counter()

    x_hat = fft2_windows(apply_A_all(x, probe, geometry), workers=workers)
    for k in range(K):
        z = ifft2_windows(hqs_data_step(x_hat, y, cs[k]), workers=workers)
        z_tilde = _weighted_average(z, probe, geometry, weights)
        x = denoiser(z_tilde, scale * taus[k], prox_weight)
        x = np.where(covered, x, 0.0)

        x_hat = fft2_windows(apply_A_all(x, probe, geometry), workers=workers)
        state.record(x, float(taus[k]), float(mus[k]), float(cs[k]), _relative_residual(y, x_hat))
        logger.debug(f"k={state.k} tau={taus[k]:.3f} residual={state.residual_history[-1]:.5f}")
        if callback is not None:
            callback(state.k, x)

    logger.info(f"HQS finished in {time.perf_counter() - start:.1f}s, residual={state.residual_history[-1]:.5f}")
    return state


def sim_pie(
    measurements: MeasurementSet,
    config: SolverConfig,
    x0: Optional[ComplexImage] = None,
    callback: Optional[Callback] = None,
) -> SolverState:
    """Simultaneous PIE: modulus replacement on every window, then the probe-weighted average."""
    geometry, probe = measurements.geometry, measurements.probe
    y = measurements.amplitudes
    workers = config.threads
    weights = _coverage(measurements, config)
    covered = weights > 0

    x = flat_init(geometry.image_shape) if x0 is None else np.asarray(x0, dtype=np.complex128)
    state = SolverState(x=x)
    K = config.n_iterations
    start = time.perf_counter()

    x_hat = fft2_windows(apply_A_all(x, probe, geometry), workers=workers)
    for _ in range(K):
        z = ifft2_windows(modulus_replacement(x_hat, y), workers=workers)
        x = np.where(covered, _weighted_average(z, probe, geometry, weights), 0.0)

        x_hat = fft2_windows(apply_A_all(x, probe, geometry), workers=workers)
        state.record(x, None, None, 1.0, _relative_residual(y, x_hat))
        if callback is not None:
            callback(state.k, x)

    logger.info(f"SimPIE: {K} iterations in {time.perf_counter() - start:.1f}s")
    return state


def seq_pie(
    measurements: MeasurementSet,
    config: SolverConfig,
    x0: Optional[ComplexImage] = None,
    callback: Optional[Callback] = None,
) -> SolverState:
    """Sequential PIE: x <- x + beta A_l^*(psi' - psi) / max|P|^2, sweeping l in scan order."""
    geometry, probe = measurements.geometry, measurements.probe
    y = measurements.amplitudes
    workers = config.threads
    beta = config.pie_step
    p_conj = np.conj(probe.values)
    covered = _coverage(measurements, config) > 0
    norm = float(np.max(probe.intensity))
    if norm <= 0:
        raise ValueError("Probe is identically zero")

    x = flat_init(geometry.image_shape) if x0 is None else np.array(x0, dtype=np.complex128)
    state = SolverState(x=x)
    K = config.n_iterations
    start = time.perf_counter()

    for _ in range(K):
        x = x.copy()
        for ell in range(geometry.n_positions):
            win = geometry.window(ell)
            psi = probe.values * x[win]
            psi_new = scipy.fft.ifft2(modulus_replacement(scipy.fft.fft2(psi, workers=workers), y[ell]), workers=workers)
            x[win] += beta * p_conj * (psi_new - psi) / norm
        x = np.where(covered, x, 0.0)

        x_hat = fft2_windows(apply_A_all(x, probe, geometry), workers=workers)
        state.record(x, None, None, 1.0, _relative_residual(y, x_hat))
        if callback is not None:
            callback(state.k, x)

    logger.info(f"SeqPIE: {K} iterations in {time.perf_counter() - start:.1f}s")
    return state


def reconstruct(measurements: MeasurementSet, config: SolverConfig, callback: Optional[Callback] = None) -> SolverState:
    """Dispatch on config.algorithm."""
    if config.algorithm == Algorithm.HQS:
        return hqs_ptychography(measurements, config, callback=callback)
    if config.algorithm == Algorithm.SIMPIE:
        return sim_pie(measurements, config, callback=callback)
    if config.algorithm == Algorithm.SEQPIE:
        return seq_pie(measurements, config, callback=callback)

    # error reduction: SimPIE steps followed by projection onto nonnegative real images
    er = config.model_copy(update={
        "denoiser": DenoiserSpec(kind=DenoiserKind.NONNEG_PROJECTION),
        "fixed_c": 1.0,
        "use_weighted_prox": False,
    })
    return hqs_ptychography(measurements, er, x0=initialize(measurements, config), callback=callback)
