"""
Denoisers - proximal maps and plug-and-play priors

A denoiser takes an image and a strength tau and returns the denoised image.
With a weight map D it solves the spatially varying problem
    argmin_u 1/2 ||D (u - v)||^2 + tau R(u).

Available kinds: identity, nonnegativity projection, isotropic TV, and
external processes speaking the DNZ1 protocol.
"""

import logging
import threading
from abc import ABC, abstractmethod
from enum import Enum
from functools import partial
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from execution.pnp.config import DEFAULT_EXTERNAL_TIMEOUT, DEFAULT_TV_MAX_ITER, DEFAULT_TV_TOL
from execution.pnp.core_image import ComplexImage, RealImage, as_real_image, check_same_shape
from execution.pnp.external import run_external_denoiser

logger = logging.getLogger(__name__)

# ||grad||^2 <= 8 for 2D forward differences
_GRAD_NORM_SQ = 8.0
_TINY = 1e-300


class DenoiserKind(str, Enum):
    IDENTITY = "identity"
    NONNEG_PROJECTION = "nonneg_projection"
    TV = "tv"
    EXTERNAL = "external"


class DenoiserSpec(BaseModel):
    """Selects the prior R and its inner-solver parameters."""
    kind: DenoiserKind = Field(DenoiserKind.TV, description="Denoiser kind")
    tv_max_iter: int = Field(DEFAULT_TV_MAX_ITER, ge=1, description="TV inner iterations per call")
    tv_tol: float = Field(DEFAULT_TV_TOL, gt=0, description="TV relative dual-change tolerance")
    strength_scale: float = Field(1.0 / 255.0, gt=0, description="Multiplies tau_k before it reaches the denoiser")
    command: Optional[list[str]] = Field(None, description="External denoiser command line")
    timeout_secs: float = Field(DEFAULT_EXTERNAL_TIMEOUT, gt=0, description="External denoiser timeout")
    complex_split: bool = Field(True, description="Denoise real/imaginary parts separately (external only)")

    @model_validator(mode="after")
    def _check_command(self) -> "DenoiserSpec":
        if self.kind == DenoiserKind.EXTERNAL and not self.command:
            raise ValueError("External denoiser requires a non-empty command")
        return self


# ============ TV PRIMITIVES ============

def grad(u: RealImage) -> np.ndarray:
    """Forward differences with reflexive boundary, shape (2, H, W)."""
    g = np.zeros((2,) + u.shape, dtype=np.float64)
    g[0, :-1, :] = u[1:, :] - u[:-1, :]
    g[1, :, :-1] = u[:, 1:] - u[:, :-1]
    return g


def grad_adjoint(p: np.ndarray) -> RealImage:
    """Adjoint of grad (minus the discrete divergence)."""
    out = np.zeros(p.shape[1:], dtype=np.float64)
    out[:-1, :] -= p[0, :-1, :]
    out[1:, :] += p[0, :-1, :]
    out[:, :-1] -= p[1, :, :-1]
    out[:, 1:] += p[1, :, :-1]
    return out


def tv_norm(u: RealImage) -> float:
    g = grad(u)
    return float(np.sum(np.sqrt(g[0] ** 2 + g[1] ** 2)))


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    return float(np.linalg.norm(new - old) / max(np.linalg.norm(new), _TINY))


# ============ PROXIMAL OPERATORS ============

def tv_prox(
    v: RealImage,
    tau: float,
    max_iter: int = DEFAULT_TV_MAX_ITER,
    tol: float = DEFAULT_TV_TOL,
    return_history: bool = False,
):
    """
    argmin_u 1/2 ||u - v||^2 + tau * TV(u), isotropic TV.

    Dual projected gradient with step 1/8: with u = v - tau * grad^T p the
    iteration p <- proj(p + grad(u) / (8 tau)) descends 1/2 ||u||^2 over the
    unit-ball constraint. Stops when the relative change of p drops below tol.

    With return_history=True also returns the dual objective 1/2 ||u||^2 per
    iteration, which never increases.
    """
    v = as_real_image(v)
    if tau < 0:
        raise ValueError(f"TV strength must be nonnegative, got {tau}")
    if tau == 0:
        return (v.copy(), []) if return_history else v.copy()

    p = np.zeros((2,) + v.shape, dtype=np.float64)
    u = v.copy()
    history = []
    step = 1.0 / (_GRAD_NORM_SQ * tau)

    for _ in range(max_iter):
        p_new = p + step * grad(u)
        p_new /= np.maximum(1.0, np.sqrt(p_new[0] ** 2 + p_new[1] ** 2))
        u = v - tau * grad_adjoint(p_new)
        change = _relative_change(p_new, p)
        p = p_new
        if return_history:
            history.append(0.5 * float(np.sum(u ** 2)))
        if change < tol:
            break

    return (u, history) if return_history else u


def _dual_steps(strength: RealImage) -> RealImage:
    """Per-pixel dual step 1 / (4 (s_i + s_j)) over the pixel's two edges; 1 / (8 s) when s is constant."""
    down = strength.copy()
    down[:-1, :] = strength[1:, :]
    right = strength.copy()
    right[:, :-1] = strength[:, 1:]
    return 1.0 / (4.0 * np.maximum(strength + down, strength + right))


def tv_prox_weighted(
    v: RealImage,
    tau: float,
    weight: RealImage,
    max_iter: int = DEFAULT_TV_MAX_ITER,
    tol: float = DEFAULT_TV_TOL,
) -> RealImage:
    """
    argmin_u 1/2 ||D (u - v)||^2 + tau * TV(u) for a positive weight map D.

    The dual projected gradient of tv_prox with a pixelwise strength
    s = tau / D^2, so u = v - s * grad^T p, and a diagonally scaled dual step
    bounded by the local row sums of grad diag(s) grad^T. For constant D = d
    the iterates are exactly those of tv_prox at tau / d^2.
    """
    v = as_real_image(v)
    weight = as_real_image(weight)
    check_same_shape(v, weight, "image and weight")
    if not np.all(weight > 0):
        raise ValueError("Weight map must be strictly positive")
    if tau < 0:
        raise ValueError(f"TV strength must be nonnegative, got {tau}")
    if tau == 0:
        return v.copy()

    strength = tau / weight ** 2
    step = _dual_steps(strength)

    p = np.zeros((2,) + v.shape, dtype=np.float64)
    u = v.copy()
    for _ in range(max_iter):
        p_new = p + step * grad(u)
        p_new /= np.maximum(1.0, np.sqrt(p_new[0] ** 2 + p_new[1] ** 2))
        u = v - strength * grad_adjoint(p_new)
        change = _relative_change(p_new, p)
        p = p_new
        if change < tol:
            break

    return u


def nonneg_projection(v: RealImage) -> RealImage:
    return np.maximum(as_real_image(v), 0.0)


def complex_split_denoise(
    z: ComplexImage,
    tau: float,
    base: Callable[[RealImage, float], RealImage],
) -> ComplexImage:
    """
    Denoise real and imaginary parts independently.

    Both parts are shifted by s = max |z| so the base denoiser sees
    nonnegative input; the result is base(part + s) - s, applied as a
    correction to the unshifted part.
    """
    z = np.asarray(z, dtype=np.complex128)
    s = float(np.max(np.abs(z))) if z.size else 0.0

    parts = []
    for part in (z.real, z.imag):
        shifted = part + s
        parts.append(part + (base(shifted, tau) - shifted))
    return parts[0] + 1j * parts[1]


# ============ DENOISER OBJECTS ============

class Denoiser(ABC):
    """Callable prior: denoiser(z, tau, weight) -> denoised complex image."""

    @abstractmethod
    def __call__(self, z: ComplexImage, tau: float, weight: Optional[RealImage] = None) -> ComplexImage:
        ...


class IdentityDenoiser(Denoiser):
    def __call__(self, z, tau, weight=None):
        return z


class NonnegProjectionDenoiser(Denoiser):
    """Projection onto nonnegative real images; separable, so the weight is irrelevant."""

    def __call__(self, z, tau, weight=None):
        return nonneg_projection(np.real(z)).astype(np.complex128)


class TVDenoiser(Denoiser):
    def __init__(self, max_iter: int = DEFAULT_TV_MAX_ITER, tol: float = DEFAULT_TV_TOL):
        self.max_iter = max_iter
        self.tol = tol

    def denoise_real(self, v: RealImage, tau: float, weight: Optional[RealImage] = None) -> RealImage:
        if weight is None:
            return tv_prox(v, tau, self.max_iter, self.tol)
        return tv_prox_weighted(v, tau, weight, self.max_iter, self.tol)

    def __call__(self, z, tau, weight=None):
        return complex_split_denoise(z, tau, partial(self.denoise_real, weight=weight))


class ExternalDenoiser(Denoiser):
    """
    Denoiser hosted by an external process (DNZ1 over stdin/stdout).

    A weighted call denoises D z and maps back with D^-1. Calls are
    serialised per instance.
    """

    def __init__(self, command: list[str], timeout_secs: float = DEFAULT_EXTERNAL_TIMEOUT, complex_split: bool = True):
        self.command = list(command)
        self.timeout_secs = timeout_secs
        self.complex_split = complex_split
        self._lock = threading.Lock()

    def _run(self, image: np.ndarray, tau: float) -> np.ndarray:
        with self._lock:
            return run_external_denoiser(self.command, image, tau, self.timeout_secs)

    def __call__(self, z, tau, weight=None):
        z = np.asarray(z, dtype=np.complex128)
        if weight is not None:
            check_same_shape(z, weight, "image and weight")
            z = weight * z
        if self.complex_split:
            out = complex_split_denoise(z, tau, self._run)
        else:
            out = self._run(z, tau)
        if weight is not None:
            out = out / weight
        return out


def build_denoiser(spec: DenoiserSpec) -> Denoiser:
    """Instantiate the denoiser selected by a spec."""
    if spec.kind == DenoiserKind.IDENTITY:
        return IdentityDenoiser()
    if spec.kind == DenoiserKind.NONNEG_PROJECTION:
        return NonnegProjectionDenoiser()
    if spec.kind == DenoiserKind.TV:
        return TVDenoiser(spec.tv_max_iter, spec.tv_tol)
    return ExternalDenoiser(spec.command, spec.timeout_secs, spec.complex_split)
