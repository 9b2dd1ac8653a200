import logging
import subprocess
from typing import Sequence

import numpy as np

from execution.pnp.formats import FormatError, decode_image, encode_denoise_request

logger = logging.getLogger(__name__)


class ExternalDenoiserError(RuntimeError):
    """Base class for failures of an external denoiser process."""


class ExternalDenoiserSpawnError(ExternalDenoiserError):
    pass


class ExternalDenoiserTimeout(ExternalDenoiserError):
    pass


class ExternalDenoiserFailed(ExternalDenoiserError):
    """Process exited with a nonzero status."""


class MalformedResponseError(ExternalDenoiserError):
    pass


class ResponseShapeError(ExternalDenoiserError):
    pass


def run_external_denoiser(command: Sequence[str], image: np.ndarray, tau: float, timeout_secs: float) -> np.ndarray:
    """
    Run one DNZ1 request through an external process.

    Args:
        command: Program and arguments (e.g. ['python', 'drunet_server.py']).
        image: Real or complex 2D image to denoise.
        tau: Denoising strength passed verbatim in the request.
        timeout_secs: Wall-clock limit for the process.

    Returns:
        The denoised image, same kind and shape as the input.
    """
    if not command:
        raise ExternalDenoiserSpawnError("No external denoiser command configured")

    request = encode_denoise_request(image, tau)
    logger.debug(f"Starting external denoiser {command[0]} (tau={tau:.4g}, shape={image.shape})...")
    try:
        proc = subprocess.run(list(command), input=request, capture_output=True, timeout=timeout_secs)
    except subprocess.TimeoutExpired as e:
        raise ExternalDenoiserTimeout(f"External denoiser timed out after {timeout_secs}s") from e
    except OSError as e:
        raise ExternalDenoiserSpawnError(f"Failed to start external denoiser {command[0]}: {e}") from e

    if proc.returncode != 0:
        stderr = proc.stderr.decode("utf-8", errors="replace").strip()
        raise ExternalDenoiserFailed(f"External denoiser exited with status {proc.returncode}: {stderr}")

    try:
        result, end = decode_image(proc.stdout)
    except FormatError as e:
        raise MalformedResponseError(f"Malformed denoiser response: {e}") from e
    if end != len(proc.stdout):
        raise MalformedResponseError(f"Denoiser response has {len(proc.stdout) - end} trailing bytes")
    if np.iscomplexobj(result) != np.iscomplexobj(image):
        raise MalformedResponseError("Denoiser response kind does not match the request")
    if result.shape != image.shape:
        raise ResponseShapeError(f"Denoiser returned shape {result.shape}, expected {image.shape}")
    if not np.all(np.isfinite(result)):
        raise MalformedResponseError("Denoiser response contains non-finite values")

    logger.debug("External denoiser finished.")
    return result
