"""Patch-wise sparse coding via plug-and-play ISTA.

Each iteration takes a gradient step on the quadratic coding term and
applies a denoiser. With the soft-threshold denoiser this is exact ISTA
for the l1-penalized coding objective; the non-local-means denoiser acts
on the decoded 2-D patch instead, then the result is re-encoded on the
shrinkage support.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.ndimage import uniform_filter

from .core import HsiError
from .dictionary import Dictionary


def soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    """Proximal map of ``t * ||.||_1``: magnitudes shrink by t, signs kept."""
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def nlm_denoise(image: np.ndarray, window: int, search: int, h: float) -> np.ndarray:
    """Plain non-local means on a 2-D image.

    Every output pixel is a convex combination of pixels in its search
    neighborhood, weighted by exp(-patch_distance / h^2) with the mean
    squared difference over a ``window`` x ``window`` similarity patch.
    The output range therefore never leaves [min(image), max(image)].
    """
    if window < 1 or window % 2 == 0 or search < 1 or search % 2 == 0:
        raise HsiError("bad-config", "NLM window and search sizes must be odd and >= 1")
    if h <= 0:
        raise HsiError("bad-config", "NLM filter strength h must be > 0")
    img = np.asarray(image, dtype=np.float64)
    rad = search // 2
    padded = np.pad(img, rad, mode="reflect")
    acc = np.zeros_like(img)
    norm = np.zeros_like(img)
    rows, cols = img.shape
    for di in range(-rad, rad + 1):
        for dj in range(-rad, rad + 1):
            shifted = padded[rad + di:rad + di + rows, rad + dj:rad + dj + cols]
            dist = uniform_filter((img - shifted) ** 2, size=window, mode="reflect")
            w = np.exp(-dist / (h * h))
            acc += w * shifted
            norm += w
    return acc / norm


@dataclass(frozen=True)
class SoftThreshold:
    """Entry-wise shrinkage denoiser; exact l1 proximal map at its threshold."""

    threshold: float = 1.0

    def __post_init__(self):
        if self.threshold <= 0:
            raise HsiError("bad-config", "soft threshold must be > 0")

    def apply(self, values: np.ndarray) -> np.ndarray:
        return soft_threshold(values, self.threshold)


@dataclass(frozen=True)
class NonLocalMeans:
    """Non-local means acting on decoded 2-D patches."""

    window: int = 5
    search: int = 11
    h: float = 0.1

    def apply_image(self, image: np.ndarray) -> np.ndarray:
        return nlm_denoise(image, self.window, self.search, self.h)


Denoiser = Union[SoftThreshold, NonLocalMeans]


def grad_f(alpha: np.ndarray, targets: np.ndarray, phi: Dictionary,
           mu1: float) -> np.ndarray:
    """Gradient of the quadratic coding term, column-wise:
    ``mu1 * Phi^T (Phi alpha - target)``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if alpha.shape != (phi.atoms, targets.shape[1]) or targets.shape[0] != phi.patch_dim:
        raise HsiError("shape-mismatch",
                       f"codes {alpha.shape} / targets {targets.shape} inconsistent "
                       f"with dictionary {phi.data.shape}")
    return mu1 * (phi.data.T @ (phi.data @ alpha - targets))


def coding_objective(alpha: np.ndarray, targets: np.ndarray, phi: Dictionary,
                     mu1: float, w_s: float) -> float:
    """The penalized coding objective the ISTA iteration descends."""
    resid = phi.data @ alpha - targets
    return float(0.5 * mu1 * np.sum(resid * resid) + w_s * np.sum(np.abs(alpha)))


def _nlm_column_update(grad_stepped: np.ndarray, phi: Dictionary,
                       denoiser: NonLocalMeans, thr: float,
                       patch_shape: tuple[int, int]) -> np.ndarray:
    out = np.zeros_like(grad_stepped)
    for j in range(grad_stepped.shape[1]):
        col = grad_stepped[:, j]
        support = np.flatnonzero(soft_threshold(col, thr))
        if support.size == 0:
            continue
        decoded = (phi.data @ col).reshape(patch_shape)
        denoised = denoiser.apply_image(decoded).reshape(-1)
        coef, *_ = np.linalg.lstsq(phi.data[:, support], denoised, rcond=None)
        out[support, j] = soft_threshold(coef, thr)
    return out


def pnp_ista_solve(init: np.ndarray, targets: np.ndarray, phi: Dictionary,
                   denoiser: Denoiser, mu1: float, w_s: float, it_max: int,
                   patch_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Run ``it_max`` denoised gradient iterations on the coding problem.

    The step size is 1 over the certified Lipschitz bound
    ``mu1 * spectral_norm(Phi)^2``. A passed-in SoftThreshold is applied at
    the matching ISTA scale ``step * w_s`` (its own threshold field is for
    standalone use), which makes the iteration exact ISTA and the objective
    non-increasing.
    """
    if it_max < 1:
        raise HsiError("bad-config", "it_max must be >= 1")
    if mu1 <= 0:
        raise HsiError("bad-config", "mu1 must be > 0")
    targets = np.asarray(targets, dtype=np.float64)
    alpha = np.array(init, dtype=np.float64, copy=True)
    if alpha.shape != (phi.atoms, targets.shape[1]):
        raise HsiError("shape-mismatch",
                       f"init codes {alpha.shape} inconsistent with "
                       f"{phi.atoms} atoms x {targets.shape[1]} patches")
    lipschitz = mu1 * phi.spectral_norm ** 2
    eta = 1.0 / lipschitz
    thr = eta * w_s
    if isinstance(denoiser, NonLocalMeans) and patch_shape is None:
        raise HsiError("bad-config", "NLM denoiser needs the 2-D patch shape")
    # eta * grad cancels mu1: alpha - (G alpha - Phi^T T) / spectral_norm^2.
    gram = phi.gram()
    cross = phi.data.T @ targets
    scale = phi.spectral_norm ** 2
    for _ in range(it_max):
        stepped = alpha - (gram @ alpha - cross) / scale
        if isinstance(denoiser, SoftThreshold):
            alpha = soft_threshold(stepped, thr)
        else:
            alpha = _nlm_column_update(stepped, phi, denoiser, thr, patch_shape)
    if not np.all(np.isfinite(alpha)):
        raise HsiError("sparse-diverged", "sparse coding diverged")
    return alpha
