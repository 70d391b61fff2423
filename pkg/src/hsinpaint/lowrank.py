"""Singular value thresholding on the pixels-by-bands unfolding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import HsiCube, HsiError, dematricize, matricize


@dataclass(frozen=True)
class SvtConfig:
    """Shrinkage amount (prior weight over penalty) and optional rank cap."""

    threshold: float
    rank_cap: int | None = None

    def __post_init__(self):
        if not np.isfinite(self.threshold) or self.threshold < 0:
            raise HsiError("bad-config", "SVT threshold must be finite and >= 0")
        if self.rank_cap is not None and self.rank_cap < 1:
            raise HsiError("bad-config", "rank_cap must be >= 1")


def nuclear_norm(mat: np.ndarray) -> float:
    return float(np.linalg.svd(mat, compute_uv=False).sum())


def svt(v: HsiCube, cfg: SvtConfig) -> HsiCube:
    """Proximal map of ``threshold * ||.||_*``: soft-shrink the singular values.

    The SVD runs on the pixels-by-bands matricization; with the optional
    ``rank_cap`` the spectrum is truncated before shrinkage.
    """
    mat = matricize(v)
    try:
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise HsiError("svd-failure", f"SVD did not converge: {exc}") from exc
    if cfg.rank_cap is not None:
        s = s.copy()
        s[cfg.rank_cap:] = 0.0
    shrunk = np.maximum(s - cfg.threshold, 0.0)
    return dematricize((u * shrunk) @ vt, v.dims)
