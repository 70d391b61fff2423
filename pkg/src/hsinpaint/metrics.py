"""Band-averaged PSNR and SSIM quality metrics."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import HsiCube, HsiError

PSNR_CAP_DB = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class QualityReport:
    mpsnr: float
    mssim: float
    per_band_psnr: tuple[float, ...]
    per_band_ssim: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "mpsnr": self.mpsnr,
            "mssim": self.mssim,
            "per_band_psnr": list(self.per_band_psnr),
            "per_band_ssim": list(self.per_band_ssim),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _check_pair(x: HsiCube, ref: HsiCube, peak: float) -> None:
    if x.dims != ref.dims:
        raise HsiError("shape-mismatch", f"dims {x.dims} vs {ref.dims}")
    if peak <= 0:
        raise HsiError("bad-config", "peak must be positive")


def per_band_psnr(x: HsiCube, ref: HsiCube, peak: float = 1.0) -> np.ndarray:
    """PSNR per band in dB, capped at 100 when the band MSE is below peak^2 * 1e-10."""
    _check_pair(x, ref, peak)
    diff = x.values - ref.values
    mse = np.mean(diff * diff, axis=(0, 1))
    out = np.empty_like(mse)
    tiny = mse < peak * peak * 1e-10
    out[tiny] = PSNR_CAP_DB
    out[~tiny] = 10.0 * np.log10(peak * peak / mse[~tiny])
    return out


def mpsnr(x: HsiCube, ref: HsiCube, peak: float = 1.0) -> float:
    return float(np.mean(per_band_psnr(x, ref, peak)))


def _gaussian_window() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-((np.arange(SSIM_WINDOW) - half) ** 2) / (2.0 * SSIM_SIGMA ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Gaussian-weighted local mean over every fully interior window.
    v = sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
    return np.einsum("ijkl,kl->ij", v, kernel)


def _ssim_band(a: np.ndarray, b: np.ndarray, kernel: np.ndarray, peak: float) -> float:
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a = _windowed(a, kernel)
    mu_b = _windowed(b, kernel)
    s_aa = _windowed(a * a, kernel) - mu_a * mu_a
    s_bb = _windowed(b * b, kernel) - mu_b * mu_b
    s_ab = _windowed(a * b, kernel) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * s_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (s_aa + s_bb + c2)
    return float(np.mean(num / den))


def per_band_ssim(x: HsiCube, ref: HsiCube, peak: float = 1.0) -> np.ndarray:
    """Single-scale SSIM per band (11x11 Gaussian window, sigma 1.5)."""
    _check_pair(x, ref, peak)
    if min(x.rows, x.cols) < SSIM_WINDOW:
        raise HsiError("image-too-small", "image too small for SSIM window")
    kernel = _gaussian_window()
    return np.array([_ssim_band(x.values[:, :, b], ref.values[:, :, b], kernel, peak)
                     for b in range(x.bands)])


def mssim(x: HsiCube, ref: HsiCube, peak: float = 1.0) -> float:
    return float(np.mean(per_band_ssim(x, ref, peak)))


def quality_report(x: HsiCube, ref: HsiCube, peak: float = 1.0) -> QualityReport:
    psnr = per_band_psnr(x, ref, peak)
    ssim = per_band_ssim(x, ref, peak)
    return QualityReport(
        mpsnr=float(psnr.mean()),
        mssim=float(ssim.mean()),
        per_band_psnr=tuple(float(v) for v in psnr),
        per_band_ssim=tuple(float(v) for v in ssim),
    )
