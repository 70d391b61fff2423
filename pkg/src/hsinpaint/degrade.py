"""Synthetic ground-truth cubes and the mask-plus-noise degradation model.

Randomness comes from a counter-based Philox generator keyed by the spec
seed, so every output is a pure function of (input, spec).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

from .core import HsiCube, HsiError, MaskCube

MaskKind = Literal["random_pixels", "dead_lines", "stripes"]


@dataclass(frozen=True)
class SynthSpec:
    """Low-rank synthetic scene: smooth abundances times smooth spectra."""

    rows: int = 32
    cols: int = 32
    bands: int = 32
    rank: int = 4
    abundance_smoothness: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if min(self.rows, self.cols, self.bands) < 1 or self.rank < 1:
            raise HsiError("bad-config", "synth dims and rank must be positive")
        if self.abundance_smoothness < 0:
            raise HsiError("bad-config", "abundance_smoothness must be >= 0")


@dataclass(frozen=True)
class DegradeSpec:
    """Mask pattern plus additive Gaussian noise on the observed entries."""

    mask_kind: MaskKind = "random_pixels"
    missing_fraction: float = 0.25
    noise_sigma: float = 0.12
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.missing_fraction < 1.0:
            raise HsiError("bad-config", "missing_fraction must be in [0, 1)")
        if self.noise_sigma < 0:
            raise HsiError("bad-config", "noise_sigma must be >= 0")
        if self.mask_kind not in ("random_pixels", "dead_lines", "stripes"):
            raise HsiError("bad-config", f"unknown mask kind {self.mask_kind!r}")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def _stretch(v: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = v.max() - v.min()
    if span <= 0:
        return np.full_like(v, 0.5 * (lo + hi))
    return lo + (hi - lo) * (v - v.min()) / span


def synth_cube(spec: SynthSpec) -> HsiCube:
    """Generate a nonnegative cube whose matricization has rank exactly ``spec.rank``.

    Abundance maps are smoothed uniform fields stretched to [0, 1] (one per
    endmember), spectra are smoothed uniform curves stretched to [0.1, 1];
    the product is scaled by its maximum so values land in [0, 1]. Per-column
    stretching and scalar scaling both preserve the rank of the factorization.
    """
    if spec.rank > min(spec.rows * spec.cols, spec.bands):
        raise HsiError("bad-config",
                       f"rank {spec.rank} too large for {spec.rows}x{spec.cols}x{spec.bands}")
    rng = _rng(spec.seed)
    abund = np.stack(
        [_stretch(gaussian_filter(rng.random((spec.rows, spec.cols)),
                                  spec.abundance_smoothness, mode="reflect"),
                  0.0, 1.0).ravel()
         for _ in range(spec.rank)],
        axis=1,
    )
    spectra = np.stack(
        [_stretch(gaussian_filter1d(rng.random(spec.bands),
                                    spec.abundance_smoothness, mode="reflect"),
                  0.1, 1.0)
         for _ in range(spec.rank)],
        axis=1,
    )
    flat = abund @ spectra.T  # (rows*cols, bands), nonnegative
    peak = flat.max()
    if peak <= 0:
        raise HsiError("bad-config", "degenerate synthetic cube (all zero)")
    flat /= peak
    return HsiCube(flat.reshape(spec.rows, spec.cols, spec.bands))


def _mask_plane(dims: tuple[int, int, int], spec: DegradeSpec,
                rng: np.random.Generator) -> np.ndarray:
    rows, cols, _ = dims
    plane = np.ones((rows, cols), dtype=np.float64)
    if spec.mask_kind == "random_pixels":
        k = int(np.rint(spec.missing_fraction * rows * cols))
        if k:
            idx = rng.choice(rows * cols, size=k, replace=False)
            plane.ravel()[idx] = 0.0
    elif spec.mask_kind == "dead_lines":
        k = int(np.rint(spec.missing_fraction * rows))
        if k:
            plane[rng.choice(rows, size=k, replace=False), :] = 0.0
    else:  # stripes
        k = int(np.rint(spec.missing_fraction * cols))
        if k:
            plane[:, rng.choice(cols, size=k, replace=False)] = 0.0
    return plane


def degrade(x: HsiCube, spec: DegradeSpec) -> tuple[HsiCube, MaskCube]:
    """Apply the degradation model: mask whole spectral columns, then add
    i.i.d. Gaussian noise on the observed entries only.

    Missing entries of the output are exactly 0; with a zero fraction and
    zero sigma the output is bit-equal to the input.
    """
    rng = _rng(spec.seed)
    plane = _mask_plane(x.dims, spec, rng)
    m = MaskCube(np.repeat(plane[:, :, None], x.bands, axis=2))
    y = x.values * m.values
    if spec.noise_sigma > 0:
        y = y + m.values * rng.normal(0.0, spec.noise_sigma, size=x.dims)
    return HsiCube(y), m
