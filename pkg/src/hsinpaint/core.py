"""Cube, mask, and patch algebra shared by the whole pipeline.

Conventions used everywhere downstream:

* a hyperspectral cube is stored channels-last as a float64 array of
  shape ``(rows, cols, bands)``;
* its vectorized form is band-sequential (BSQ): all of band 0's
  row-major spatial plane, then band 1, and so on (this is also the
  on-disk payload order, see :mod:`hsinpaint.container`);
* the pixels-by-bands matricization puts band ``b`` in column ``b``,
  pixels raveled row-major.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class HsiError(Exception):
    """Pipeline error carrying a stable short code for CLI reporting."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _as_float_cube(values, what: str) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 3 or min(v.shape) < 1:
        raise HsiError("shape-mismatch", f"{what} must be a 3-D array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise HsiError("non-finite", f"{what} contains NaN or Inf")
    return v


@dataclass(frozen=True)
class HsiCube:
    """Dense reflectance cube, ``values`` of shape (rows, cols, bands), float64.

    Values are nominally in [0, 1] after normalization but this is not
    enforced; finiteness is.
    """

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_float_cube(self.values, "cube"))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class MaskCube:
    """Binary observation mask congruent with a cube: 0 missing, 1 observed.

    ``replicated_spatial`` is derived on construction and is True when the
    mask is identical across bands (whole spectral columns masked).
    """

    values: np.ndarray
    replicated_spatial: bool = field(init=False)

    def __post_init__(self):
        v = _as_float_cube(self.values, "mask")
        if not np.all((v == 0.0) | (v == 1.0)):
            raise HsiError("mask-values", "mask values must be 0/1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "replicated_spatial", bool(np.all(v == v[:, :, :1])))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class PatchScheme:
    """Family of patch extraction operators.

    ``band_slice`` mode: one patch per band, each the band's vectorized
    spatial plane (patch dimension rows*cols). ``spatial`` mode: square
    windows of ``patch_edge`` per band on a ``stride`` grid, with the
    last window clamped to the border so every pixel is covered.
    """

    mode: Literal["band_slice", "spatial"] = "band_slice"
    patch_edge: int | None = None
    stride: int | None = None

    def __post_init__(self):
        if self.mode == "band_slice":
            if self.patch_edge is not None or self.stride is not None:
                raise HsiError("bad-patch-scheme", "band_slice mode takes no patch_edge/stride")
        elif self.mode == "spatial":
            if self.patch_edge is None or self.patch_edge < 1:
                raise HsiError("bad-patch-scheme", "spatial mode needs patch_edge >= 1")
            if self.stride is None or self.stride < 1:
                raise HsiError("bad-patch-scheme", "spatial mode needs stride >= 1")
            if self.stride > self.patch_edge:
                raise HsiError("bad-patch-scheme", "stride must not exceed patch_edge (full cover)")
        else:
            raise HsiError("bad-patch-scheme", f"unknown mode {self.mode!r}")

    def validate_for(self, dims: tuple[int, int, int]) -> None:
        rows, cols, _ = dims
        if self.mode == "spatial" and self.patch_edge > min(rows, cols):
            raise HsiError("bad-patch-scheme", "patch_edge exceeds spatial dimensions")

    def patch_shape(self, dims: tuple[int, int, int]) -> tuple[int, int]:
        """2-D shape of a single patch (used by image-domain denoisers)."""
        if self.mode == "band_slice":
            return dims[0], dims[1]
        return self.patch_edge, self.patch_edge

    def patch_dim(self, dims: tuple[int, int, int]) -> int:
        s = self.patch_shape(dims)
        return s[0] * s[1]

    def window_starts(self, dims: tuple[int, int, int]) -> tuple[list[int], list[int]]:
        """Row/col window starts for spatial mode (last window clamped)."""
        if self.mode != "spatial":
            raise HsiError("bad-patch-scheme", "window_starts applies to spatial mode only")
        self.validate_for(dims)
        return (_clamped_starts(dims[0], self.patch_edge, self.stride),
                _clamped_starts(dims[1], self.patch_edge, self.stride))

    def patch_count(self, dims: tuple[int, int, int]) -> int:
        if self.mode == "band_slice":
            return dims[2]
        rs, cs = self.window_starts(dims)
        return dims[2] * len(rs) * len(cs)


def _clamped_starts(n: int, edge: int, stride: int) -> list[int]:
    starts = list(range(0, n - edge + 1, stride))
    if starts[-1] != n - edge:
        starts.append(n - edge)
    return starts


@dataclass(frozen=True)
class PatchSet:
    """Extracted patches as columns plus the per-element cover count.

    ``data`` is (patch_dim, count); ``coverage`` is an integer cube
    counting how many patches contain each element, i.e. the diagonal
    of the summed extract-then-scatter operator.
    """

    data: np.ndarray
    coverage: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise HsiError("shape-mismatch", f"patch data must be 2-D, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise HsiError("non-finite", "patch data contains NaN or Inf")
        c = np.asarray(self.coverage)
        if c.ndim != 3:
            raise HsiError("shape-mismatch", "coverage must be a 3-D cube")
        if c.min() < 1:
            raise HsiError("bad-patch-scheme", "coverage must be >= 1 everywhere (total cover)")
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "coverage", np.asarray(c, dtype=np.int64))

    @property
    def patch_dim(self) -> int:
        return self.data.shape[0]

    @property
    def count(self) -> int:
        return self.data.shape[1]


# ---------------------------------------------------------------------------
# vectorization / matricization

def vectorize(cube: HsiCube | MaskCube) -> np.ndarray:
    """Flatten a cube to its band-sequential vector."""
    return np.ascontiguousarray(cube.values.transpose(2, 0, 1)).reshape(-1)


def devectorize(v: np.ndarray, dims: tuple[int, int, int]) -> HsiCube:
    """Inverse of :func:`vectorize`; exact round trip."""
    rows, cols, bands = dims
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size != rows * cols * bands:
        raise HsiError("shape-mismatch",
                       f"vector of length {v.size} does not match dims {dims}")
    return HsiCube(v.reshape(bands, rows, cols).transpose(1, 2, 0))


def matricize(cube: HsiCube) -> np.ndarray:
    """Pixels-by-bands unfolding: column b holds band b raveled row-major."""
    rows, cols, bands = cube.dims
    return cube.values.reshape(rows * cols, bands)


def dematricize(mat: np.ndarray, dims: tuple[int, int, int]) -> HsiCube:
    rows, cols, bands = dims
    mat = np.asarray(mat, dtype=np.float64)
    if mat.shape != (rows * cols, bands):
        raise HsiError("shape-mismatch",
                       f"matrix of shape {mat.shape} does not match dims {dims}")
    return HsiCube(mat.reshape(rows, cols, bands))


# ---------------------------------------------------------------------------
# masking

def apply_mask(y_src: HsiCube, m: MaskCube) -> HsiCube:
    """Zero the unobserved entries of ``y_src``; observed entries unchanged."""
    if y_src.dims != m.dims:
        raise HsiError("shape-mismatch",
                       f"cube dims {y_src.dims} do not match mask dims {m.dims}")
    return HsiCube(y_src.values * m.values)


# ---------------------------------------------------------------------------
# patch extraction / scatter

def compute_coverage(scheme: PatchScheme, dims: tuple[int, int, int]) -> np.ndarray:
    """Per-element count of covering patches, as an int64 cube."""
    rows, cols, bands = dims
    if scheme.mode == "band_slice":
        return np.ones(dims, dtype=np.int64)
    rs, cs = scheme.window_starts(dims)
    e = scheme.patch_edge
    plane = np.zeros((rows, cols), dtype=np.int64)
    for r0 in rs:
        for c0 in cs:
            plane[r0:r0 + e, c0:c0 + e] += 1
    return np.repeat(plane[:, :, None], bands, axis=2)


def extract_patches(x: HsiCube | MaskCube, scheme: PatchScheme) -> PatchSet:
    """Extract all patches as columns, in a fixed (band, row, col) order."""
    dims = x.dims
    scheme.validate_for(dims)
    rows, cols, bands = dims
    if scheme.mode == "band_slice":
        data = x.values.reshape(rows * cols, bands).copy()
        return PatchSet(data=data, coverage=np.ones(dims, dtype=np.int64))
    rs, cs = scheme.window_starts(dims)
    e = scheme.patch_edge
    win = sliding_window_view(x.values, (e, e), axis=(0, 1))  # (R-e+1, C-e+1, B, e, e)
    sel = win[np.ix_(rs, cs)]                                 # (nr, nc, B, e, e)
    data = sel.transpose(2, 0, 1, 3, 4).reshape(bands * len(rs) * len(cs), e * e).T
    return PatchSet(data=np.ascontiguousarray(data), coverage=compute_coverage(scheme, dims))


def scatter_patches(p: PatchSet | np.ndarray, scheme: PatchScheme,
                    dims: tuple[int, int, int]) -> HsiCube:
    """Adjoint of :func:`extract_patches`: overlap-add of patch columns.

    No coverage normalization is applied; dividing by the coverage cube
    recovers the partition-of-unity identity. Accumulation runs in a
    fixed serial window order so results are bit-reproducible.
    """
    data = p.data if isinstance(p, PatchSet) else np.asarray(p, dtype=np.float64)
    scheme.validate_for(dims)
    rows, cols, bands = dims
    if scheme.mode == "band_slice":
        if data.shape != (rows * cols, bands):
            raise HsiError("shape-mismatch",
                           f"patch data {data.shape} inconsistent with dims {dims}")
        return dematricize(data, dims)
    rs, cs = scheme.window_starts(dims)
    e = scheme.patch_edge
    expected = (e * e, bands * len(rs) * len(cs))
    if data.shape != expected:
        raise HsiError("shape-mismatch",
                       f"patch data {data.shape} inconsistent with scheme/dims (want {expected})")
    blocks = data.T.reshape(bands, len(rs), len(cs), e, e)
    out = np.zeros(dims, dtype=np.float64)
    for i, r0 in enumerate(rs):
        for j, c0 in enumerate(cs):
            out[r0:r0 + e, c0:c0 + e, :] += blocks[:, i, j].transpose(1, 2, 0)
    return HsiCube(out)
