"""Sparse-coding dictionaries: an analytic overcomplete DCT and a
mask-weighted K-SVD learned from the degraded image itself.

The K-SVD variant weights every residual by the per-patch observation
mask, so missing entries neither drive the coding step nor the atom
updates. Patches with fewer than half their entries observed are
excluded from training.

Atom rows that no using patch observes carry no data at all (with a mask
replicated across bands this is every masked pixel), so after each
update those rows are filled harmonically from the atom's observed rows.
The fill touches only zero-weight rows, leaving the training objective
untouched, while keeping every atom a coherent smooth continuation that
can extrapolate into the holes at coding time.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .core import HsiError, PatchSet

USABLE_FRACTION = 0.5


def spectral_norm_upper(mat: np.ndarray, tol: float = 1e-13,
                        max_iter: int = 5000, safety: float = 1e-6) -> float:
    """Certified upper bound on the largest singular value via power iteration.

    The Rayleigh quotient converges to the top eigenvalue of the Gram matrix
    from below; the converged estimate is inflated by ``safety`` so the
    returned value can safely be used as a Lipschitz bound.
    """
    mat = np.asarray(mat, dtype=np.float64)
    gram = mat.T @ mat if mat.shape[1] <= mat.shape[0] else mat @ mat.T
    rng = np.random.default_rng(0)
    v = rng.standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = gram @ v
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1.0):
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(max(lam, 0.0)) * (1.0 + safety))


class Dictionary:
    """Atom matrix (patch_dim x atoms) with unit-norm columns and a cached
    certified bound on its spectral norm."""

    def __init__(self, data: np.ndarray, renormalize: bool = False):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or min(data.shape) < 1:
            raise HsiError("shape-mismatch", f"dictionary must be 2-D, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise HsiError("non-finite", "dictionary contains NaN or Inf")
        norms = np.linalg.norm(data, axis=0)
        if renormalize:
            if norms.min() <= 0:
                raise HsiError("bad-dictionary", "cannot normalize a zero atom")
            data = data / norms
        elif np.max(np.abs(norms - 1.0)) > 1e-10:
            raise HsiError("bad-dictionary", "dictionary columns must have unit norm")
        self.data = data
        self.spectral_norm = spectral_norm_upper(data)
        self._gram: np.ndarray | None = None

    @property
    def patch_dim(self) -> int:
        return self.data.shape[0]

    @property
    def atoms(self) -> int:
        return self.data.shape[1]

    def gram(self) -> np.ndarray:
        if self._gram is None:
            self._gram = self.data.T @ self.data
        return self._gram


def _dct_grid(patch_dim: int, atoms: int) -> np.ndarray:
    # Cosine atoms sampled on an `atoms`-point frequency grid; for
    # atoms == patch_dim this is the orthonormal DCT-II basis.
    i = np.arange(patch_dim)[:, None]
    k = np.arange(atoms)[None, :]
    grid = np.cos(np.pi * (2 * i + 1) * k / (2 * atoms))
    return grid / np.linalg.norm(grid, axis=0)


def analytic_dictionary(kind: str, patch_dim: int, atoms: int) -> Dictionary:
    """Analytic sparsifying transform; currently only ``overcomplete_dct``."""
    if kind != "overcomplete_dct":
        raise HsiError("bad-config", f"unknown analytic dictionary kind {kind!r}")
    if atoms < patch_dim:
        raise HsiError("bad-config", "overcomplete DCT needs atoms >= patch_dim")
    return Dictionary(_dct_grid(patch_dim, atoms))


def masked_coding_objective(patches: np.ndarray, weights: np.ndarray,
                            dict_data: np.ndarray, codes: np.ndarray) -> float:
    """Sum of squared mask-weighted reconstruction residuals."""
    resid = weights * (patches - dict_data @ codes)
    return float(np.sum(resid * resid))


def omp_masked(dict_data: np.ndarray, target: np.ndarray, weights: np.ndarray,
               sparsity: int) -> np.ndarray:
    """Orthogonal matching pursuit on the observed entries of one patch.

    Atom selection normalizes correlations by the masked atom norms; the
    active coefficients are refit by least squares on the observed rows
    after every selection.
    """
    w = weights > 0
    wd = dict_data * w[:, None]
    wt = target * w
    norms = np.linalg.norm(wd, axis=0)
    usable = norms > 1e-12
    coef = np.zeros(dict_data.shape[1])
    support: list[int] = []
    resid = wt.copy()
    for _ in range(min(sparsity, int(usable.sum()))):
        corr = np.abs(wd.T @ resid)
        corr[~usable] = -np.inf
        corr[support] = -np.inf
        scaled = np.where(np.isfinite(corr), corr / np.maximum(norms, 1e-12), -np.inf)
        j = int(np.argmax(scaled))
        if not np.isfinite(scaled[j]) or scaled[j] <= 1e-12:
            break
        support.append(j)
        sol, *_ = np.linalg.lstsq(wd[:, support], wt, rcond=None)
        resid = wt - wd[:, support] @ sol
        if np.linalg.norm(resid) <= 1e-12:
            break
    if support:
        coef[support] = sol
    return coef


class _HarmonicFiller:
    """Fill uncovered atom rows by solving the Laplace equation on them,
    with the covered rows as Dirichlet data.

    The grid is the 2-D patch layout when known, else the raveled index is
    treated as a 1-D chain. Factorizations are cached per hole pattern, so
    a mask replicated across patches costs one factorization total.
    """

    def __init__(self, patch_dim: int, patch_shape: tuple[int, int] | None):
        if patch_shape is not None and patch_shape[0] * patch_shape[1] != patch_dim:
            raise HsiError("shape-mismatch",
                           f"patch_shape {patch_shape} does not match dim {patch_dim}")
        self.patch_dim = patch_dim
        self.patch_shape = patch_shape
        self._cache: dict[bytes, tuple] = {}

    def _neighbors(self, idx: int) -> list[int]:
        if self.patch_shape is None:
            out = []
            if idx > 0:
                out.append(idx - 1)
            if idx < self.patch_dim - 1:
                out.append(idx + 1)
            return out
        h, w = self.patch_shape
        r, c = divmod(idx, w)
        out = []
        if r > 0:
            out.append(idx - w)
        if r < h - 1:
            out.append(idx + w)
        if c > 0:
            out.append(idx - 1)
        if c < w - 1:
            out.append(idx + 1)
        return out

    def _system(self, covered: np.ndarray):
        key = covered.tobytes()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        holes = np.flatnonzero(~covered)
        pos = {int(p): i for i, p in enumerate(holes)}
        rows, cols, vals = [], [], []
        boundary: list[list[tuple[int, float]]] = [[] for _ in holes]
        for i, p in enumerate(holes):
            nbrs = self._neighbors(int(p))
            rows.append(i)
            cols.append(i)
            vals.append(float(len(nbrs)))
            for q in nbrs:
                if covered[q]:
                    boundary[i].append((q, 1.0))
                else:
                    rows.append(i)
                    cols.append(pos[q])
                    vals.append(-1.0)
        lap = sparse.csc_matrix((vals, (rows, cols)), shape=(len(holes), len(holes)))
        try:
            solver = splu(lap)
        except RuntimeError:
            solver = None
        out = (holes, boundary, solver)
        self._cache[key] = out
        return out

    def fill(self, vec: np.ndarray, covered: np.ndarray) -> np.ndarray:
        if covered.all() or not covered.any():
            return vec
        holes, boundary, solver = self._system(covered)
        if solver is None:
            return vec
        rhs = np.array([sum(w * vec[q] for q, w in contribs) for contribs in boundary])
        out = vec.copy()
        out[holes] = solver.solve(rhs)
        return out


def _dct_init(patch_dim: int, atoms: int,
              patch_shape: tuple[int, int] | None) -> np.ndarray:
    """Low-frequency-first cosine atoms, separable over the 2-D patch grid
    when the shape is known."""
    if patch_shape is None:
        grid = _dct_grid(patch_dim, max(patch_dim, atoms))[:, :atoms]
        if grid.shape[1] < atoms:
            grid = _dct_grid(patch_dim, atoms)
        return grid / np.linalg.norm(grid, axis=0)
    h, w = patch_shape
    per_axis = int(np.ceil(np.sqrt(atoms)))
    g_r = _dct_grid(h, per_axis)
    g_c = _dct_grid(w, per_axis)
    cand = np.einsum("ik,jl->ijkl", g_r, g_c).reshape(h * w, per_axis * per_axis)
    order = sorted(range(per_axis * per_axis),
                   key=lambda t: (t // per_axis + t % per_axis, t // per_axis))
    sel = cand[:, order[:atoms]]
    return sel / np.linalg.norm(sel, axis=0)


def _replace_dead_atoms(dict_data: np.ndarray, codes: np.ndarray,
                        patches: np.ndarray, weights: np.ndarray,
                        rng: np.random.Generator, filler: _HarmonicFiller) -> None:
    """Point unused atoms at the worst-reconstructed patches (normalized,
    with their unobserved rows filled harmonically).

    A dead atom has zero coefficients everywhere, so replacing it leaves the
    coding objective unchanged. Ties on the residual are broken by the
    seeded generator.
    """
    resid = weights * (patches - dict_data @ codes)
    scores = np.sum(resid * resid, axis=0)
    used_patches: set[int] = set()
    for k in range(dict_data.shape[1]):
        if np.any(codes[k] != 0.0):
            continue
        avail = np.array([j for j in range(patches.shape[1]) if j not in used_patches])
        if avail.size == 0:
            break
        best = scores[avail].max()
        ties = avail[scores[avail] >= best - 1e-15]
        j = int(rng.choice(ties))
        used_patches.add(j)
        atom = filler.fill(patches[:, j], weights[:, j] > 0)
        nrm = np.linalg.norm(atom)
        if nrm > 1e-12:
            dict_data[:, k] = atom / nrm


def learn_ksvd(patches: PatchSet, valid_mask: PatchSet, atoms: int,
               sparsity: int = 8, iters: int = 15, seed: int = 0,
               patch_shape: tuple[int, int] | None = None,
               objective_trace: list | None = None) -> Dictionary:
    """Mask-weighted K-SVD with OMP sparse coding and harmonic atom completion.

    Atoms start from a low-frequency cosine grid. The coding step is
    guarded (a patch keeps its previous code when the new one fits worse)
    and each atom update is coordinate descent on the weighted rank-1
    subproblem followed by a harmonic fill of the rows no using patch
    observes, so the masked objective is non-increasing across sweeps.
    Deterministic given ``seed``.
    """
    if patches.data.shape != valid_mask.data.shape:
        raise HsiError("shape-mismatch", "patches and valid_mask must be congruent")
    if sparsity < 1 or atoms < 1 or iters < 0:
        raise HsiError("bad-config", "atoms/sparsity must be >= 1 and iters >= 0")
    weights_all = (valid_mask.data > 0).astype(np.float64)
    frac = weights_all.mean(axis=0)
    usable = frac >= USABLE_FRACTION
    if not np.any(usable):
        raise HsiError("insufficient-observed-data",
                       "insufficient observed data: no patch is at least half observed")
    train = patches.data[:, usable]
    weights = weights_all[:, usable]

    rng = np.random.default_rng(seed)
    filler = _HarmonicFiller(train.shape[0], patch_shape)
    dict_data = _dct_init(train.shape[0], atoms, patch_shape)
    codes = np.zeros((atoms, train.shape[1]))

    for _ in range(iters):
        # Guarded coding step.
        for j in range(train.shape[1]):
            new = omp_masked(dict_data, train[:, j], weights[:, j], sparsity)
            old_res = weights[:, j] * (train[:, j] - dict_data @ codes[:, j])
            new_res = weights[:, j] * (train[:, j] - dict_data @ new)
            if new_res @ new_res <= old_res @ old_res:
                codes[:, j] = new
        # Sequential atom updates (weighted rank-1 coordinate descent on the
        # covered rows; uncovered rows are harmonically continued, which the
        # objective cannot see).
        for k in range(atoms):
            using = np.flatnonzero(codes[k])
            if using.size == 0:
                continue
            w_k = weights[:, using]
            err = (train[:, using] - dict_data @ codes[:, using]
                   + np.outer(dict_data[:, k], codes[k, using]))
            g = codes[k, using]
            d = dict_data[:, k]
            for _ in range(2):
                den_d = w_k @ (g * g)
                covered = den_d > 1e-15
                d_new = np.where(covered, ((w_k * err) @ g) / np.maximum(den_d, 1e-15), d)
                d_new = filler.fill(d_new, covered)
                nrm = np.linalg.norm(d_new)
                if nrm > 1e-12:
                    d = d_new / nrm
                den_g = (d * d) @ w_k
                g = np.where(den_g > 1e-15, (d @ (w_k * err)) / np.maximum(den_g, 1e-15), 0.0)
            dict_data[:, k] = d
            codes[k, using] = g
        _replace_dead_atoms(dict_data, codes, train, weights, rng, filler)
        if objective_trace is not None:
            objective_trace.append(masked_coding_objective(train, weights, dict_data, codes))

    return Dictionary(dict_data, renormalize=True)
