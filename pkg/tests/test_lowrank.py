"""Singular value thresholding against an independent first-order oracle."""

import numpy as np
import pytest

from hsinpaint.core import HsiCube, HsiError, dematricize, matricize
from hsinpaint.lowrank import SvtConfig, nuclear_norm, svt


def _objective(u, v, w, mu):
    return w * nuclear_norm(u) + 0.5 * mu * np.sum((v - u) ** 2)


def prox_descent_oracle(v, w, mu, iters=400, tol=1e-12):
    """Minimize w*||u||_* + mu/2 ||v - u||^2 by descent along the
    (sub)gradient with Armijo backtracking.

    Intended for the regime where the minimizer keeps full rank (threshold
    below the smallest singular value), where the nuclear norm is smooth
    with gradient U V^T and descent converges linearly.
    """
    u = v.copy()
    obj = _objective(u, v, w, mu)
    for _ in range(iters):
        uu, _, vt = np.linalg.svd(u, full_matrices=False)
        grad = w * (uu @ vt) + mu * (u - v)
        gnorm2 = float(np.sum(grad * grad))
        if gnorm2 <= tol * max(obj, 1.0) * 1e-6:
            break
        t = 1.0 / mu
        while t > 1e-12:
            cand = u - t * grad
            cand_obj = _objective(cand, v, w, mu)
            if cand_obj <= obj - 1e-4 * t * gnorm2:
                break
            t *= 0.5
        u = u - t * grad
        new_obj = _objective(u, v, w, mu)
        if obj - new_obj <= 1e-15 * max(obj, 1.0):
            obj = new_obj
            break
        obj = new_obj
    return u


def _cube_from_matrix(mat, dims):
    return dematricize(np.asarray(mat, dtype=float), dims)


def test_zero_threshold_is_identity():
    rng = np.random.default_rng(0)
    cube = HsiCube(rng.random((5, 4, 3)))
    out = svt(cube, SvtConfig(threshold=0.0))
    assert np.max(np.abs(out.values - cube.values)) < 1e-12


def test_diagonal_analytic_shrinkage():
    cube = _cube_from_matrix(np.diag([3.0, 1.0]), (2, 1, 2))
    out = svt(cube, SvtConfig(threshold=2.0))
    assert np.max(np.abs(matricize(out) - np.diag([1.0, 0.0]))) < 1e-12


def test_svt_matches_descent_oracle():
    rng = np.random.default_rng(1)
    for trial in range(20):
        v = rng.standard_normal((20, 12))
        smin = np.linalg.svd(v, compute_uv=False)[-1]
        thr = 0.5 * smin  # keep the minimizer full rank (smooth regime)
        cube = _cube_from_matrix(v, (20, 1, 12))
        ours = matricize(svt(cube, SvtConfig(threshold=thr)))
        oracle = prox_descent_oracle(v, w=thr, mu=1.0)
        rel = np.linalg.norm(ours - oracle) / max(np.linalg.norm(ours), 1e-12)
        assert rel < 1e-6


def test_non_expansive():
    rng = np.random.default_rng(2)
    cfg = SvtConfig(threshold=0.7)
    for _ in range(20):
        a = rng.standard_normal((6, 5, 4))
        b = rng.standard_normal((6, 5, 4))
        da = svt(HsiCube(a), cfg).values
        db = svt(HsiCube(b), cfg).values
        assert np.linalg.norm(da - db) <= np.linalg.norm(a - b) + 1e-12


def test_rank_monotone():
    rng = np.random.default_rng(3)
    low = rng.standard_normal((30, 3)) @ rng.standard_normal((3, 8))
    cube = _cube_from_matrix(low, (6, 5, 8))

    def numerical_rank(mat):
        s = np.linalg.svd(mat, compute_uv=False)
        return int(np.sum(s > 1e-10 * s[0])) if s[0] > 0 else 0

    base_rank = numerical_rank(matricize(cube))
    prev_rank = base_rank
    for thr in (0.0, 0.5, 2.0, 8.0, 50.0):
        r = numerical_rank(matricize(svt(cube, SvtConfig(threshold=thr))))
        assert r <= base_rank
        assert r <= prev_rank
        prev_rank = r


def test_objective_beats_random_perturbations():
    rng = np.random.default_rng(4)
    v = rng.standard_normal((12, 8))
    w, mu = 1.5, 1.0
    cube = _cube_from_matrix(v, (12, 1, 8))
    out = matricize(svt(cube, SvtConfig(threshold=w / mu)))
    base = _objective(out, v, w, mu)
    for _ in range(10 ** 4):
        scale = 10.0 ** rng.uniform(-4, 0)
        pert = out + scale * rng.standard_normal(out.shape)
        assert _objective(pert, v, w, mu) >= base - 1e-10


def test_rank_cap_truncates_before_shrinkage():
    rng = np.random.default_rng(5)
    v = rng.standard_normal((10, 6))
    cube = _cube_from_matrix(v, (10, 1, 6))
    capped = matricize(svt(cube, SvtConfig(threshold=0.1, rank_cap=2)))
    s = np.linalg.svd(capped, compute_uv=False)
    assert np.sum(s > 1e-10 * max(s[0], 1)) <= 2


def test_bad_config_rejected():
    with pytest.raises(HsiError):
        SvtConfig(threshold=-1.0)
    with pytest.raises(HsiError):
        SvtConfig(threshold=1.0, rank_cap=0)
