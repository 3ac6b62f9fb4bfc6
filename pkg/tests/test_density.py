import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import random_cloud
from vodgs.core_math import logit, mat_to_sym, sigmoid, sym_to_mat
from vodgs.density import (
    PRUNE_TAU,
    SPLIT_FACTOR,
    DensifyStats,
    densify,
    opacity_reset,
    prune,
    prune_mask,
    reset_s_hat,
)
from vodgs.model import Camera, GaussianCloud, max_opacity_over_views


def axis_cams():
    out = []
    for k, d in enumerate(([5, 0, 0], [-5, 0, 0], [0, 5, 0], [0, 0, 5])):
        up = [0, 0, 1] if d[2] == 0 else [0, 1, 0]
        out.append(Camera.look_at(d, [0, 0, 0], up=up, width=16, height=16, id=k))
    return out


def hot_stats(n, hot, value=1.0):
    s = DensifyStats.zeros(n)
    s.grad_accum[hot] = value
    s.count[:] = 1
    return s


# --- densify

def test_densify_nothing_hot(rng):
    c = random_cloud(rng, 5)
    out, src = densify(c, hot_stats(5, []), 2e-4, 0.1, rng)
    assert out.equals(c) and list(src) == list(range(5))


def test_densify_clone_is_exact_copy(rng):
    c = random_cloud(rng, 4, scale=(0.01, 0.02))
    out, src = densify(c, hot_stats(4, [2]), 2e-4, 0.1, rng)
    assert len(out) == 5 and src[-1] == -1
    assert out.select([4]).equals(c.select([2]))
    assert out.select(range(4)).equals(c)


def test_densify_split(rng):
    c = random_cloud(rng, 3, scale=(0.3, 0.5))
    out, src = densify(c, hot_stats(3, [1]), 2e-4, 0.1, rng)
    assert len(out) == 4
    assert list(src) == [0, 2, -1, -1]
    kids = out.select([2, 3])
    assert np.allclose(np.exp(kids.log_scales), np.exp(c.log_scales[1]) / SPLIT_FACTOR)
    for name in ("rotations", "sh", "gamma", "s_hat"):
        assert np.array_equal(getattr(kids, name), np.repeat(getattr(c, name)[1:2], 2, axis=0))
    assert not np.array_equal(kids.means[0], kids.means[1])


def test_densify_stats_size_checked(rng):
    with pytest.raises(ValueError):
        densify(random_cloud(rng, 3), DensifyStats.zeros(2), 2e-4, 0.1, rng)


def test_stats_update_and_remap():
    s = DensifyStats.zeros(3)
    vis = np.array([True, False, True])
    s.update(vis, np.array([[2.0, 0.0], [5.0, 5.0], [0.0, 4.0]]), np.array([3.0, 9.0, 1.0]), 10, 20)
    assert np.allclose(s.mean_grad(), [10.0, 0.0, 40.0])
    assert list(s.max_radii) == [3.0, 0.0, 1.0]
    s.remap(np.array([2, -1, 0]))
    assert list(s.count) == [1, 0, 1]
    s.reset()
    assert not s.grad_accum.any()


# --- prune

def test_prune_scalar_rule():
    c = GaussianCloud.zeros(2, np.float64)
    c.gamma[:] = [logit(0.004), logit(0.006)]
    out, keep, n = prune(c, axis_cams())
    assert n == 1 and list(keep) == [False, True]


def test_prune_keeps_gaussian_boosted_in_one_view():
    c = GaussianCloud.zeros(2, np.float64)
    c.gamma[:] = -10.0
    c.s_hat[0] = [8, 0, 0, 0, 0, 0]
    cams = axis_cams()
    opac = np.array([[max_opacity_over_views(c, g, [cam]) for cam in cams] for g in range(2)])
    assert (opac[0] >= PRUNE_TAU).sum() == 2  # +x and -x see the same even profile
    assert sigmoid(-10 + 8) >= PRUNE_TAU
    assert list(prune_mask(c, cams)) == [False, True]
    assert list(prune_mask(c, cams[2:])) == [True, True]


@given(arrays(np.float64, (6, 6), elements=st.floats(-12, 12)), arrays(np.float64, 6, elements=st.floats(-12, 4)))
def test_prune_matches_enumeration(s, g):
    c = GaussianCloud.zeros(6, np.float64)
    c.s_hat[:] = s
    c.gamma[:] = g
    cams = axis_cams()
    brute = np.array([max(max_opacity_over_views(c, i, [cam]) for cam in cams) < PRUNE_TAU for i in range(6)])
    assert np.array_equal(prune_mask(c, cams), brute)


def test_prune_zero_s_hat_bitwise_scalar_rule(rng):
    c = random_cloud(rng, 200)
    c.s_hat[:] = 0
    c.gamma[:] = rng.normal(-5, 1, 200)
    assert np.array_equal(prune_mask(c, axis_cams()), sigmoid(c.gamma) < PRUNE_TAU)


def test_prune_outliers(rng):
    c = random_cloud(rng, 3)
    c.gamma[:] = 5
    c.log_scales[2] = np.log(3.0)
    m = prune_mask(c, axis_cams(), max_radii=np.array([1.0, 50.0, 1.0]), max_screen_radius=20, max_world_scale=1.0)
    assert list(m) == [False, True, True]
    with pytest.raises(ValueError):
        prune_mask(c, [])


# --- reset

def test_reset_diagonal_examples():
    s = mat_to_sym(np.diag([3.0, 2.0, 1.0]))
    assert np.allclose(sym_to_mat(reset_s_hat(s, "L")[0]), np.diag([3, 0, 0]))
    assert np.allclose(sym_to_mat(reset_s_hat(s, "S")[0]), np.diag([0, 0, 1]))
    with pytest.raises(ValueError):
        reset_s_hat(s, "M")


def random_sym(rng, n):
    a = rng.normal(size=(n, 3, 3)) * rng.uniform(0.1, 10, (n, 1, 1))
    return mat_to_sym(a + a.transpose(0, 2, 1))


@pytest.mark.parametrize("variant,col", [("L", 2), ("S", 0)])
def test_reset_against_numpy_eigh(rng, variant, col):
    s = random_sym(rng, 300)
    out = reset_s_hat(s, variant)
    lam, vec = np.linalg.eigh(sym_to_mat(s))  # ascending
    kept = lam[:, col]
    lam_out = np.linalg.eigvalsh(sym_to_mat(out))
    tol = 1e-6 * (1 + np.abs(kept))
    order = np.argsort(np.abs(lam_out), axis=1)
    small = np.take_along_axis(lam_out, order[:, :2], axis=1)
    big = np.take_along_axis(lam_out, order[:, 2:], axis=1)[:, 0]
    assert np.all(np.abs(small) < tol[:, None])
    assert np.all(np.abs(big - kept) < tol)
    v = vec[:, :, col]
    assert np.allclose(np.einsum("nij,nj->ni", sym_to_mat(out), v), kept[:, None] * v, atol=1e-8)
    assert np.abs(reset_s_hat(out, variant) - out).max() < 1e-6


def test_reset_keeps_rank_one_input():
    s = mat_to_sym(-2.0 * np.outer([0.6, 0.8, 0], [0.6, 0.8, 0]))
    assert np.array_equal(reset_s_hat(s, "L")[0], s)
    assert np.array_equal(reset_s_hat(np.zeros(6), "S")[0], np.zeros(6))


def test_opacity_reset(rng):
    c = random_cloud(rng, 20, dtype=np.float32)
    c.gamma[:5] = -8
    out = opacity_reset(c, "S")
    assert np.all(out.gamma <= np.float32(logit(0.01)))
    assert np.array_equal(out.gamma[:5], c.gamma[:5])
    assert out.s_hat.dtype == np.float32
    assert np.array_equal(out.means, c.means)
    base = opacity_reset(c, None)
    assert np.array_equal(base.s_hat, c.s_hat)
    assert not np.array_equal(c.gamma, out.gamma)  # input untouched, new cloud returned
