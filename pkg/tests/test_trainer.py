import numpy as np
import pytest

from vodgs.config import TrainConfig
from vodgs.scene import make_preset, make_specular_scene, specular_s_hat
from vodgs.core_math import quadratic_form, sigmoid
from vodgs.trainer import (
    TrainingDiverged,
    active_sh_degree,
    evaluate,
    learning_rates,
    load_checkpoint,
    psnr,
    save_checkpoint,
    ssim,
    train,
)


@pytest.fixture(scope="module")
def diffuse16():
    return make_specular_scene(n_diffuse=16, n_specular=0, n_train_views=6, n_test_views=2, width=32, height=32)


@pytest.fixture(scope="module")
def small_mixed():
    return make_specular_scene(n_diffuse=40, n_specular=10, n_train_views=8, n_test_views=2, width=32, height=32,
                               seed=3)


QUICK = dict(iterations=160, densify_from=20, densify_interval=40, opacity_reset_interval=100, densify_until=150,
             sh_degree_interval=50, log_interval=40)


# --- metrics

def test_psnr_examples():
    z = np.zeros((8, 8, 3))
    assert psnr(z, z) == 100.0
    assert psnr(z, z + 0.1) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        psnr(z, np.zeros((8, 7, 3)))


def test_ssim_examples():
    y, x = np.mgrid[0:16, 0:16]
    board = ((x + y) % 2).astype(float)[..., None].repeat(3, axis=2)
    assert ssim(board, board) == pytest.approx(1.0)
    assert ssim(board, 1 - board) < -0.9


# --- schedule helpers

def test_learning_rates_groups():
    base = learning_rates(TrainConfig(), 1, 2.0)
    assert base["s_hat"] == 0 and base["gamma"] == 5e-2
    assert base["means"] == pytest.approx(1.6e-4 * 2.0)
    assert base["sh_rest"] == pytest.approx(2.5e-3 / 20)
    vod = learning_rates(TrainConfig(variant="vod-l"), 1, 1.0)
    assert vod["gamma"] == vod["s_hat"] == pytest.approx(1.25e-2)
    full = learning_rates(TrainConfig(variant="vod-l", reduce_gamma_lr=False), 1, 1.0)
    assert full["gamma"] == 5e-2 and full["s_hat"] == pytest.approx(1.25e-2)
    end = learning_rates(TrainConfig(iterations=100), 101, 1.0)
    assert end["means"] == pytest.approx(1.6e-6)


def test_sh_warmup():
    cfg = TrainConfig()
    assert [active_sh_degree(cfg, it) for it in (1, 1000, 1001, 2001, 3001, 9000)] == [0, 0, 1, 2, 3, 3]


# --- scene construction

def test_specular_profile():
    s = specular_s_hat(np.array([[1.0, 0, 0]]))
    assert quadratic_form(s, np.array([[1.0, 0, 0]]))[0] == pytest.approx(4.0)
    assert quadratic_form(s, np.array([[0, 0, 1.0]]))[0] == pytest.approx(-4.0)


def test_scene_invariants(small_mixed):
    s = small_mixed
    assert not {c.id for c in s.train_cams} & {c.id for c in s.test_cams}
    m = s.matches.counts
    assert np.array_equal(m, m.T) and not np.diag(m).any()
    assert np.count_nonzero(s.gt_cloud.s_hat.any(axis=1)) == 10
    assert evaluate(s.gt_cloud, s).mean_psnr == 100.0
    with pytest.raises(ValueError):
        make_preset("glossy")


def test_evaluate_needs_test_views(diffuse16):
    from dataclasses import replace
    with pytest.raises(ValueError):
        evaluate(diffuse16.gt_cloud, replace(diffuse16, test_cams=[], test_images=[]))


# --- training loop

def test_l1_decreases(diffuse16):
    res = train(TrainConfig(iterations=500), diffuse16)
    l1 = np.array([r.l1 for r in res.reports])
    smooth = np.convolve(l1, np.ones(100) / 100, mode="valid")
    assert np.all(smooth[100:] < smooth[:-100])
    assert evaluate(res.cloud, diffuse16, view_dependent=False).mean_psnr > 20


def test_deterministic(small_mixed):
    cfg = TrainConfig(variant="vod-s", vc="matches", **QUICK)
    a, b = train(cfg, small_mixed), train(cfg, small_mixed)
    assert a.cloud.equals(b.cloud)
    assert [r.total for r in a.reports] == [r.total for r in b.reports]


def test_zero_s_hat_lr_equals_baseline(small_mixed):
    base = train(TrainConfig(**QUICK), small_mixed)
    frozen = train(TrainConfig(variant="vod-s", vod_lr_factor=0.0, reduce_gamma_lr=False, **QUICK), small_mixed)
    assert frozen.cloud.equals(base.cloud)


@pytest.mark.parametrize("variant,vc", [("baseline", "off"), ("vod-l", "uniform")])
def test_checkpoint_resume(tmp_path, small_mixed, variant, vc):
    cfg = TrainConfig(variant=variant, vc=vc, checkpoint_interval=80, **QUICK)
    full = train(cfg, small_mixed, checkpoint_dir=tmp_path)
    state, cfg2 = load_checkpoint(tmp_path / "ckpt_000080.npz")
    assert cfg2 == cfg and state.iteration == 80
    resumed = train(cfg2, small_mixed, state=state)
    assert resumed.cloud.equals(full.cloud)
    assert [r.total for r in resumed.reports] == [r.total for r in full.reports[80:]]


def test_stop_at_and_manual_checkpoint(tmp_path, small_mixed):
    cfg = TrainConfig(**QUICK)
    states = []
    train(cfg, small_mixed, stop_at=30, callback=lambda it, st, rep: states.append(st))
    save_checkpoint(tmp_path / "c.npz", states[-1], cfg)
    st, _ = load_checkpoint(tmp_path / "c.npz")
    assert st.iteration == 30 and "s_hat" in st.adam.frozen


def test_vc_needs_two_views_and_matches(small_mixed):
    from dataclasses import replace
    one_view = replace(small_mixed, train_cams=small_mixed.train_cams[:1],
                       train_images=small_mixed.train_images[:1], matches=None)
    with pytest.raises(ValueError):
        train(TrainConfig(vc="uniform", iterations=5), one_view)
    no_match = replace(small_mixed, matches=None)
    with pytest.raises(ValueError):
        train(TrainConfig(variant="vod-s", vc="matches", iterations=5), no_match)


def test_divergence_reports_indices(small_mixed):
    def poison(it, state, report):
        if it == 3:
            state.cloud.sh[4, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged) as exc:
        train(TrainConfig(iterations=10), small_mixed, callback=poison)
    assert exc.value.iteration == 4 and 4 in exc.value.indices


def test_vod_learns_view_dependence(small_mixed):
    res = train(TrainConfig(variant="vod-s", vc="off", **QUICK), small_mixed)
    assert np.abs(res.cloud.s_hat).max() > 0
    assert np.isfinite(sigmoid(res.cloud.gamma)).all()
