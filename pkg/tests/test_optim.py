import numpy as np
import pytest

from helpers import random_cloud
from vodgs.optim import GROUPS, AdamState, exponential_decay


def lrs(value=0.1, **over):
    d = {g: value for g in GROUPS}
    d.update(over)
    return d


def grads_like(cloud, rng):
    return {k: rng.normal(size=v.shape) for k, v in cloud.params().items()}


def test_first_step_moves_by_lr(rng):
    c = random_cloud(rng, 4)
    before = c.copy()
    g = grads_like(c, rng)
    adam = AdamState.for_cloud(c)
    adam.update(c, g, lrs(0.1))
    for k, v in c.params().items():
        assert np.allclose(before.params()[k] - v, 0.1 * np.sign(g[k]))


def test_matches_reference_adam(rng):
    c = random_cloud(rng, 3)
    x = c.gamma.copy()
    m = v = np.zeros_like(x)
    adam = AdamState.for_cloud(c)
    for t in range(1, 6):
        g = rng.normal(size=3)
        full = {k: np.zeros(a.shape) for k, a in c.params().items()}
        full["gamma"] = g
        adam.update(c, full, lrs(0.0, gamma=0.05))
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 0.05 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-15)
    assert np.allclose(c.gamma, x, rtol=1e-12)


def test_frozen_and_zero_lr_groups(rng):
    c = random_cloud(rng, 3)
    before = c.copy()
    adam = AdamState.for_cloud(c, frozen={"s_hat"})
    adam.update(c, grads_like(c, rng), lrs(0.1, sh_rest=0.0))
    assert np.array_equal(c.s_hat, before.s_hat)
    assert np.array_equal(c.sh[:, 1:], before.sh[:, 1:])
    assert not np.array_equal(c.sh[:, 0], before.sh[:, 0])
    assert not adam.m["s_hat"].any()


def test_row_bookkeeping(rng):
    c = random_cloud(rng, 4)
    adam = AdamState.for_cloud(c)
    adam.update(c, grads_like(c, rng), lrs())
    m2 = adam.m["means"][2].copy()
    adam.select(np.array([False, False, True, True]))
    assert len(adam) == 2 and np.array_equal(adam.m["means"][0], m2)
    adam.append(3)
    assert len(adam) == 5 and not adam.v["gamma"][2:].any()
    adam.zero_rows("gamma")
    assert not adam.m["gamma"].any()
    with pytest.raises(ValueError):
        adam.update(c, grads_like(c, rng), lrs())


def test_state_dict_roundtrip(rng):
    c = random_cloud(rng, 4)
    adam = AdamState.for_cloud(c)
    adam.update(c, grads_like(c, rng), lrs())
    back = AdamState.from_state_dict(adam.state_dict())
    assert back.step == 1
    assert all(np.array_equal(back.v[k], adam.v[k]) for k in adam.v)


def test_float32_cloud_stays_float32(rng):
    c = random_cloud(rng, 4, dtype=np.float32)
    AdamState.for_cloud(c).update(c, grads_like(c, rng), lrs())
    assert all(v.dtype == np.float32 for v in c.params().values())


def test_exponential_decay():
    assert exponential_decay(1e-2, 1e-4, 0, 100) == pytest.approx(1e-2)
    assert exponential_decay(1e-2, 1e-4, 50, 100) == pytest.approx(1e-3)
    assert exponential_decay(1e-2, 1e-4, 500, 100) == pytest.approx(1e-4)
    assert exponential_decay(1e-2, 1e-4, 5, 0) == 1e-2
