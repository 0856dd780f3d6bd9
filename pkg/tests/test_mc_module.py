"""
运动补偿模块测试
运行方式: python tests/test_mc_module.py
"""
import sys
sys.path.append('.')

import numpy as np
import pytest

from app.core.exceptions import ShapeMismatchError
from app.engine import Tensor
from app.network import (
    ParamGroup,
    ParamStore,
    compensate,
    compose_total_flow,
    estimate_flow_coarse,
    estimate_flow_fine,
    estimate_flow_still,
    init_mc_params,
    mc_loss,
)
from tests.helpers import check_gradients, random_frames, randomize_biases, run_tests, tiny_net_config


def _mc_store(identity_init=True, seed=0):
    cfg = tiny_net_config()
    store = ParamStore()
    init_mc_params(store, cfg, np.random.default_rng(seed), identity_init=identity_init)
    return store, cfg


def test_parameter_names_and_group():
    store, cfg = _mc_store()
    names = store.names()
    assert "mc.coarse.conv0.weight" in names and "mc.still.conv1.bias" in names
    assert len(store.list_params(ParamGroup.MC)) == len(store) == 3 * cfg.mc_layers * 2
    cost = (2 * cfg.mc_radius + 1) ** 2
    assert store["mc.fine.conv0.weight"].shape == (cfg.mc_channels, 4 + cost, 3, 3)
    assert store["mc.still.conv1.weight"].shape == (2, cfg.mc_channels + 2 + cost, 3, 3)


def test_identity_init_gives_zero_flow_and_exact_warp():
    store, cfg = _mc_store()
    target = random_frames(1, 8, 8, seed=1)
    neighbor = random_frames(1, 8, 8, seed=2)
    result = compensate(target, neighbor, store, cfg)
    assert not result.total_flow.data.any()
    assert np.array_equal(result.warped.data, neighbor.data)


def test_flow_shapes_at_each_scale():
    store, cfg = _mc_store(identity_init=False)
    target = random_frames(2, 8, 12, seed=3)
    neighbor = random_frames(2, 8, 12, seed=4)
    coarse = estimate_flow_coarse(target, neighbor, store, cfg)
    fine = estimate_flow_fine(target, neighbor, coarse, store, cfg)
    still = estimate_flow_still(target, neighbor, store, cfg)
    for flow in (coarse, fine, still):
        assert flow.shape == (2, 2, 8, 12)


def test_compose_is_elementwise_sum():
    rng = np.random.default_rng(5)
    parts = [Tensor(rng.normal(size=(1, 2, 4, 4))) for _ in range(3)]
    total = compose_total_flow(*parts)
    assert np.allclose(total.data, parts[0].data + parts[1].data + parts[2].data, atol=1e-15)
    with pytest.raises(ShapeMismatchError):
        compose_total_flow(parts[0], parts[1], Tensor(np.zeros((1, 1, 4, 4))))


def test_coarse_rejects_size_not_multiple_of_four():
    store, cfg = _mc_store()
    with pytest.raises(ShapeMismatchError, match="4"):
        estimate_flow_coarse(random_frames(1, 6, 8, 0), random_frames(1, 6, 8, 1), store, cfg)


def test_mc_loss_sums_terms_and_checks_lengths():
    target = Tensor(np.zeros((1, 1, 4, 4)))
    neighbors = [Tensor(np.ones((1, 1, 4, 4))), Tensor(np.full((1, 1, 4, 4), 2.0))]
    flows = [Tensor(np.zeros((1, 2, 4, 4)))] * 2
    assert mc_loss(target, neighbors, flows).item() == 5.0
    with pytest.raises(ShapeMismatchError):
        mc_loss(target, neighbors, flows[:1])


def test_mc_gradients_reach_every_branch():
    store, cfg = _mc_store(identity_init=False, seed=6)
    randomize_biases(store, seed=6)
    target = random_frames(1, 8, 8, seed=7)
    neighbor = random_frames(1, 8, 8, seed=8)
    raw_target = random_frames(1, 8, 8, seed=9)
    raw_neighbor = random_frames(1, 8, 8, seed=10)

    def loss():
        result = compensate(target, neighbor, store, cfg)
        return mc_loss(raw_target, [raw_neighbor], [result.total_flow])

    checked = check_gradients(loss, store.list_params(), samples=2, seed=11)
    assert checked >= len(store)


if __name__ == "__main__":
    run_tests(globals())
