import numpy as np
import pytest

from app.autodiff.gradcheck import analytic_gradient, finite_diff_check, numerical_gradient
from app.autodiff.tensor import Tape, Tensor
from app.core.errors import DimensionError
from app.models.distribution import BiGaussianParams
from app.models.weights import TcnWeights, init_weights
from app.schemas.all_schemas import ModelConfig
from app.services.representation import (
    fuse_branches,
    gcn_layer,
    initial_features,
    interaction_tendency_branch,
    predict_distribution,
    sample_displacements,
    sample_trajectory,
    tcn_head,
    tendency_interaction_branch,
)
from app.services.training import nll_loss


def _prelu(v, slope):
    return v if v >= 0 else slope * v


def _gcn_oracle(a, h, w, slope):
    """out[j] = PReLU(sum_i a[i, j] * h[i] @ w), one receiver at a time."""
    n, d_out = a.shape[0], w.shape[1]
    out = np.zeros((n, d_out))
    for j in range(n):
        acc = np.zeros(d_out)
        for i in range(n):
            acc += a[i, j] * (h[i] @ w)
        out[j] = [_prelu(v, slope) for v in acc]
    return out


# ---- слой GCN ----

def test_gcn_identity_propagation():
    h = np.random.default_rng(0).uniform(size=(3, 4))
    out = gcn_layer(Tensor(np.eye(3)), Tensor(h), Tensor(np.eye(4)), Tensor([0.25])).data
    np.testing.assert_array_equal(out, h)


def test_gcn_receiver_takes_influencer_features():
    h = np.random.default_rng(1).uniform(size=(3, 4))
    a = np.zeros((3, 3))
    a[2, 0] = 1.0  # pedestrian 0 listens only to pedestrian 2
    out = gcn_layer(Tensor(a), Tensor(h), Tensor(np.eye(4)), Tensor([0.25])).data
    np.testing.assert_array_equal(out[0], h[2])


def test_gcn_matches_loop_oracle():
    rng = np.random.default_rng(2)
    a, h, w = rng.uniform(size=(3, 3)), rng.normal(size=(3, 5)), rng.normal(size=(5, 4))
    out = gcn_layer(Tensor(a), Tensor(h), Tensor(w), Tensor([0.25])).data
    np.testing.assert_allclose(out, _gcn_oracle(a, h, w, 0.25), rtol=0, atol=1e-12)


def test_gcn_rejects_mismatched_adjacency():
    with pytest.raises(DimensionError):
        gcn_layer(Tensor(np.eye(3)), Tensor(np.ones((4, 2))), Tensor(np.eye(2)), Tensor([0.25]))


# ---- две ветки ----

def _itf_oracle(a_spa, a_tmp, h0_spa, b):
    t_obs, n, _ = h0_spa.shape
    spatial = np.stack([_gcn_oracle(a_spa[t], h0_spa[t], b.spa1.data, b.slope_spa1.data[0]) for t in range(t_obs)])
    temporal = np.stack([_gcn_oracle(a_tmp[k], spatial[:, k], b.tmp1.data, b.slope_tmp1.data[0]) for k in range(n)])
    return temporal.transpose(1, 0, 2)


def _tif_oracle(a_spa, a_tmp, h0_tmp, b):
    n, t_obs, _ = h0_tmp.shape
    temporal = np.stack([_gcn_oracle(a_tmp[k], h0_tmp[k], b.tmp2.data, b.slope_tmp2.data[0]) for k in range(n)])
    return np.stack([_gcn_oracle(a_spa[t], temporal[:, t], b.spa2.data, b.slope_spa2.data[0]) for t in range(t_obs)])


def _random_adjacencies(rng, t_obs, n):
    a_spa = rng.uniform(size=(t_obs, n, n))
    a_tmp = np.triu(rng.uniform(size=(n, t_obs, t_obs)))
    return a_spa, a_tmp


@pytest.mark.parametrize("n,t_obs", [(1, 1), (2, 3), (4, 4)])
def test_branches_match_loop_oracles(n, t_obs):
    config = ModelConfig(t_obs=t_obs, t_pred=2, embed_dim=6)
    weights = init_weights(config, seed=n).branches
    rng = np.random.default_rng(10 * n + t_obs)
    nodes = rng.normal(size=(t_obs, n, 2))
    a_spa, a_tmp = _random_adjacencies(rng, t_obs, n)
    h0_spa, h0_tmp = initial_features(nodes, weights)

    itf = interaction_tendency_branch(Tensor(a_spa), Tensor(a_tmp), h0_spa, weights).data
    tif = tendency_interaction_branch(Tensor(a_spa), Tensor(a_tmp), h0_tmp, weights).data
    assert itf.shape == tif.shape == (t_obs, n, 6)
    np.testing.assert_allclose(itf, _itf_oracle(a_spa, a_tmp, h0_spa.data, weights), rtol=0, atol=1e-10)
    np.testing.assert_allclose(tif, _tif_oracle(a_spa, a_tmp, h0_tmp.data, weights), rtol=0, atol=1e-10)


def test_branch_order_matters():
    config = ModelConfig(t_obs=4, t_pred=2, embed_dim=6)
    weights = init_weights(config, seed=5).branches
    rng = np.random.default_rng(5)
    nodes = rng.normal(size=(4, 3, 2))
    a_spa, a_tmp = _random_adjacencies(rng, 4, 3)
    h0_spa, h0_tmp = initial_features(nodes, weights)
    itf = interaction_tendency_branch(Tensor(a_spa), Tensor(a_tmp), h0_spa, weights).data
    tif = tendency_interaction_branch(Tensor(a_spa), Tensor(a_tmp), h0_tmp, weights).data
    assert not np.allclose(itf, tif)


def test_identity_spatial_adjacency_does_not_mix_pedestrians():
    config = ModelConfig(t_obs=3, t_pred=2, embed_dim=4)
    weights = init_weights(config, seed=6).branches
    nodes = np.random.default_rng(6).normal(size=(3, 2, 2))
    a_spa = np.broadcast_to(np.eye(2), (3, 2, 2))
    a_tmp = np.broadcast_to(np.eye(3), (2, 3, 3))
    h0_spa, _ = initial_features(nodes, weights)
    out = interaction_tendency_branch(Tensor(a_spa), Tensor(a_tmp), h0_spa, weights).data

    moved = nodes.copy()
    moved[:, 1] += 5.0
    h0_moved, _ = initial_features(moved, weights)
    out_moved = interaction_tendency_branch(Tensor(a_spa), Tensor(a_tmp), h0_moved, weights).data
    np.testing.assert_array_equal(out[:, 0], out_moved[:, 0])


def test_fuse_branches():
    rng = np.random.default_rng(7)
    a, b = Tensor(rng.normal(size=(4, 3, 5))), Tensor(rng.normal(size=(4, 3, 5)))
    np.testing.assert_array_equal(fuse_branches(a, Tensor(np.zeros((4, 3, 5)))).data, a.data)
    np.testing.assert_array_equal(fuse_branches(a, b).data, fuse_branches(b, a).data)
    np.testing.assert_array_equal(fuse_branches(a, b).data, a.data + b.data)
    with pytest.raises(DimensionError):
        fuse_branches(a, Tensor(np.zeros((4, 2, 5))))


# ---- голова TCN ----

def test_tcn_zero_weights_give_standard_gaussian():
    weights = init_weights(ModelConfig(), seed=0).tcn
    for param in weights.conv_w + weights.conv_b + (weights.out_w, weights.out_b):
        param.data[...] = 0.0
    h = Tensor(np.random.default_rng(8).normal(size=(8, 3, 64)))
    params = tcn_head(h, weights)
    assert params.mu.shape == (12, 3, 2)
    assert params.sigma.shape == (12, 3, 2)
    assert params.rho.shape == (12, 3)
    assert np.all(params.mu.data == 0.0)
    assert np.all(params.sigma.data == 1.0)
    assert np.all(params.rho.data == 0.0)


def test_tcn_output_ranges():
    config = ModelConfig(t_obs=4, t_pred=3, embed_dim=8, tcn_layers=3)
    weights: TcnWeights = init_weights(config, seed=9).tcn
    rng = np.random.default_rng(9)
    for _ in range(200):
        params = tcn_head(Tensor(rng.normal(size=(4, int(rng.integers(1, 5)), 8))), weights)
        assert np.all(params.sigma.data > 0.0)
        assert np.all(np.abs(params.rho.data) < 1.0)


# ---- полный проход ----

def test_forward_shape_contract():
    config = ModelConfig()
    weights = init_weights(config, seed=0)
    displacements = np.random.default_rng(10).normal(scale=0.3, size=(8, 3, 2))
    prediction = predict_distribution(weights, displacements, config)
    assert prediction.params.t_pred == 12
    assert prediction.params.num_pedestrians == 3
    assert prediction.graphs.spatial.shape == (8, 3, 3)
    assert prediction.graphs.temporal.shape == (3, 8, 8)
    assert prediction.graphs.dense is None


def test_forward_rejects_wrong_window():
    config = ModelConfig()
    weights = init_weights(config, seed=0)
    with pytest.raises(DimensionError):
        predict_distribution(weights, np.zeros((6, 3, 2)), config)


def test_permuting_pedestrians_permutes_outputs():
    config = ModelConfig(t_obs=8, t_pred=12, embed_dim=16, xi=0.0)
    weights = init_weights(config, seed=11)
    displacements = np.random.default_rng(11).normal(scale=0.3, size=(8, 4, 2))
    order = np.array([2, 0, 3, 1])
    base = predict_distribution(weights, displacements, config).params
    permuted = predict_distribution(weights, displacements[:, order], config).params
    np.testing.assert_allclose(permuted.mu.data, base.mu.data[:, order], atol=1e-12)
    np.testing.assert_allclose(permuted.sigma.data, base.sigma.data[:, order], atol=1e-12)
    np.testing.assert_allclose(permuted.rho.data, base.rho.data[:, order], atol=1e-12)


def _assert_permuted(base, permuted, order):
    for name in ("mu", "sigma", "rho"):
        np.testing.assert_allclose(getattr(permuted.params, name).data,
                                   getattr(base.params, name).data[:, order], atol=1e-12, err_msg=name)


def _masks_permuted(base, permuted, order) -> bool:
    spatial = base.graphs.spatial.mask[:, order][:, :, order]
    temporal = base.graphs.temporal.mask[order]
    return (np.array_equal(permuted.graphs.spatial.mask, spatial)
            and np.array_equal(permuted.graphs.temporal.mask, temporal))


def _center_taps_only(weights):
    # свертка видит только свою клетку, маска перестает зависеть от соседей
    for graph in (weights.spatial, weights.temporal):
        for kernel in graph.row_w + graph.col_w:
            keep = np.zeros(kernel.shape)
            keep[..., kernel.shape[2] // 2, kernel.shape[3] // 2] = 1.0
            kernel.data *= keep


def test_permutation_equivariance_when_masks_agree():
    config = ModelConfig(t_obs=8, t_pred=12, embed_dim=16, xi=0.5)
    rng = np.random.default_rng(12)
    orders = [np.array([2, 0, 3, 1]), np.array([1, 0, 2, 3]), np.array([3, 2, 1, 0])]

    weights = init_weights(config, seed=12)
    displacements = rng.normal(scale=0.3, size=(8, 4, 2))
    base = predict_distribution(weights, displacements, config)
    for order in orders:
        permuted = predict_distribution(weights, displacements[:, order], config)
        if _masks_permuted(base, permuted, order):
            _assert_permuted(base, permuted, order)

    _center_taps_only(weights)
    base = predict_distribution(weights, displacements, config)
    assert 0 < base.graphs.spatial.mask.sum() < base.graphs.spatial.mask.size
    for order in orders:
        permuted = predict_distribution(weights, displacements[:, order], config)
        assert _masks_permuted(base, permuted, order)
        _assert_permuted(base, permuted, order)


def _scene_loss_fn(weights, displacements, gt, config):
    return lambda _: nll_loss(predict_distribution(weights, displacements, config).params, gt)


def _jitter_biases(weights, seed=7, scale=0.05):
    """
    Fresh weights have zero biases and the first displacement is always zero, so
    some PReLU inputs sit exactly on the kink where central differences disagree
    with the one-sided derivative. Small random biases move them off it.
    """
    rng = np.random.default_rng(seed)
    for name, param in weights.named_parameters().items():
        if any(part.endswith("_b") for part in name.split(".")):
            param.data[...] = rng.normal(scale=scale, size=param.shape)


def test_zero_biases_put_the_first_step_on_the_kink(tiny_weights, random_scene):
    np.testing.assert_array_equal(random_scene.displacements_obs[0], 0.0)
    h0_spa, _ = initial_features(random_scene.displacements_obs, tiny_weights.branches)
    np.testing.assert_array_equal(h0_spa.data[0], 0.0)


def test_full_model_gradients_match_finite_differences(tiny_weights, random_scene):
    """
    Every parameter, central differences with h = 1e-4. xi = 0 keeps the mask
    constant; at other thresholds a perturbation can flip mask entries, which the
    analytic pass treats as constants.
    """
    config = ModelConfig(t_obs=4, t_pred=3, embed_dim=8, asym_layers=2, tcn_layers=2, xi=0.0)
    _jitter_biases(tiny_weights)
    f = _scene_loss_fn(tiny_weights, random_scene.displacements_obs, random_scene.displacements_fut(), config)
    errors = {name: finite_diff_check(f, param, h=1e-4) for name, param in tiny_weights.named_parameters().items()}
    worst = max(errors, key=errors.get)
    assert errors[worst] < 1e-3, (worst, errors[worst])



def test_analytic_gradient_helper_on_one_parameter(tiny_weights, random_scene):
    config = ModelConfig(t_obs=4, t_pred=3, embed_dim=8, asym_layers=2, tcn_layers=2, xi=0.0)
    f = _scene_loss_fn(tiny_weights, random_scene.displacements_obs, random_scene.displacements_fut(), config)
    out_b = tiny_weights.tcn.out_b
    np.testing.assert_allclose(analytic_gradient(f, out_b), numerical_gradient(f, out_b), rtol=1e-4, atol=1e-7)


def test_every_branch_and_tcn_weight_gets_gradient(tiny_config, tiny_weights, rng):
    grads_seen = {}
    for _ in range(3):
        displacements = rng.normal(scale=0.3, size=(4, 3, 2))
        gt = rng.normal(scale=0.3, size=(3, 3, 2))
        tiny_weights.zero_grad()
        with Tape() as tape:
            loss = nll_loss(predict_distribution(tiny_weights, displacements, tiny_config).params, gt)
        tape.backward(loss)
        for name, grad in tiny_weights.grads().items():
            grads_seen[name] = grads_seen.get(name, False) or bool(np.any(grad != 0.0))

    for name, seen in grads_seen.items():
        if name.startswith(("branches.", "tcn.")):
            assert seen, name


def test_mask_path_is_stop_gradient(tiny_config, tiny_weights, random_scene):
    with Tape() as tape:
        loss = nll_loss(predict_distribution(tiny_weights, random_scene.displacements_obs, tiny_config).params,
                        random_scene.displacements_fut())
    tape.backward(loss)
    for conv in tiny_weights.spatial.row_w + tiny_weights.temporal.col_w:
        assert conv.grad is None
    assert tiny_weights.spatial.query_w.grad is not None
    assert tiny_weights.temporal.key_w.grad is not None


# ---- выборки ----

def _params(mu, sigma, rho, t_pred=1, n=1):
    return BiGaussianParams.from_arrays(
        np.broadcast_to(mu, (t_pred, n, 2)),
        np.broadcast_to(sigma, (t_pred, n, 2)),
        np.broadcast_to(rho, (t_pred, n)),
    )


def test_tiny_variance_sample_is_the_mean_path():
    mu = np.random.default_rng(12).normal(size=(12, 2, 2))
    params = BiGaussianParams.from_arrays(mu, np.full((12, 2, 2), 1e-8), np.zeros((12, 2)))
    last = np.array([[1.0, 2.0], [-3.0, 0.5]])
    np.testing.assert_allclose(sample_trajectory(params, last, 0), params.mean_path(last), atol=1e-6)


def test_sampling_is_deterministic_per_seed():
    params = _params([0.1, -0.2], [0.5, 0.3], 0.2, t_pred=12, n=3)
    first = sample_trajectory(params, np.zeros((3, 2)), 42)
    second = sample_trajectory(params, np.zeros((3, 2)), 42)
    assert first.tobytes() == second.tobytes()
    assert first.shape == (12, 3, 2)


def test_sampling_statistics():
    params = _params([1.0, -2.0], [1.0, 2.0], 0.5)
    draws = sample_displacements(params, 100_000, np.random.default_rng(13))[:, 0, 0]
    assert abs(draws[:, 0].mean() - 1.0) < 0.02
    assert abs(draws[:, 1].mean() + 2.0) < 0.02
    assert abs(draws[:, 0].std() - 1.0) < 0.03
    assert abs(draws[:, 1].std() - 2.0) < 0.03
    assert abs(np.corrcoef(draws[:, 0], draws[:, 1])[0, 1] - 0.5) < 0.02
