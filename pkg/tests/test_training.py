"""Trainer contracts: windows, ELBO identities, loop behavior, inference."""

import numpy as np
import pytest

from grangervae import tensor as T
from grangervae.config import resolve
from grangervae.distributions import EdgeGaussian
from grangervae.errors import ConfigurationError
from grangervae.graphgen import gen_linear_var
from grangervae.networks import common_to_entity, entity_to_common
from grangervae.systems import sim_linear_var
from grangervae.training import (
    Dataset, TrainGroup, Window, _draw_noise, _elbo_batch, apply_edge_mask,
    build_model, elbo_loss, infer_graphs, make_windows, predictive_strength,
    train,
)


def tiny_cfg(**over):
    base = {"family": "linear_var", "p": 4, "M": 3, "T_long": 80, "T": 10,
            "stride": 2, "epochs": 2, "batch_groups": 8, "n_hid": 8,
            "val_fraction": 0.2, "seed": 3}
    base.update(over)
    return resolve(base)


def tiny_dataset(cfg, seed=0):
    ts = gen_linear_var(cfg.p, cfg.M, density=0.3,
                        rng=np.random.default_rng(seed))
    series = [sim_linear_var(a, cfg.T_long, np.random.default_rng(10 + i))
              for i, a in enumerate(ts.entities)]
    return Dataset(series), ts


# -- window construction --------------------------------------------------------

def test_make_windows_count_formula():
    traj = np.zeros((100, 3, 1))
    assert len(make_windows(traj, 20, 10)) == 9
    assert len(make_windows(np.zeros((20, 3, 1)), 20, 5)) == 1
    assert len(make_windows(np.zeros((21, 3, 1)), 20, 5)) == 1


def test_make_windows_offsets_and_contiguity():
    traj = np.arange(60.0).reshape(20, 3, 1)
    wins = make_windows(traj, 5, 3, entity=7)
    for n, w in enumerate(wins):
        assert w.offset == 3 * n
        assert w.entity == 7
        assert np.array_equal(w.values, traj[w.offset:w.offset + 5])


def test_make_windows_randomized_count_grid():
    rng = np.random.default_rng(0)
    for _ in range(200):
        t_long = int(rng.integers(5, 400))
        t_win = int(rng.integers(2, t_long + 1))
        s = int(rng.integers(1, 20))
        wins = make_windows(np.zeros((t_long, 2, 1)), t_win, s)
        assert len(wins) == (t_long - t_win) // s + 1


def test_make_windows_rejects_short_trajectory():
    with pytest.raises(ConfigurationError):
        make_windows(np.zeros((5, 2, 1)), 10, 1)


def test_train_group_requires_distinct_entities():
    w = Window(0, np.zeros((5, 2, 1)), 0)
    with pytest.raises(ConfigurationError):
        TrainGroup([w, w])


# -- ELBO identities ---------------------------------------------------------------

def test_elbo_components_sum_to_total():
    cfg = tiny_cfg()
    ds, _ = tiny_dataset(cfg)
    model = build_model(cfg, 0)
    group = TrainGroup([make_windows(s, cfg.T, cfg.stride, entity=i)[0]
                        for i, s in enumerate(ds.series)])
    loss, comps = elbo_loss(model, group, cfg, rng=np.random.default_rng(0))
    assert abs(float(loss.data) - sum(comps.values())) < 1e-10


def test_elbo_kl_components_nonnegative():
    cfg = tiny_cfg()
    ds, _ = tiny_dataset(cfg)
    model = build_model(cfg, 0)
    rng = np.random.default_rng(1)
    for _ in range(5):
        group = TrainGroup([make_windows(s, cfg.T, cfg.stride, entity=i)[0]
                            for i, s in enumerate(ds.series)])
        _, comps = elbo_loss(model, group, cfg, rng=rng)
        assert comps["kl_common"] >= 0.0
        assert comps["kl_entity"] >= 0.0


def test_elbo_perfect_reconstruction_identity():
    # (x - mu)^T Sigma^{-1} (x - mu) + log|Sigma| vanishes when mu = x, Sigma = I
    resid = np.zeros((4, 3))
    var = np.ones((4, 3))
    recon = np.sum(resid ** 2 / var + np.log(var))
    assert recon == 0.0


def test_elbo_kl_entity_zero_when_distributions_match():
    # If the encoder equals the unadjusted decoder distribution, the adjusted
    # distribution coincides with it and the consistency term vanishes.
    from grangervae.distributions import conjugacy_adjust_gaussian, kl_divergence
    zbar = np.random.default_rng(2).normal(size=(3, 3))
    p_dist = EdgeGaussian(zbar, np.ones((3, 3)))
    q_dist = EdgeGaussian(zbar.copy(), np.ones((3, 3)))
    tilde = conjugacy_adjust_gaussian(q_dist, p_dist, 0.5)
    assert np.allclose(kl_divergence(q_dist, tilde).data, 0.0, atol=1e-12)


def test_elbo_kl_common_zero_when_posterior_is_prior():
    from grangervae.distributions import kl_divergence, standard_gaussian_prior
    post = EdgeGaussian(np.zeros((2, 2)), np.ones((2, 2)))
    assert np.allclose(
        kl_divergence(post, standard_gaussian_prior((2, 2))).data, 0.0)


# -- training loop --------------------------------------------------------------------

def test_zero_epochs_returns_initialization():
    cfg = tiny_cfg(epochs=0)
    ds, _ = tiny_dataset(cfg)
    init = build_model(cfg, np.random.default_rng(
        np.random.SeedSequence(cfg.seed).spawn(5)[0]))
    result = train(cfg, ds)
    for name, tensor in result.model.params.items():
        assert np.array_equal(tensor.data, init.params[name].data)


def test_training_is_deterministic_given_seed():
    cfg = tiny_cfg(epochs=2)
    ds, _ = tiny_dataset(cfg)
    one = train(cfg, ds)
    two = train(cfg, ds)
    for name in one.model.params:
        assert np.array_equal(one.model.params[name].data,
                              two.model.params[name].data)
    assert one.loss_log == two.loss_log


def test_training_logs_epoch_rows():
    cfg = tiny_cfg(epochs=3, patience=99)
    ds, _ = tiny_dataset(cfg)
    result = train(cfg, ds)
    assert [row["epoch"] for row in result.loss_log] == [1, 2, 3]
    for row in result.loss_log:
        assert abs(row["total"] - (row["recon"] + row["kl_common"]
                                   + row["kl_entity"])) < 1e-9


def test_training_rejects_mismatched_dataset():
    cfg = tiny_cfg()
    ds, _ = tiny_dataset(tiny_cfg(p=5))
    with pytest.raises(ConfigurationError):
        train(cfg, ds)


def test_loss_decreases_on_toy_problem():
    cfg = tiny_cfg(T_long=400, T=10, stride=1, epochs=12, batch_groups=16,
                   val_fraction=0.0, patience=99)
    ds, _ = tiny_dataset(cfg)
    result = train(cfg, ds)
    assert result.loss_log[-1]["total"] < result.loss_log[0]["total"]


# -- inference ----------------------------------------------------------------------------

def test_infer_graph_shapes_and_gaussian_mode():
    cfg = tiny_cfg(epochs=1)
    ds, _ = tiny_dataset(cfg)
    result = train(cfg, ds)
    inf = infer_graphs(result.model, ds, cfg)
    assert inf.common.shape == (cfg.p, cfg.p)
    assert inf.entities.shape == (cfg.M, cfg.p, cfg.p)
    # Gaussian mode equals the window-averaged mean parameter
    agg = entity_to_common(inf.entities, "continuous")
    assert np.allclose(inf.common, agg.mu.data)


def test_beta_mode_rules():
    from grangervae.training import _beta_mode
    assert _beta_mode(np.array(3.0), np.array(2.0)) == pytest.approx(2.0 / 3.0)
    assert _beta_mode(np.array(1.0), np.array(1.0)) == pytest.approx(0.5)
    assert _beta_mode(np.array(0.5), np.array(1.5)) == pytest.approx(0.25)


def test_binary_inference_in_unit_interval():
    cfg = tiny_cfg(mode="binary", epochs=1)
    ds, _ = tiny_dataset(cfg)
    result = train(cfg, ds)
    inf = infer_graphs(result.model, ds, cfg)
    assert np.all(inf.common >= 0.0) and np.all(inf.common <= 1.0)
    assert np.all(inf.entities >= 0.0) and np.all(inf.entities <= 1.0)


# -- edge masking ------------------------------------------------------------------------

def test_apply_edge_mask_all_true():
    z = np.random.default_rng(3).normal(size=(3, 3))
    assert np.array_equal(apply_edge_mask(z, np.ones((3, 3), bool)),
                          np.zeros((3, 3)))


def test_apply_edge_mask_all_false_identity():
    z = np.random.default_rng(4).normal(size=(3, 3))
    assert np.array_equal(apply_edge_mask(z, np.zeros((3, 3), bool)), z)


def test_apply_edge_mask_single_entry():
    z = np.ones((3, 3))
    mask = np.zeros((3, 3), bool)
    mask[1, 2] = True
    out = apply_edge_mask(z, mask)
    assert out[1, 2] == 0.0
    assert out.sum() == 8.0


def test_apply_edge_mask_tensor_blocks_gradient():
    z = T.Tensor(np.ones((2, 2)), requires_grad=True)
    mask = np.array([[True, False], [False, False]])
    out = apply_edge_mask(z, mask)
    T.backward(out.sum())
    assert z.grad[0, 0] == 0.0
    assert z.grad[1, 1] == 1.0


def test_edge_mask_in_training_zeroes_entries():
    cfg = tiny_cfg()
    ds, _ = tiny_dataset(cfg)
    model = build_model(cfg, 0)
    mask = np.zeros((cfg.p, cfg.p), bool)
    mask[0, 1] = True
    xw = np.stack([np.stack([make_windows(s, cfg.T, cfg.stride)[0].values])
                   for s in ds.series], axis=1)
    noise = _draw_noise(np.random.default_rng(0), cfg.mode, 1, cfg.M, cfg.p,
                        False)
    loss, _ = _elbo_batch(model, xw, cfg, noise, mask=mask)
    assert np.isfinite(float(loss.data))


# -- predictive strength -----------------------------------------------------------------

def test_predictive_strength_noop_and_empty():
    cfg = tiny_cfg()
    ds, _ = tiny_dataset(cfg)
    model = build_model(cfg, 0)
    z = np.random.default_rng(5).normal(size=(cfg.p, cfg.p))
    z[2, 3] = 0.0
    traj = ds.series[0][:20]
    assert predictive_strength(model, z, traj, []) == 0.0
    assert predictive_strength(model, z, traj, [(2, 3)]) == 0.0


def test_predictive_strength_true_edge_negative_on_fit_decoder():
    # Fit a sum-aggregation decoder exactly to a linear system, then check
    # nullifying the strongest edge degrades the fit (RSS grows).
    cfg = tiny_cfg(decoder_agg="sum", dropout=0.0, standardize=False)
    a = np.array([[0.5, 0.4, 0, 0], [0, 0.3, 0, 0],
                  [0, 0, 0.2, 0], [0, 0, 0, 0.1]])
    traj = sim_linear_var(a, 60, np.random.default_rng(6), noise_scale=0.05)
    model = build_model(cfg, 0)
    model.eval()
    strongest = (0, 1)
    delta = predictive_strength(model, a, traj, [strongest])
    assert delta < 0.0


def test_rss_normalization_matches_definition():
    cfg = tiny_cfg(decoder_agg="sum", dropout=0.0)
    model = build_model(cfg, 0)
    model.eval()
    traj = np.random.default_rng(7).normal(size=(12, cfg.p, 1))
    z = np.zeros((cfg.p, cfg.p))
    from grangervae.networks import lag_preprocess
    lags, targets = lag_preprocess(traj, cfg.q)
    mu, _ = model.decoder.decode(lags, z)
    rss = np.sum((targets - mu.data) ** 2) / (traj.shape[0] - cfg.q)
    delta = predictive_strength(model, z, traj, [])
    assert delta == 0.0
    assert rss > 0.0
