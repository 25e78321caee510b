"""Window construction, ELBO assembly, the multi-entity training loop, and
post-training inference (graph extraction, edge masking, predictive strength).

A training step consumes a batch of groups; each group holds one window per
entity so the common-graph posterior can aggregate across all M entities.
The forward pass follows the encode / aggregate / merge-prior / decode /
adjust / sample / reconstruct sequence, and the loss is

    reconstruction + KL(common posterior || prior) + KL(adjusted entity || decoded entity).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import ExperimentConfig
from .distributions import (
    EdgeBernoulli, EdgeGaussian, beta_implicit_sample,
    conjugacy_adjust_bernoulli, conjugacy_adjust_gaussian, flat_beta_prior,
    gaussian_reparam, gumbel_softmax, kl_bernoulli, kl_divergence, kl_gaussian,
    merge_prior, sample_gumbel_pair, standard_gaussian_prior,
)
from .errors import ConfigurationError, TrainingError
from .networks import (
    GraphVAE, NetConfig, common_to_entity, entity_to_common, lag_preprocess,
)
from .tensor import Adam, Tensor, astensor, clip_grad_norm, collect_grads, zero_grads

__all__ = [
    "Window", "TrainGroup", "Dataset", "InferenceResult", "TrainResult",
    "make_windows", "elbo_loss", "train", "infer_graphs",
    "apply_edge_mask", "predictive_strength", "supervised_encoder_fit",
    "build_model", "standardize_series",
]


@dataclass
class Window:
    entity: int
    values: np.ndarray      # [T, p, d]
    offset: int


@dataclass
class TrainGroup:
    """One window per entity, consumed as a single optimization unit."""
    windows: list

    def __post_init__(self):
        ids = [w.entity for w in self.windows]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("TrainGroup needs one window per entity")


@dataclass
class Dataset:
    """Long trajectories, one per entity, all sharing p and d."""
    series: list            # list of [T_long, p, d] arrays, index = entity id

    def __post_init__(self):
        shapes = {s.shape[1:] for s in self.series}
        if len(shapes) > 1:
            raise ConfigurationError(f"entities disagree on (p, d): {shapes}")

    @property
    def M(self) -> int:
        return len(self.series)

    @property
    def p(self) -> int:
        return self.series[0].shape[1]

    @property
    def d(self) -> int:
        return self.series[0].shape[2]


@dataclass
class InferenceResult:
    common: np.ndarray              # [p, p] mode of the common posterior
    entities: np.ndarray            # [M, p, p] modes of entity posteriors
    entity_params: list             # per entity, window-averaged encoder params
    common_params: dict             # parameters of the common posterior


@dataclass
class TrainResult:
    model: GraphVAE
    loss_log: list = field(default_factory=list)   # rows with epoch/components
    val_log: list = field(default_factory=list)
    stopped_epoch: int = 0
    standardizers: list = field(default_factory=list)


def make_windows(long_traj: np.ndarray, T: int, s: int,
                 entity: int = 0) -> list:
    """Slice a long trajectory into ``floor((T_long - T)/s) + 1`` windows."""
    arr = np.asarray(long_traj, dtype=np.float64)
    if arr.ndim != 3:
        raise ConfigurationError("long trajectory must be [T_long, p, d]")
    t_long = arr.shape[0]
    if t_long < T:
        raise ConfigurationError(f"trajectory length {t_long} shorter than T={T}")
    if s < 1:
        raise ConfigurationError("stride must be >= 1")
    count = (t_long - T) // s + 1
    return [Window(entity, arr[n * s:n * s + T], n * s) for n in range(count)]


def standardize_series(series: np.ndarray):
    """Per-feature z-scoring over time and nodes; returns (scaled, mean, std)."""
    mean = series.mean(axis=(0, 1), keepdims=True)
    std = series.std(axis=(0, 1), keepdims=True)
    std = np.where(std < 1e-12, 1.0, std)
    return (series - mean) / std, mean, std


def build_model(cfg: ExperimentConfig, seed_or_rng=None) -> GraphVAE:
    net = NetConfig(p=cfg.p, d=cfg.d, T=cfg.T, q=cfg.q, n_hid=cfg.n_hid,
                    mode=cfg.mode, decoder_style=cfg.decoder_style,
                    decoder_agg=cfg.decoder_agg, embed_dim=cfg.embed_dim,
                    dropout=cfg.dropout)
    return GraphVAE(net, cfg.seed if seed_or_rng is None else seed_or_rng)


# -- noise bookkeeping ---------------------------------------------------------

def _draw_noise(rng: np.random.Generator, mode: str, b: int, m: int, p: int,
                single_entity: bool) -> dict:
    noise: dict = {}
    if mode == "continuous":
        noise["eps_entity"] = rng.standard_normal((b, m, p, p))
        if not single_entity:
            noise["eps_common"] = rng.standard_normal((b, p, p))
            noise["eps_tilde"] = rng.standard_normal((b, m, p, p))
    else:
        noise["gumbel_entity"] = sample_gumbel_pair(rng, (b, m, p, p))
        if not single_entity:
            noise["beta_uniform"] = rng.random((b, p, p))
            noise["gumbel_tilde"] = sample_gumbel_pair(rng, (b, m, p, p))
    return noise


# -- ELBO ------------------------------------------------------------------------

def _elbo_batch(model: GraphVAE, xw: np.ndarray, cfg: ExperimentConfig,
                noise: dict, mask: np.ndarray | None = None):
    """Loss for a batch of groups. xw is [B, M, T, p, d]; returns Tensors."""
    b, m, t_len, p, d = xw.shape
    flat = xw.reshape(b * m, t_len, p, d)
    enc = model.encoder(flat)
    mode = cfg.mode

    if mode == "continuous":
        mu_q = enc.mu.reshape((b, m, p, p))
        var_q = enc.var.reshape((b, m, p, p))
        z_m = gaussian_reparam(mu_q, var_q, noise["eps_entity"])
    else:
        delta_q = enc.delta.reshape((b, m, p, p))
        z_m = gumbel_softmax(delta_q, cfg.tau, noise["gumbel_entity"])

    if cfg.single_entity:
        # Individual learning: a one-layer VAE per entity against the edge prior.
        if mode == "continuous":
            prior = standard_gaussian_prior((b, m, p, p))
            kl_ent = kl_gaussian(EdgeGaussian(mu_q, var_q), prior).sum() * (1.0 / b)
        else:
            prior = EdgeBernoulli(np.full((b, m, p, p), 0.5))
            kl_ent = kl_bernoulli(EdgeBernoulli(delta_q), prior).sum() * (1.0 / b)
        kl_com = Tensor(0.0)
        z_used = z_m
    else:
        # The consistency terms compare the encoder pass against the decoder
        # pass, with the decoder-side distribution replaced by its conjugacy
        # adjusted ("tilde") counterpart, which is also what gets sampled.
        common_q = entity_to_common(z_m, mode)
        if mode == "continuous":
            prior = standard_gaussian_prior((b, p, p))
            kl_com = kl_divergence(common_q, prior).sum() * (1.0 / b)
            merged = merge_prior(common_q, prior)
            zbar = gaussian_reparam(merged.mu, merged.var, noise["eps_common"])
            zbar_b = zbar.reshape((b, 1, p, p)).broadcast_to((b, m, p, p))
            p_dist = common_to_entity(zbar_b, model.cfg)
            tilde = conjugacy_adjust_gaussian(
                EdgeGaussian(mu_q, var_q), p_dist, cfg.omega)
            kl_ent = kl_divergence(EdgeGaussian(mu_q, var_q),
                                   tilde).sum() * (1.0 / b)
            z_used = gaussian_reparam(tilde.mu, tilde.var, noise["eps_tilde"])
        else:
            prior = flat_beta_prior((b, p, p))
            kl_com = kl_divergence(common_q, prior).sum() * (1.0 / b)
            merged = merge_prior(common_q, prior)
            if "beta_rng" in noise:
                zbar = beta_implicit_sample(merged.alpha, merged.beta,
                                            rng=noise["beta_rng"])
            else:
                zbar = beta_implicit_sample(merged.alpha, merged.beta,
                                            uniform=noise["beta_uniform"])
            zbar_b = zbar.reshape((b, 1, p, p)).broadcast_to((b, m, p, p))
            p_dist = common_to_entity(zbar_b, model.cfg)
            tilde = conjugacy_adjust_bernoulli(delta_q, p_dist.delta, cfg.omega)
            kl_ent = kl_divergence(EdgeBernoulli(delta_q),
                                   tilde).sum() * (1.0 / b)
            z_used = gumbel_softmax(tilde.delta, cfg.tau, noise["gumbel_tilde"])

    if mask is not None:
        z_used = apply_edge_mask(z_used, mask)

    lags, targets = lag_preprocess(flat, cfg.q)
    mu_x, var_x = model.decoder.decode(lags, z_used.reshape((b * m, p, p)))
    resid = Tensor(targets) - mu_x
    recon = (T.square(resid) / var_x + T.log(var_x)).sum() * (1.0 / b)

    total = recon + kl_com + kl_ent
    comps = {"recon": recon, "kl_common": kl_com, "kl_entity": kl_ent}
    return total, comps


def elbo_loss(model: GraphVAE, group: TrainGroup, cfg: ExperimentConfig,
              rng: np.random.Generator | None = None,
              noise: dict | None = None, mask: np.ndarray | None = None):
    """Single-group loss; returns (scalar loss Tensor, float components)."""
    windows = sorted(group.windows, key=lambda w: w.entity)
    xw = np.stack([w.values for w in windows])[None]  # [1, M, T, p, d]
    if noise is None:
        noise = _draw_noise(rng or np.random.default_rng(0), cfg.mode,
                            1, xw.shape[1], cfg.p, cfg.single_entity)
    total, comps = _elbo_batch(model, xw, cfg, noise, mask)
    if not np.isfinite(total.data):
        raise TrainingError(
            "non-finite loss: " +
            ", ".join(f"{k}={float(v.data):.6g}" for k, v in comps.items()))
    return total, {k: float(v.data) for k, v in comps.items()}


# -- training loop ------------------------------------------------------------------

def _load_mask(cfg: ExperimentConfig) -> np.ndarray | None:
    if cfg.edge_mask is None:
        return None
    mask = np.loadtxt(cfg.edge_mask, delimiter=",", ndmin=2)
    if mask.shape != (cfg.p, cfg.p):
        raise ConfigurationError(
            f"edge mask shape {mask.shape} does not match p={cfg.p}")
    return mask.astype(bool)


def train(cfg: ExperimentConfig, dataset: Dataset,
          progress=None) -> TrainResult:
    """Run the full training loop; deterministic given (cfg, dataset, seed)."""
    cfg.validate()
    if dataset.M != cfg.M:
        raise ConfigurationError(
            f"dataset has {dataset.M} entities, config says {cfg.M}")
    if dataset.p != cfg.p or dataset.d != cfg.d:
        raise ConfigurationError(
            f"dataset dims (p={dataset.p}, d={dataset.d}) do not match config "
            f"(p={cfg.p}, d={cfg.d})")

    ss = np.random.SeedSequence(cfg.seed)
    seed_init, seed_drop, seed_noise, seed_shuffle, seed_val = ss.spawn(5)
    model = build_model(cfg, np.random.default_rng(seed_init))
    model.set_dropout_rng(np.random.default_rng(seed_drop))
    rng_noise = np.random.default_rng(seed_noise)
    rng_shuffle = np.random.default_rng(seed_shuffle)

    result = TrainResult(model=model)
    scaled = []
    for series in dataset.series:
        if cfg.standardize:
            arr, mean, std = standardize_series(series)
        else:
            arr, mean, std = series, np.zeros((1, 1, series.shape[2])), \
                np.ones((1, 1, series.shape[2]))
        scaled.append(arr)
        result.standardizers.append((mean, std))

    per_entity = [make_windows(arr, cfg.T, cfg.stride, entity=i)
                  for i, arr in enumerate(scaled)]
    n_windows = min(len(w) for w in per_entity)
    if n_windows < 1:
        raise ConfigurationError("every entity needs at least one window")
    stacks = [np.stack([w.values for w in wins[:n_windows]])
              for wins in per_entity]                     # M x [n, T, p, d]
    n_val = int(np.floor(cfg.val_fraction * n_windows))
    n_train = n_windows - n_val
    if n_train < 1:
        raise ConfigurationError("val_fraction leaves no training windows")

    mask = _load_mask(cfg)
    optim = Adam(model.params, lr=cfg.optimizer["lr"],
                 beta1=cfg.optimizer["beta1"], beta2=cfg.optimizer["beta2"],
                 eps=cfg.optimizer["eps"])
    last_good = model.params.copy_values()
    best_val = np.inf
    best_epoch = 0
    batch = max(1, cfg.batch_groups)

    def run_val(epoch: int) -> float:
        if n_val == 0:
            return np.nan
        model.eval()
        rng_val = np.random.default_rng(seed_val)  # same draws every epoch
        total = 0.0
        for lo in range(n_train, n_windows, batch):
            hi = min(lo + batch, n_windows)
            xw = np.stack([s[lo:hi] for s in stacks], axis=1)
            noise = _draw_noise(rng_val, cfg.mode, hi - lo, cfg.M, cfg.p,
                                cfg.single_entity)
            loss, _ = _elbo_batch(model, xw, cfg, noise, mask)
            total += float(loss.data) * (hi - lo)
        model.train()
        return total / n_val

    for epoch in range(1, cfg.epochs + 1):
        orders = [rng_shuffle.permutation(n_train) for _ in range(cfg.M)]
        sums = {"recon": 0.0, "kl_common": 0.0, "kl_entity": 0.0, "total": 0.0}
        steps = 0
        for lo in range(0, n_train, batch):
            hi = min(lo + batch, n_train)
            xw = np.stack([stacks[m][orders[m][lo:hi]]
                           for m in range(cfg.M)], axis=1)
            noise = _draw_noise(rng_noise, cfg.mode, hi - lo, cfg.M, cfg.p,
                                cfg.single_entity)
            loss, comps = _elbo_batch(model, xw, cfg, noise, mask)
            if not np.isfinite(loss.data):
                model.params.set_values(last_good)
                err = TrainingError(
                    f"training diverged at epoch {epoch}: " +
                    ", ".join(f"{k}={float(v.data):.6g}" for k, v in comps.items()))
                err.result = result
                raise err
            zero_grads(model.params)
            T.backward(loss)
            grads = collect_grads(model.params)
            clip_grad_norm(grads, cfg.grad_clip)
            optim.step(grads)
            for key, val in comps.items():
                sums[key] += float(val.data)
            sums["total"] += float(loss.data)
            steps += 1

        row = {"epoch": epoch,
               "recon": sums["recon"] / steps,
               "kl_common": sums["kl_common"] / steps,
               "kl_entity": sums["kl_entity"] / steps,
               "total": sums["total"] / steps}
        result.loss_log.append(row)
        last_good = model.params.copy_values()
        result.stopped_epoch = epoch

        val = run_val(epoch)
        result.val_log.append({"epoch": epoch, "val_total": val})
        if progress is not None:
            progress(row, val)
        if n_val > 0:
            if val < best_val - 1e-9:
                best_val = val
                best_epoch = epoch
            elif epoch - best_epoch >= cfg.patience:
                break
    return result


# -- inference -----------------------------------------------------------------------

def _beta_mode(alpha: np.ndarray, beta: np.ndarray) -> np.ndarray:
    interior = (alpha > 1.0) & (beta > 1.0)
    mode = np.where(interior,
                    (alpha - 1.0) / np.maximum(alpha + beta - 2.0, 1e-12),
                    alpha / (alpha + beta))
    return mode


def infer_graphs(model: GraphVAE, dataset: Dataset,
                 cfg: ExperimentConfig) -> InferenceResult:
    """Extract entity and common graph estimates from the trained encoder.

    Encoder parameters are averaged across each entity's windows before the
    distribution mode is taken.
    """
    model.eval()
    entity_params = []
    modes = []
    for series in dataset.series:
        arr = standardize_series(series)[0] if cfg.standardize else series
        wins = make_windows(arr, cfg.T, cfg.stride)
        stack = np.stack([w.values for w in wins])
        firsts, seconds = [], []
        for lo in range(0, len(stack), 256):
            enc = model.encoder(stack[lo:lo + 256])
            if cfg.mode == "continuous":
                firsts.append(enc.mu.data)
                seconds.append(enc.var.data)
            else:
                firsts.append(enc.delta.data)
        if cfg.mode == "continuous":
            mu = np.concatenate(firsts).mean(axis=0)
            var = np.concatenate(seconds).mean(axis=0)
            entity_params.append({"mu": mu, "var": var})
            modes.append(mu)
        else:
            delta = np.concatenate(firsts).mean(axis=0)
            entity_params.append({"delta": delta})
            modes.append(delta)
    entities = np.stack(modes)

    if dataset.M >= 2:
        agg = entity_to_common(entities, cfg.mode)
        if cfg.mode == "continuous":
            common = agg.mu.data.copy()
            common_params = {"mu": agg.mu.data, "var": agg.var.data}
        else:
            alpha, beta = agg.alpha.data, agg.beta.data
            common = _beta_mode(alpha, beta)
            common_params = {"alpha": alpha, "beta": beta}
    else:
        common = entities[0].copy()
        common_params = dict(entity_params[0])
    return InferenceResult(common, entities, entity_params, common_params)


def apply_edge_mask(z, mask: np.ndarray):
    """Zero the masked entries; True in the mask means the edge is absent."""
    mask = np.asarray(mask, dtype=bool)
    if isinstance(z, Tensor):
        if mask.shape != z.shape[-2:]:
            raise ConfigurationError(
                f"mask shape {mask.shape} does not match edges {z.shape[-2:]}")
        return z * Tensor((~mask).astype(np.float64))
    z = np.asarray(z, dtype=np.float64)
    if mask.shape != z.shape[-2:]:
        raise ConfigurationError(
            f"mask shape {mask.shape} does not match edges {z.shape[-2:]}")
    return np.where(mask, 0.0, z)


def predictive_strength(model: GraphVAE, z_hat: np.ndarray, traj: np.ndarray,
                        edges, q: int | None = None) -> float:
    """RSS difference from nullifying the edge set: RSS(z) - RSS(z nullified).

    Negative values mean the nullified edges were carrying predictive power.
    Predictions are decoder means from the observed lags.
    """
    model.eval()
    q = q if q is not None else model.cfg.q

    def rss(z):
        lags, targets = lag_preprocess(traj, q)
        mu, _ = model.decoder.decode(lags, np.asarray(z, dtype=np.float64))
        resid = targets - mu.data
        return float(np.sum(resid * resid)) / max(targets.shape[0], 1)

    z_null = np.array(z_hat, dtype=np.float64, copy=True)
    for (i, j) in edges:
        z_null[i, j] = 0.0
    return rss(z_hat) - rss(z_null)


# -- supervised encoder fitting (sign-distinction probe) -----------------------------

def supervised_encoder_fit(cfg: ExperimentConfig, windows: np.ndarray,
                           label: np.ndarray, epochs: int = 60,
                           batch: int = 64, seed: int = 0):
    """Fit the encoder mean head to a fixed graph label by squared error.

    Returns (final epoch loss, window-averaged estimate, per-epoch losses).
    """
    if cfg.mode != "continuous":
        raise ConfigurationError("supervised encoder fitting uses continuous mode")
    ss = np.random.SeedSequence(seed)
    seed_init, seed_drop, seed_shuffle = ss.spawn(3)
    model = build_model(cfg, np.random.default_rng(seed_init))
    model.set_dropout_rng(np.random.default_rng(seed_drop))
    rng_shuffle = np.random.default_rng(seed_shuffle)
    enc_params = {k: v for k, v in model.params.items() if k.startswith("enc.")}
    optim = Adam(enc_params, lr=cfg.optimizer["lr"])
    target = Tensor(np.asarray(label, dtype=np.float64))
    n = windows.shape[0]
    losses = []
    for _ in range(epochs):
        order = rng_shuffle.permutation(n)
        total, steps = 0.0, 0
        for lo in range(0, n, batch):
            sel = windows[order[lo:lo + batch]]
            enc = model.encoder(sel)
            loss = T.square(enc.mu - target).mean()
            zero_grads(enc_params)
            T.backward(loss)
            optim.step(collect_grads(enc_params))
            total += float(loss.data)
            steps += 1
        losses.append(total / steps)
    model.eval()
    est = model.encoder(windows).mu.data.mean(axis=0)
    return losses[-1], est, losses
