"""Encoder and decoder networks for latent-graph learning.

The encoder maps a trajectory window to one distribution per ordered node
pair (Trajectory2Graph), and aggregates sampled entity graphs into the
common-graph posterior (Entity2Common). Decoding runs the other way: the
sampled common graph parameterizes per-entity edge distributions
(Common2Entity), and sampled entity graphs gate lagged node values inside a
shared prediction network (Graph2Trajectory). Both a node-centric and an
edge-centric Graph2Trajectory variant are provided.

All ordered pairs (i, j) carry a latent edge, diagonal included; z[i, j]
is the connection from node j into node i.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .distributions import (
    PROB_EPS, VARIANCE_FLOOR, EdgeBernoulli, EdgeBeta, EdgeGaussian,
)
from .errors import ConfigurationError
from .tensor import Tensor, astensor

__all__ = [
    "NetConfig", "ParamStore", "Linear", "MLPBlock",
    "GraphEncoder", "NodeDecoder", "EdgeDecoder", "GraphVAE",
    "entity_to_common", "common_to_entity", "lag_preprocess",
    "node2edge", "edge2node",
]


@dataclass
class NetConfig:
    """Dimensions and architecture switches shared by encoder and decoder."""
    p: int
    d: int = 1
    T: int = 20
    q: int = 1
    n_hid: int = 64
    mode: str = "continuous"          # continuous | binary
    decoder_style: str = "node"       # node | edge
    decoder_agg: str = "mlp"          # mlp | sum (sum = linear-VAR read-out)
    embed_dim: int = 0                # 0 keeps the raw lag values
    dropout: float = 0.1
    fixed_decoder_var: float = 1.0    # decoder-side variance in the identity map
    enc_var_bias: float = -3.0        # variance-head bias init; small encoded
                                      # variances keep early samples informative

    def __post_init__(self):
        if self.p < 1 or self.d < 1 or self.n_hid < 1:
            raise ConfigurationError("NetConfig: p, d, n_hid must be positive")
        if self.q < 1 or self.T <= self.q:
            raise ConfigurationError("NetConfig: need q >= 1 and T > q")
        if self.mode not in ("continuous", "binary"):
            raise ConfigurationError(f"NetConfig: unknown mode {self.mode!r}")
        if self.decoder_style not in ("node", "edge"):
            raise ConfigurationError(
                f"NetConfig: unknown decoder_style {self.decoder_style!r}")
        if self.decoder_agg not in ("mlp", "sum"):
            raise ConfigurationError(
                f"NetConfig: unknown decoder_agg {self.decoder_agg!r}")
        if self.decoder_agg == "sum" and (self.embed_dim or self.q != 1):
            raise ConfigurationError(
                "NetConfig: sum aggregation requires q == 1 and no embedding")


class ParamStore(dict):
    """Named trainable tensors; insertion order is the checkpoint order."""

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        t = Tensor(array, requires_grad=True, name=name)
        self[name] = t
        return t

    def load(self, blocks: dict[str, np.ndarray]) -> None:
        missing = set(self) - set(blocks)
        extra = set(blocks) - set(self)
        if missing or extra:
            raise ConfigurationError(
                f"checkpoint does not match model: missing={sorted(missing)}, "
                f"unexpected={sorted(extra)}")
        for name, arr in blocks.items():
            if arr.shape != self[name].data.shape:
                raise ConfigurationError(
                    f"checkpoint block {name!r} has shape {arr.shape}, "
                    f"expected {self[name].data.shape}")
            self[name].data = arr.astype(np.float64, copy=True)

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.items()}

    def set_values(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            self[k].data = v.copy()


def _glorot(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


class Linear:
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator):
        self.w = store.add(name + ".w", _glorot(rng, n_in, n_out))
        self.b = store.add(name + ".b", np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.w) + self.b


class MLPBlock:
    """One Linear-ReLU-Dropout sub-block followed by a final Linear."""

    def __init__(self, store: ParamStore, name: str, n_in: int, n_hid: int,
                 n_out: int, rng: np.random.Generator, dropout: float = 0.1):
        self.lin1 = Linear(store, name + ".lin1", n_in, n_hid, rng)
        self.lin2 = Linear(store, name + ".lin2", n_hid, n_out, rng)
        self.rate = dropout

    def __call__(self, x: Tensor, rng: np.random.Generator,
                 training: bool) -> Tensor:
        h = T.relu_dropout(self.lin1(x), self.rate, rng, training)
        return self.lin2(h)


# -- message-passing plumbing ---------------------------------------------------

def node2edge(x: Tensor) -> Tensor:
    """[..., p, h] -> [..., p, p, 2h]; pair (i, j) concatenates node i then j."""
    lead = x.data.shape[:-2]
    p, h = x.data.shape[-2:]
    recv = x.reshape(lead + (p, 1, h)).broadcast_to(lead + (p, p, h))
    send = x.reshape(lead + (1, p, h)).broadcast_to(lead + (p, p, h))
    return T.concat([recv, send], axis=-1)


def edge2node(e: Tensor) -> Tensor:
    """[..., p, p, h] -> [..., p, h]; node i aggregates its incoming edges."""
    return e.sum(axis=-2)


class PairMLPBlock:
    """MLP block applied to every ordered node pair, with the node2edge concat
    folded into the first layer: Linear(concat(x_i, x_j)) is computed as two
    node-level matmuls plus a broadcast sum, which is the same affine map at a
    fraction of the flops."""

    def __init__(self, store: ParamStore, name: str, n_in: int, n_hid: int,
                 n_out: int, rng: np.random.Generator, dropout: float = 0.1):
        self.lin1 = Linear(store, name + ".lin1", 2 * n_in, n_hid, rng)
        self.lin2 = Linear(store, name + ".lin2", n_hid, n_out, rng)
        self.n_in = n_in
        self.rate = dropout

    def __call__(self, x: Tensor, rng: np.random.Generator,
                 training: bool) -> Tensor:
        n, p, _ = x.shape
        w = self.lin1.w
        t_recv = T.matmul(x, w[:self.n_in])
        t_send = T.matmul(x, w[self.n_in:])
        hid = t_recv.shape[-1]
        pre = (t_recv.reshape((n, p, 1, hid)) + t_send.reshape((n, 1, p, hid))
               + self.lin1.b)
        h = T.relu_dropout(pre, self.rate, rng, training)
        return self.lin2(h)


def _blockwise_linear(x, w_blocks) -> Tensor:
    """x [n, s, p, e] with per-sender weight blocks [p, e, h] -> [n, s, p, h]."""
    x, w = astensor(x), astensor(w_blocks)
    n, s, p, e = x.data.shape
    h = w.data.shape[-1]
    # batched matmul over the sender axis: [p, n*s, e] @ [p, e, h]
    xt = np.ascontiguousarray(x.data.transpose(2, 0, 1, 3).reshape(p, n * s, e))
    out = np.matmul(xt, w.data).reshape(p, n, s, h).transpose(1, 2, 0, 3)

    def vjp(g):
        gt = np.ascontiguousarray(g.transpose(2, 0, 1, 3).reshape(p, n * s, h))
        gx = np.matmul(gt, w.data.transpose(0, 2, 1)) \
            .reshape(p, n, s, e).transpose(1, 2, 0, 3)
        gw = np.matmul(xt.transpose(0, 2, 1), gt)
        return gx, gw

    return T.custom_op(np.ascontiguousarray(out), (x, w), vjp,
                       "blockwise_linear")


def _gate_mix(z, s) -> Tensor:
    """out[n, t, i, :] = sum_j z[n, i, j] * s[n, t, j, :]."""
    z, s = astensor(z), astensor(s)
    zb = z.data[:, None]                                   # [n, 1, p, p]
    out = np.matmul(zb, s.data)                            # -> [n, t, p, h]

    def vjp(g):
        gz = np.matmul(g, s.data.transpose(0, 1, 3, 2)).sum(axis=1)
        gs = np.matmul(zb.transpose(0, 1, 3, 2), g)
        return gz, gs

    return T.custom_op(out, (z, s), vjp, "gate_mix")


# -- encoder ---------------------------------------------------------------------

class GraphEncoder:
    """Trajectory2Graph: windows -> per-edge distribution parameters."""

    def __init__(self, cfg: NetConfig, store: ParamStore,
                 rng: np.random.Generator, scope: str = "enc"):
        self.cfg = cfg
        h = cfg.n_hid
        flat = cfg.T * cfg.d
        self.emb = MLPBlock(store, f"{scope}.emb", flat, h, h, rng, cfg.dropout)
        self.mlp1 = PairMLPBlock(store, f"{scope}.mlp1", h, h, h, rng, cfg.dropout)
        self.mlp2 = MLPBlock(store, f"{scope}.mlp2", h, h, h, rng, cfg.dropout)
        self.mlp3 = PairMLPBlock(store, f"{scope}.mlp3", h, h, h, rng, cfg.dropout)
        if cfg.mode == "continuous":
            self.head_mu = Linear(store, f"{scope}.head_mu", h, 1, rng)
            self.head_var = Linear(store, f"{scope}.head_var", h, 1, rng)
            self.head_var.b.data[:] = cfg.enc_var_bias
        else:
            self.head_delta = MLPBlock(store, f"{scope}.head_delta", h, h, 1,
                                       rng, cfg.dropout)
        self.training = True
        self._rng = rng

    def train(self):
        self.training = True

    def eval(self):
        self.training = False

    def _check_window(self, window: np.ndarray) -> np.ndarray:
        window = np.asarray(window, dtype=np.float64)
        single = window.ndim == 3
        if single:
            window = window[None]
        if window.ndim != 4 or window.shape[1:] != (self.cfg.T, self.cfg.p, self.cfg.d):
            raise ConfigurationError(
                f"encoder input must be [N, T={self.cfg.T}, p={self.cfg.p}, "
                f"d={self.cfg.d}], got {np.asarray(window).shape}")
        return window, single

    def embed_nodes(self, window) -> Tensor:
        """[T, p, d] (or batched) -> per-node embeddings [p, n_hid]."""
        arr, single = self._check_window(window)
        n = arr.shape[0]
        cfg = self.cfg
        # flatten each node's trajectory: [N, T, p, d] -> [N, p, T*d]
        flat = np.ascontiguousarray(arr.transpose(0, 2, 1, 3)).reshape(
            n, cfg.p, cfg.T * cfg.d)
        emb = self.emb(Tensor(flat), self._rng, self.training)
        return emb[0] if single else emb

    def message_pass(self, embeddings: Tensor) -> Tensor:
        """[p, n_hid] (or batched) -> edge hidden states [p, p, n_hid]."""
        x = astensor(embeddings)
        single = x.ndim == 2
        if single:
            x = x.reshape((1,) + x.shape)
        e = self.mlp1(x, self._rng, self.training)          # node2edge + MLP
        v = self.mlp2(edge2node(e), self._rng, self.training)
        h = self.mlp3(v, self._rng, self.training)          # node2edge + MLP
        return h[0] if single else h

    def emit_entity_dist(self, h: Tensor):
        """Edge hidden states -> EdgeGaussian (continuous) or EdgeBernoulli."""
        if self.cfg.mode == "continuous":
            mu = self.head_mu(h)[..., 0]
            var = T.clamp_min(T.softplus(self.head_var(h)[..., 0]), VARIANCE_FLOOR)
            return EdgeGaussian(mu, var)
        logits = self.head_delta(h, self._rng, self.training)[..., 0]
        return EdgeBernoulli(T.clamp(T.sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS))

    def __call__(self, window):
        return self.emit_entity_dist(self.message_pass(self.embed_nodes(window)))


def entity_to_common(samples, mode: str):
    """Aggregate entity graph samples edgewise into the common posterior.

    ``samples`` has the entity axis second-to-last-but-two: [..., M, p, p].
    Continuous: sample mean and population spread -> EdgeGaussian.
    Binary: Beta parameters by moment matching -> EdgeBeta.
    """
    z = astensor(samples)
    if z.ndim < 3:
        raise ConfigurationError("entity_to_common expects [..., M, p, p] samples")
    m_axis = z.ndim - 3
    m = z.shape[m_axis]
    if m < 2:
        raise ConfigurationError("entity_to_common needs at least 2 entities")
    mean = z.mean(axis=m_axis)
    var = T.square(z - mean.reshape(
        mean.shape[:m_axis] + (1,) + mean.shape[m_axis:])).mean(axis=m_axis)
    if mode == "continuous":
        return EdgeGaussian(mean, T.clamp_min(var, VARIANCE_FLOOR))
    if mode == "binary":
        mhat = T.clamp(mean, PROB_EPS, 1.0 - PROB_EPS)
        vhat = T.clamp_min(var, VARIANCE_FLOOR)
        ratio = mhat * (1.0 - mhat) / vhat - 1.0
        alpha = T.clamp(mhat * ratio, 1e-6, 1e6)
        beta = T.clamp((1.0 - mhat) * ratio, 1e-6, 1e6)
        return EdgeBeta(alpha, beta)
    raise ConfigurationError(f"unknown mode {mode!r}")


def common_to_entity(zbar, cfg: NetConfig):
    """Identity map from the sampled common graph to the unadjusted decoder
    distribution: N(zbar, fixed var) or Ber(clamp(zbar))."""
    z = astensor(zbar)
    if cfg.mode == "continuous":
        var = Tensor(np.full(z.shape, cfg.fixed_decoder_var))
        return EdgeGaussian(z, var)
    return EdgeBernoulli(T.clamp(z, PROB_EPS, 1.0 - PROB_EPS))


# -- decoders ---------------------------------------------------------------------

def lag_preprocess(window: np.ndarray, q: int):
    """Window [T, p, d] (or [N, T, p, d]) -> (lag inputs, targets).

    Produces T - q prediction steps; the lag input at target time t stacks
    x_{t-1}, ..., x_{t-q} along the feature axis.
    """
    arr = np.asarray(window, dtype=np.float64)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    n, t_len, p, d = arr.shape
    if t_len <= q:
        raise ConfigurationError(f"lag_preprocess: need T > q, got T={t_len}, q={q}")
    steps = t_len - q
    lags = np.empty((n, steps, p, q * d))
    for lag in range(1, q + 1):
        lo = q - lag
        lags[..., (lag - 1) * d:lag * d] = arr[:, lo:lo + steps]
    targets = arr[:, q:]
    if single:
        return lags[0], targets[0]
    return lags, targets


def _restore_layout(mu, var, layout: int):
    if layout == 2:
        return mu[0, 0], var[0, 0]
    if layout == 3:
        return mu[0], var[0]
    return mu, var


class _DecoderBase:
    def __init__(self, cfg: NetConfig, store: ParamStore,
                 rng: np.random.Generator, scope: str):
        self.cfg = cfg
        self.training = True
        self._rng = rng
        self.embed = None
        if cfg.embed_dim:
            # optional numerical embedding of the lag stack, Linear-ReLU-Linear
            self._emb1 = Linear(store, f"{scope}.embed1", cfg.q * cfg.d,
                                cfg.embed_dim, rng)
            self._emb2 = Linear(store, f"{scope}.embed2", cfg.embed_dim,
                                cfg.embed_dim, rng)
            self.embed = lambda x: self._emb2(T.relu(self._emb1(x)))

    def train(self):
        self.training = True

    def eval(self):
        self.training = False

    @property
    def feat_dim(self) -> int:
        return self.cfg.embed_dim or self.cfg.q * self.cfg.d

    def _prep(self, lag_input, z):
        """Accepts [p, q*d] (one step), [S, p, q*d] (one sequence), or
        [N, S, p, q*d] (batched); z is [p, p] or [N, p, p] to match."""
        lag = astensor(lag_input)
        z = astensor(z)
        layout = lag.ndim
        if layout == 2:
            lag = lag.reshape((1, 1) + lag.shape)
        elif layout == 3:
            lag = lag.reshape((1,) + lag.shape)
        elif layout != 4:
            raise ConfigurationError(
                "decoder lag input must be [p, q*d], [S, p, q*d], or [N, S, p, q*d]")
        if z.ndim == 2:
            z = z.reshape((1,) + z.shape)
        if lag.shape[-1] != self.cfg.q * self.cfg.d or lag.shape[-2] != self.cfg.p:
            raise ConfigurationError(
                f"decoder lag input shape {lag.shape} does not match config")
        xh = self.embed(lag) if self.embed else lag
        return xh, z, layout


class NodeDecoder(_DecoderBase):
    """Node-centric Graph2Trajectory: gate lagged node values by z, then a
    shared MLP with linear mean head and softplus variance head."""

    def __init__(self, cfg: NetConfig, store: ParamStore,
                 rng: np.random.Generator, scope: str = "dec"):
        super().__init__(cfg, store, rng, scope)
        if cfg.decoder_agg == "mlp":
            self.mlp = MLPBlock(store, f"{scope}.mlp", cfg.p * self.feat_dim,
                                cfg.n_hid, cfg.n_hid, rng, cfg.dropout)
            self.head_mu = Linear(store, f"{scope}.head_mu", cfg.n_hid, cfg.d, rng)
            self.head_var = Linear(store, f"{scope}.head_var", cfg.n_hid, cfg.d, rng)
        else:
            # linear-VAR read-out: the mean is the sum of gated lag values
            self.var_bias = store.add(f"{scope}.var_bias", np.zeros(cfg.d))

    def decode(self, lag_input, z):
        """lag [N, S, p, q*d], z [N, p, p] -> mean/var [N, S, p, d].

        The first MLP layer applied to the gated concatenation
        concat_j(x_j * z_ij) is computed as per-sender weight blocks mixed by
        z (same affine map, avoids materializing the p^2-wide gated tensor).
        """
        xh, z, layout = self._prep(lag_input, z)
        n, s, p, e = xh.shape
        if self.cfg.decoder_agg == "sum":
            send = xh.reshape((n, s, 1, p, e))
            gate = z.reshape((n, 1, p, p, 1))
            mu = (send * gate).sum(axis=3)
            var = T.softplus(self.var_bias).broadcast_to((n, s, p, self.cfg.d))
        else:
            n_hid = self.cfg.n_hid
            w_blocks = self.mlp.lin1.w.reshape((p, e, n_hid))
            per_sender = _blockwise_linear(xh, w_blocks)    # [n, s, p, n_hid]
            pre = _gate_mix(z, per_sender) + self.mlp.lin1.b
            hid = T.relu_dropout(pre, self.mlp.rate, self._rng, self.training)
            hid = self.mlp.lin2(hid.reshape((n * s * p, n_hid)))
            mu = self.head_mu(hid).reshape((n, s, p, self.cfg.d))
            var = T.clamp_min(T.softplus(self.head_var(hid)), VARIANCE_FLOOR)
            var = var.reshape((n, s, p, self.cfg.d))
        return _restore_layout(mu, var, layout)

    def gate_predict(self, lag_input, z_row_i):
        """One response node: lag [p, q*d] and its z row [p] -> (mu, var) [d]."""
        z_row = np.asarray(z_row_i, dtype=np.float64)
        z_full = np.zeros((self.cfg.p, self.cfg.p))
        z_full[0] = z_row
        mu, var = self.decode(lag_input, z_full)
        return mu[0], var[0]


class EdgeDecoder(_DecoderBase):
    """Edge-centric Graph2Trajectory: message passing over node pairs with the
    enriched edge representation gated by z before aggregation."""

    def __init__(self, cfg: NetConfig, store: ParamStore,
                 rng: np.random.Generator, scope: str = "dec"):
        super().__init__(cfg, store, rng, scope)
        h = cfg.n_hid
        self.mlp_edge = MLPBlock(store, f"{scope}.mlp_edge", 2 * self.feat_dim,
                                 h, h, rng, cfg.dropout)
        self.mlp_node = MLPBlock(store, f"{scope}.mlp_node", h, h, h, rng,
                                 cfg.dropout)
        self.head_mu = Linear(store, f"{scope}.head_mu", h, cfg.d, rng)
        self.head_var = Linear(store, f"{scope}.head_var", h, cfg.d, rng)

    def decode(self, lag_input, z):
        xh, z, layout = self._prep(lag_input, z)
        n, s, p, e = xh.shape
        edges = node2edge(xh)                      # [N, S, p, p, 2e]
        rows = edges.reshape((n * s * p * p, 2 * e))
        enriched = self.mlp_edge(rows, self._rng, self.training)
        enriched = enriched.reshape((n, s, p, p, self.cfg.n_hid))
        gate = z.reshape((n, 1, p, p, 1)).broadcast_to(enriched.shape)
        v = edge2node(enriched * gate)             # [N, S, p, n_hid]
        hid = self.mlp_node(v.reshape((n * s * p, self.cfg.n_hid)),
                            self._rng, self.training)
        mu = self.head_mu(hid).reshape((n, s, p, self.cfg.d))
        var = T.clamp_min(T.softplus(self.head_var(hid)), VARIANCE_FLOOR)
        var = var.reshape((n, s, p, self.cfg.d))
        return _restore_layout(mu, var, layout)


class GraphVAE:
    """Encoder plus decoder with one shared parameter store."""

    def __init__(self, cfg: NetConfig, seed_or_rng=0):
        rng = (seed_or_rng if isinstance(seed_or_rng, np.random.Generator)
               else np.random.default_rng(seed_or_rng))
        self.cfg = cfg
        self.params = ParamStore()
        self.encoder = GraphEncoder(cfg, self.params, rng)
        if cfg.decoder_style == "node":
            self.decoder = NodeDecoder(cfg, self.params, rng)
        else:
            self.decoder = EdgeDecoder(cfg, self.params, rng)

    def train(self):
        self.encoder.train()
        self.decoder.train()

    def eval(self):
        self.encoder.eval()
        self.decoder.eval()

    def set_dropout_rng(self, rng: np.random.Generator):
        self.encoder._rng = rng
        self.decoder._rng = rng
