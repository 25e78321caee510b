"""Edge-distribution containers, reparameterized samplers, KL divergences,
and the conjugacy adjustments that merge encoder and decoder information.

All operations accept Tensors or plain arrays and return Tensors, so the same
code serves both the differentiable training path and plain numeric checks.
Samplers are deterministic functions of (parameters, supplied noise).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special as _sp

from . import tensor as T
from .errors import ConfigurationError, ContractViolation
from .tensor import Tensor, astensor

__all__ = [
    "VARIANCE_FLOOR", "PROB_EPS", "SHAPE_FLOOR", "SHAPE_CEIL",
    "EdgeGaussian", "EdgeBernoulli", "EdgeBeta", "MixWeight",
    "special_eval",
    "gaussian_reparam", "gumbel_softmax", "gumbel_softmax_pair",
    "sample_gumbel_pair", "beta_implicit_sample",
    "kl_gaussian", "kl_bernoulli", "kl_beta", "kl_divergence",
    "conjugacy_adjust_gaussian", "conjugacy_adjust_bernoulli", "merge_prior",
    "standard_gaussian_prior", "flat_beta_prior",
]

# Degenerate encoded variances or probabilities would blow up KL terms and
# precision weights; these floors keep everything finite.
VARIANCE_FLOOR = 1e-6
PROB_EPS = 1e-6
SHAPE_FLOOR = 1e-6
SHAPE_CEIL = 1e6  # numerical guard for moment-matched Beta shapes


# -- parameter containers -----------------------------------------------------

@dataclass
class EdgeGaussian:
    """Per-edge Gaussian parameters (mean, variance)."""
    mu: Tensor
    var: Tensor

    def __post_init__(self):
        self.mu = astensor(self.mu)
        self.var = astensor(self.var)
        if np.min(self.var.data) <= 0:
            raise ConfigurationError("EdgeGaussian: variance must be positive")


@dataclass
class EdgeBernoulli:
    """Per-edge Bernoulli success probabilities in (0, 1)."""
    delta: Tensor

    def __post_init__(self):
        self.delta = astensor(self.delta)
        d = self.delta.data
        if np.min(d) < PROB_EPS - 1e-15 or np.max(d) > 1.0 - PROB_EPS + 1e-15:
            raise ConfigurationError(
                "EdgeBernoulli: probabilities must lie in [eps, 1-eps]")


@dataclass
class EdgeBeta:
    """Per-edge Beta shape parameters (both positive)."""
    alpha: Tensor
    beta: Tensor

    def __post_init__(self):
        self.alpha = astensor(self.alpha)
        self.beta = astensor(self.beta)
        if np.min(self.alpha.data) <= 0 or np.min(self.beta.data) <= 0:
            raise ConfigurationError("EdgeBeta: shapes must be positive")


@dataclass
class MixWeight:
    """Mixing weight between entity-specific and common information."""
    omega: float

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigurationError("MixWeight: omega must lie in [0, 1]")


def standard_gaussian_prior(shape) -> EdgeGaussian:
    return EdgeGaussian(np.zeros(shape), np.ones(shape))


def flat_beta_prior(shape) -> EdgeBeta:
    return EdgeBeta(np.ones(shape), np.ones(shape))


# -- special functions ----------------------------------------------------------

def special_eval(fn: str, *args):
    """Evaluate log-gamma, digamma, or the regularized incomplete beta."""
    if fn == "log-gamma":
        (x,) = args
        if np.min(x) <= 0:
            raise ConfigurationError("log-gamma requires positive arguments")
        return _sp.gammaln(x)
    if fn == "digamma":
        (x,) = args
        if np.min(x) <= 0:
            raise ConfigurationError("digamma requires positive arguments")
        return _sp.digamma(x)
    if fn == "regularized-incomplete-beta":
        a, b, x = args
        if np.min(a) <= 0 or np.min(b) <= 0:
            raise ConfigurationError("incomplete beta requires positive shapes")
        if np.min(x) < 0 or np.max(x) > 1:
            raise ConfigurationError("incomplete beta requires x in [0, 1]")
        return _sp.betainc(a, b, x)
    raise ConfigurationError(f"unknown special function {fn!r}")


# -- reparameterized samplers ----------------------------------------------------

def gaussian_reparam(mu, var, noise) -> Tensor:
    """z = mu + sqrt(var) * noise, differentiable in mu and var."""
    mu, var = astensor(mu), astensor(var)
    if np.min(var.data) <= 0:
        raise ConfigurationError("gaussian_reparam: variance must be positive")
    return mu + T.sqrt(var) * astensor(noise)


def sample_gumbel_pair(rng: np.random.Generator, shape) -> np.ndarray:
    """Two i.i.d. Gumbel(0, 1) draws per site, stacked on a new last axis."""
    u = rng.random(tuple(shape) + (2,))
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    return -np.log(-np.log(u))


def gumbel_softmax_pair(delta, tau: float, gumbel_noise) -> Tensor:
    """Relaxed two-class sample: softmax((log(1-delta, delta) + g) / tau).

    Returns both softmax coordinates on the last axis; the relaxed edge value
    is coordinate 1.
    """
    if tau <= 0:
        raise ConfigurationError("gumbel_softmax: temperature must be positive")
    delta = astensor(delta)
    noise = astensor(gumbel_noise)
    if noise.data.shape != delta.data.shape + (2,):
        raise ConfigurationError(
            f"gumbel_softmax: noise shape {noise.data.shape} does not extend "
            f"delta shape {delta.data.shape} with a final axis of 2")
    d = T.clamp(delta, PROB_EPS, 1.0 - PROB_EPS)
    shp = delta.data.shape + (1,)
    logits = T.concat([T.log(1.0 - d).reshape(shp), T.log(d).reshape(shp)], axis=-1)
    return T.softmax((logits + noise) * (1.0 / tau), axis=-1)


def gumbel_softmax(delta, tau: float, gumbel_noise) -> Tensor:
    """The relaxed binary edge value (second softmax coordinate)."""
    pair = gumbel_softmax_pair(delta, tau, gumbel_noise)
    return pair[..., 1]


def _beta_logpdf(z, a, b):
    return ((a - 1.0) * np.log(z) + (b - 1.0) * np.log1p(-z)
            - _sp.betaln(a, b))


def _beta_cdf_param_grads(z, a, b):
    """d/d(alpha), d/d(beta) of the Beta CDF at z by adaptive central differences."""
    ha = 6e-6 * np.maximum(a, 1.0)
    hb = 6e-6 * np.maximum(b, 1.0)
    dFda = (_sp.betainc(a + ha, b, z) - _sp.betainc(a - ha, b, z)) / (2.0 * ha)
    dFdb = (_sp.betainc(a, b + hb, z) - _sp.betainc(a, b - hb, z)) / (2.0 * hb)
    return dFda, dFdb


def beta_implicit_sample(alpha, beta, rng: np.random.Generator | None = None,
                         uniform=None) -> Tensor:
    """Sample z ~ Beta(alpha, beta) with implicit gradient pathways.

    By default the sample is the ratio of two Gamma variates (shapes alpha and
    beta). Passing ``uniform`` instead inverts the Beta CDF at the supplied
    uniforms, which makes the draw a smooth deterministic function of the
    parameters (used by finite-difference checks). Either way, gradients follow
    dz/dtheta = -(dF(z; theta)/dtheta) / pdf(z; theta).
    """
    alpha, beta = astensor(alpha), astensor(beta)
    a = alpha.data
    b = beta.data
    if np.min(a) <= 0 or np.min(b) <= 0:
        raise ConfigurationError("beta_implicit_sample: shapes must be positive")
    if uniform is not None:
        u = np.clip(np.asarray(uniform, dtype=np.float64), 1e-12, 1.0 - 1e-12)
        z = _sp.betaincinv(a, b, u)
    else:
        if rng is None:
            raise ConfigurationError("beta_implicit_sample: provide rng or uniform")
        ga = rng.gamma(shape=a)
        gb = rng.gamma(shape=b)
        z = ga / (ga + gb)
    z = np.clip(z, 1e-12, 1.0 - 1e-12)

    dFda, dFdb = _beta_cdf_param_grads(z, a, b)
    pdf = np.exp(_beta_logpdf(z, a, b))
    pdf = np.maximum(pdf, 1e-300)
    dz_da = -dFda / pdf
    dz_db = -dFdb / pdf

    def vjp(g):
        return (T._unbroadcast(g * dz_da, a.shape),
                T._unbroadcast(g * dz_db, b.shape))

    return T.custom_op(z, (alpha, beta), vjp, "beta_sample")


# -- KL divergences ---------------------------------------------------------------

def kl_gaussian(q: EdgeGaussian, p: EdgeGaussian) -> Tensor:
    ratio = q.var / p.var
    return 0.5 * (ratio + T.square(q.mu - p.mu) / p.var - 1.0 - T.log(ratio))


def kl_bernoulli(q: EdgeBernoulli, p: EdgeBernoulli) -> Tensor:
    dq = T.clamp(q.delta, PROB_EPS, 1.0 - PROB_EPS)
    dp = T.clamp(p.delta, PROB_EPS, 1.0 - PROB_EPS)
    return (dq * (T.log(dq) - T.log(dp))
            + (1.0 - dq) * (T.log(1.0 - dq) - T.log(1.0 - dp)))


def _log_beta_fn(a, b):
    return T.gammaln(a) + T.gammaln(b) - T.gammaln(a + b)


def kl_beta(q: EdgeBeta, p: EdgeBeta) -> Tensor:
    a1, b1 = q.alpha, q.beta
    a2, b2 = p.alpha, p.beta
    return (_log_beta_fn(a2, b2) - _log_beta_fn(a1, b1)
            + (a1 - a2) * T.digamma(a1)
            + (b1 - b2) * T.digamma(b1)
            + (a2 - a1 + b2 - b1) * T.digamma(a1 + b1))


def kl_divergence(q, p) -> Tensor:
    """Entrywise KL(q || p) for matching distribution variants."""
    if isinstance(q, EdgeGaussian) and isinstance(p, EdgeGaussian):
        return kl_gaussian(q, p)
    if isinstance(q, EdgeBernoulli) and isinstance(p, EdgeBernoulli):
        return kl_bernoulli(q, p)
    if isinstance(q, EdgeBeta) and isinstance(p, EdgeBeta):
        return kl_beta(q, p)
    raise ContractViolation(
        f"kl_divergence: mismatched variants {type(q).__name__} vs {type(p).__name__}")


# -- conjugacy adjustment and prior merging ----------------------------------------

def conjugacy_adjust_gaussian(q: EdgeGaussian, p: EdgeGaussian,
                              omega: float) -> EdgeGaussian:
    """Precision-weighted merge of encoder (q) into decoder (p) parameters."""
    MixWeight(omega)
    prec_q = 1.0 / q.var
    prec_p = 1.0 / p.var
    denom = omega * prec_q + (1.0 - omega) * prec_p
    mu = (omega * q.mu * prec_q + (1.0 - omega) * p.mu * prec_p) / denom
    return EdgeGaussian(mu, 1.0 / denom)


def conjugacy_adjust_bernoulli(delta_q, delta_p, omega: float) -> EdgeBernoulli:
    """Weighted harmonic merge of encoder and decoder success probabilities."""
    MixWeight(omega)
    dq = astensor(delta_q.delta if isinstance(delta_q, EdgeBernoulli) else delta_q)
    dp = astensor(delta_p.delta if isinstance(delta_p, EdgeBernoulli) else delta_p)
    merged = 1.0 / (omega / dq + (1.0 - omega) / dp)
    return EdgeBernoulli(T.clamp(merged, PROB_EPS, 1.0 - PROB_EPS))


def merge_prior(q, prior):
    """Fold the edge prior into the encoded common-graph posterior.

    Gaussian: unweighted precision combination with the N(0, 1) prior.
    Beta: density product rule with the flat Beta(1, 1) prior (a no-op).
    """
    if isinstance(q, EdgeGaussian) and isinstance(prior, EdgeGaussian):
        prec = 1.0 / q.var + 1.0 / prior.var
        mu = (q.mu / q.var + prior.mu / prior.var) / prec
        return EdgeGaussian(mu, 1.0 / prec)
    if isinstance(q, EdgeBeta) and isinstance(prior, EdgeBeta):
        alpha = T.clamp_min(q.alpha + prior.alpha - 1.0, SHAPE_FLOOR)
        beta = T.clamp_min(q.beta + prior.beta - 1.0, SHAPE_FLOOR)
        return EdgeBeta(alpha, beta)
    raise ContractViolation(
        f"merge_prior: mismatched variants {type(q).__name__} vs {type(prior).__name__}")
