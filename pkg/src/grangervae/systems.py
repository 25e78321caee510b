"""Trajectory simulation for the five dynamical-system families.

VAR families iterate their recursions directly; the ODE families
(Lotka-Volterra, Lorenz96) integrate with classic RK4 at a fine step and
record every k-th state; springs use symplectic leapfrog. Every simulator is
a deterministic function of (parameters, rng) and guards against blow-up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SimulationError
from .graphgen import nonlinear_parent_sets

__all__ = [
    "LVParams", "SpringsParams", "rk4_step",
    "sim_linear_var", "sim_nonlinear_var", "sim_lv", "sim_lorenz96",
    "sim_springs", "lv_canonical", "validate_lv", "lorenz96_deriv",
    "springs_energy", "springs_momentum",
]

BLOWUP_LIMIT = 1e6


@dataclass
class LVParams:
    alpha: float = 1.1
    beta_rate: float = 0.2
    gamma: float = 1.1
    delta_rate: float = 0.2
    eta: float = 200.0
    dt: float = 0.01
    record_every: int = 5

    def __post_init__(self):
        vals = (self.alpha, self.beta_rate, self.gamma, self.delta_rate,
                self.eta, self.dt)
        if any(v <= 0 for v in vals) or self.record_every < 1:
            raise ConfigurationError("LVParams: all parameters must be positive")


@dataclass
class SpringsParams:
    k: float = 1.0
    dt: float = 0.001
    record_every: int = 100
    box_half_width: float = 1.0
    velocity_norm: float = 0.5

    def __post_init__(self):
        if self.k <= 0 or self.dt <= 0 or self.record_every < 1:
            raise ConfigurationError("SpringsParams: k, dt must be positive")


def rk4_step(f, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _guard(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP_LIMIT:
        raise SimulationError(
            f"{what} blew up (non-finite or > {BLOWUP_LIMIT:g}); try a smaller dt")


# -- VAR families -------------------------------------------------------------------

def sim_linear_var(a: np.ndarray, t_long: int,
                   rng: np.random.Generator | None = None,
                   noise_scale: float = 1.0, burn_in: int = 200) -> np.ndarray:
    """x_t = A x_{t-1} + eps_t with standard Gaussian noise; returns [T, p, 1]."""
    a = np.asarray(a, dtype=np.float64)
    p = a.shape[0]
    radius = float(np.max(np.abs(np.linalg.eigvals(a))))
    if radius >= 1.0:
        raise ConfigurationError(
            f"sim_linear_var: spectral radius {radius:.4f} >= 1, system unstable")
    rng = rng or np.random.default_rng(0)
    x = rng.standard_normal(p)
    out = np.empty((t_long, p))
    for t in range(-burn_in, t_long):
        x = a @ x + noise_scale * rng.standard_normal(p)
        if t >= 0:
            out[t] = x
    _guard(out, "linear VAR")
    return out[:, :, None]


def sim_nonlinear_var(z: np.ndarray, t_long: int,
                      rng: np.random.Generator | None = None,
                      noise_var: float = 0.25, burn_in: int = 200) -> np.ndarray:
    """Sinusoidally coupled recursion driven by the graph's parent sets."""
    z = np.asarray(z, dtype=np.float64)
    p = z.shape[0]
    parents = nonlinear_parent_sets(z)
    k1 = np.array([parents[i][0] for i in range(1, p - 1)])
    k3 = np.array([parents[i][2] for i in range(1, p - 1)])
    interior = np.arange(1, p - 1)
    rng = rng or np.random.default_rng(0)
    sd = np.sqrt(noise_var)
    x = rng.standard_normal(p)
    out = np.empty((t_long, p))
    for t in range(-burn_in, t_long):
        nxt = np.empty(p)
        nxt[0] = 0.4 * x[0] - 0.5 * x[1]
        nxt[p - 1] = 0.4 * x[p - 1] - 0.5 * x[p - 2]
        a, b = x[k1], x[k3]
        nxt[interior] = 0.25 * x[interior] + np.sin(a * b) + np.cos(a + b)
        x = nxt + sd * rng.standard_normal(p)
        if t >= 0:
            out[t] = x
    _guard(out, "nonlinear VAR")
    return out[:, :, None]


# -- Lotka-Volterra ------------------------------------------------------------------

def _lv_parent_sets(z: np.ndarray):
    p = z.shape[0]
    half = p // 2
    prey_parents = [np.flatnonzero(z[i, half:]) for i in range(half)]
    pred_parents = [np.flatnonzero(z[half + j, :half]) for j in range(half)]
    return prey_parents, pred_parents


def sim_lv(z: np.ndarray, params: LVParams, t_long: int,
           rng: np.random.Generator | None = None,
           obs_noise_var: float = 0.01, init_low: float = 10.0,
           init_high: float = 20.0, burn_in: int = 200) -> np.ndarray:
    """Multi-species predator-prey ODE (RK4) with small observation noise."""
    z = np.asarray(z, dtype=np.float64)
    p = z.shape[0]
    if p % 2 != 0:
        raise ConfigurationError("sim_lv needs an even number of nodes")
    half = p // 2
    prey_parents, pred_parents = _lv_parent_sets(z)
    prey_mat = np.zeros((half, half))      # prey i <- predators
    pred_mat = np.zeros((half, half))      # predator j <- preys
    for i, cols in enumerate(prey_parents):
        prey_mat[i, cols] = 1.0
    for j, cols in enumerate(pred_parents):
        pred_mat[j, cols] = 1.0
    al, be = params.alpha, params.beta_rate
    ga, de = params.gamma, params.delta_rate
    eta = params.eta

    def deriv(x):
        u, v = x[:half], x[half:]
        du = al * u - be * u * (prey_mat @ v) - al * (u / eta) ** 2
        dv = de * v * (pred_mat @ u) - ga * v
        return np.concatenate([du, dv])

    rng = rng or np.random.default_rng(0)
    x = rng.uniform(init_low, init_high, size=p)
    total = (burn_in + t_long) * params.record_every
    out = np.empty((t_long, p))
    rec = 0
    for step in range(total):
        x = rk4_step(deriv, x, params.dt)
        _guard(x, "Lotka-Volterra")
        if (step + 1) % params.record_every == 0:
            if rec >= burn_in:
                out[rec - burn_in] = x
            rec += 1
    if obs_noise_var > 0:
        out = out + np.sqrt(obs_noise_var) * rng.standard_normal(out.shape)
    return out[:, :, None]


def lv_canonical(z: np.ndarray, params: LVParams):
    """Interaction matrix A and growth vector r of the canonical form
    dx_i/dt = r_i x_i (1 + sum_j A_ij x_j)."""
    z = np.asarray(z, dtype=np.float64)
    p = z.shape[0]
    half = p // 2
    prey_parents, pred_parents = _lv_parent_sets(z)
    a = np.zeros((p, p))
    r = np.empty(p)
    for i in range(half):
        r[i] = params.alpha
        a[i, i] = -1.0 / params.eta ** 2
        for j in prey_parents[i]:
            a[i, half + j] = -params.beta_rate / params.alpha
    for j in range(half):
        r[half + j] = -params.gamma
        for i in pred_parents[j]:
            a[half + j, i] = -params.delta_rate / params.gamma
    return a, r


def validate_lv(a: np.ndarray, r: np.ndarray) -> dict:
    """Fixed point -A^{-1} r (when A is invertible) and the eigenvalue-based
    stability verdict: stable iff every |eigenvalue of A| < 1."""
    a = np.asarray(a, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigurationError("validate_lv: A must be square")
    eigs = np.linalg.eigvals(a)
    stable = bool(np.all(np.abs(eigs) < 1.0))
    if np.linalg.matrix_rank(a) < a.shape[0]:
        return {"fixed_point": None, "stable": stable, "singular": True,
                "eigenvalues": eigs}
    fixed = -np.linalg.solve(a, r)
    return {"fixed_point": fixed, "stable": stable, "singular": False,
            "eigenvalues": eigs}


# -- Lorenz96 ----------------------------------------------------------------------

def lorenz96_deriv(x: np.ndarray, forcing: float) -> np.ndarray:
    return (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1) - x + forcing


def sim_lorenz96(p: int, forcing: float, dt: float, t_long: int,
                 rng: np.random.Generator | None = None,
                 record_every: int = 2, init_jitter_var: float = 0.01,
                 burn_in: int = 200) -> np.ndarray:
    """Cyclic Lorenz96 integrated with RK4 from a jittered uniform state."""
    if p < 4:
        raise ConfigurationError("sim_lorenz96 needs p >= 4")
    rng = rng or np.random.default_rng(0)
    x = forcing + np.sqrt(init_jitter_var) * rng.standard_normal(p)
    out = np.empty((t_long, p))
    total = (burn_in + t_long) * record_every
    rec = 0
    for step in range(total):
        x = rk4_step(lambda s: lorenz96_deriv(s, forcing), x, dt)
        _guard(x, "Lorenz96")
        if (step + 1) % record_every == 0:
            if rec >= burn_in:
                out[rec - burn_in] = x
            rec += 1
    return out[:, :, None]


# -- springs -----------------------------------------------------------------------

def _spring_forces(pos: np.ndarray, adj: np.ndarray, k: float) -> np.ndarray:
    # F_i = -k * sum_j adj[i, j] (r_i - r_j)
    diff = pos[:, None, :] - pos[None, :, :]
    return -k * np.einsum("ij,ijc->ic", adj, diff)


def sim_springs(z: np.ndarray, params: SpringsParams, t_long: int,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Leapfrog integration of Hooke-coupled unit-mass particles in 2D.

    Each recorded sample is [vx, vy, x, y] per particle, so d = 4.
    """
    adj = np.asarray(z, dtype=np.float64)
    if not np.allclose(adj, adj.T):
        raise ConfigurationError("sim_springs: the spring graph must be symmetric")
    p = adj.shape[0]
    rng = rng or np.random.default_rng(0)
    pos = rng.uniform(-params.box_half_width, params.box_half_width, size=(p, 2))
    vel = rng.standard_normal((p, 2))
    norms = np.linalg.norm(vel, axis=1, keepdims=True)
    vel = params.velocity_norm * vel / np.maximum(norms, 1e-12)

    out = np.empty((t_long, p, 4))
    total = t_long * params.record_every
    half_dt = 0.5 * params.dt
    force = _spring_forces(pos, adj, params.k)
    rec = 0
    for step in range(total):
        vel = vel + half_dt * force
        pos = pos + params.dt * vel
        force = _spring_forces(pos, adj, params.k)
        vel = vel + half_dt * force
        _guard(pos, "springs")
        if (step + 1) % params.record_every == 0:
            out[rec, :, :2] = vel
            out[rec, :, 2:] = pos
            rec += 1
    return out


def springs_energy(pos: np.ndarray, vel: np.ndarray, adj: np.ndarray,
                   k: float) -> float:
    """Kinetic plus spring potential, each spring counted once."""
    kinetic = 0.5 * float(np.sum(vel * vel))
    diff = pos[:, None, :] - pos[None, :, :]
    sq = np.sum(diff * diff, axis=-1)
    potential = 0.25 * k * float(np.sum(adj * sq))  # each pair appears twice
    return kinetic + potential


def springs_momentum(vel: np.ndarray) -> np.ndarray:
    return vel.sum(axis=0)
