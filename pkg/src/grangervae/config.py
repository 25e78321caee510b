"""Experiment configuration: one flat, exhaustive record per run.

``DEFAULTS`` below is the documented defaults table. A user config file only
needs the keys it overrides; ``resolve`` merges it over the defaults and the
fully resolved dictionary is what gets echoed into ``resolved-config.json``,
so no run depends on silent defaults.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

from .errors import ConfigurationError

FAMILIES = ("linear_var", "nonlinear_var", "lotka_volterra", "lorenz96", "springs")

# Documented defaults for every configurable knob.
DEFAULTS: dict = {
    "family": "linear_var",
    "p": 10,                 # nodes per system
    "d": 1,                  # feature dimension per node (springs uses 4)
    "M": 5,                  # entities
    "T_long": 2019,          # length of each simulated long trajectory
    "T": 20,                 # window (context) length
    "stride": 1,             # window stride
    "q": 1,                  # lag order of the decoder
    "mode": "continuous",    # continuous | binary
    "omega": 0.5,            # entity-vs-common mixing weight
    "tau": 0.5,              # relaxation temperature, constant during training
    "n_hid": 64,
    "decoder_style": "node",  # node | edge
    "decoder_agg": "mlp",     # mlp | sum
    "embed_dim": 0,           # 0 = no numerical embedding in the decoder
    "dropout": 0.1,
    "optimizer": {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    "epochs": 100,
    "batch_groups": 32,       # training groups (one window per entity) per step
    "patience": 10,           # early stop after this many epochs without val gain
    "val_fraction": 0.1,
    "grad_clip": 5.0,
    "seed": 0,
    "replicates": 1,
    "single_entity": False,   # per-entity learning (the averaging comparator)
    "standardize": True,      # z-score each entity's long trajectory
    "edge_mask": None,        # optional CSV path of known-absent edges
    "family_params": {
        "linear_var": {"density": 0.1, "relocate_frac": 0.1, "rho": 0.5,
                       "burn_in": 200},
        "nonlinear_var": {"fix_rule": "every_third_row", "noise_var": 0.25,
                          "burn_in": 200},
        "lotka_volterra": {"alpha": 1.1, "beta_rate": 0.2, "gamma": 1.1,
                           "delta_rate": 0.2, "eta": 200.0, "dt": 0.01,
                           "record_every": 5, "extra_edges": 2,
                           "obs_noise_var": 0.01, "init_low": 10.0,
                           "init_high": 20.0, "burn_in": 200},
        "lorenz96": {"forcing": [10.0, 17.5, 25.0, 32.5, 40.0], "dt": 0.01,
                     "record_every": 2, "init_jitter_var": 0.01,
                     "burn_in": 200},
        "springs": {"k": 1.0, "dt": 0.001, "record_every": 100,
                    "box_half_width": 1.0, "velocity_norm": 0.5},
    },
}


@dataclass
class ExperimentConfig:
    family: str
    p: int
    d: int
    M: int
    T_long: int
    T: int
    stride: int
    q: int
    mode: str
    omega: float
    tau: float
    n_hid: int
    decoder_style: str
    decoder_agg: str
    embed_dim: int
    dropout: float
    optimizer: dict
    epochs: int
    batch_groups: int
    patience: int
    val_fraction: float
    grad_clip: float
    seed: int
    replicates: int
    single_entity: bool
    standardize: bool
    edge_mask: str | None
    family_params: dict = field(default_factory=dict)

    def validate(self) -> "ExperimentConfig":
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family!r}")
        if self.T > self.T_long:
            raise ConfigurationError("window length T must not exceed T_long")
        if self.q < 1 or self.T <= self.q:
            raise ConfigurationError("need q >= 1 and T > q")
        if self.stride < 1:
            raise ConfigurationError("stride must be >= 1")
        if self.mode not in ("continuous", "binary"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.family == "springs":
            if self.mode != "binary":
                raise ConfigurationError("springs datasets use binary mode")
            if self.d != 4:
                raise ConfigurationError("springs trajectories have d = 4")
        if self.family == "lotka_volterra" and self.p % 4 != 0:
            raise ConfigurationError(
                "lotka_volterra needs p divisible by 4 (2 preys + 2 predators per block)")
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigurationError("omega must lie in [0, 1]")
        if self.tau <= 0:
            raise ConfigurationError("tau must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigurationError("val_fraction must lie in [0, 1)")
        if self.replicates < 1 or self.M < 1:
            raise ConfigurationError("replicates and M must be >= 1")
        return self

    @property
    def params(self) -> dict:
        """Family-specific generator/simulator knobs."""
        return self.family_params.get(self.family, {})

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in out:
            raise ConfigurationError(f"unknown config key {key!r}")
        if isinstance(out[key], dict) and isinstance(val, dict):
            for k2, v2 in val.items():
                if k2 not in out[key]:
                    raise ConfigurationError(f"unknown config key {key}.{k2}")
                if isinstance(out[key][k2], dict) and isinstance(v2, dict):
                    unknown = set(v2) - set(out[key][k2])
                    if unknown:
                        raise ConfigurationError(
                            f"unknown config key {key}.{k2}.{sorted(unknown)[0]}")
                    out[key][k2].update(v2)
                else:
                    out[key][k2] = v2
        else:
            out[key] = val
    return out


def resolve(overrides: dict | None = None, seed: int | None = None) -> ExperimentConfig:
    """Merge user overrides onto the defaults and validate."""
    merged = _merge(DEFAULTS, overrides or {})
    if seed is not None:
        merged["seed"] = int(seed)
    cfg = ExperimentConfig(**merged)
    return cfg.validate()


def load(path, seed: int | None = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"config {path} must hold a JSON object")
    return resolve(data, seed=seed)
