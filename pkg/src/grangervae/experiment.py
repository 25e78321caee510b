"""Experiment orchestration: the generate / train / infer / eval pipeline.

Each step is a plain function over directories so it can be driven by the
command-line interface, the test suite, or a script. The whole pipeline is
byte-reproducible from (config, seed).
"""

from __future__ import annotations

import os

import numpy as np

from . import dataio, metrics
from .config import ExperimentConfig
from .errors import ConfigurationError
from .graphgen import (
    TruthSet, gen_linear_var, gen_lorenz96, gen_lv, gen_nonlinear_var,
    gen_springs,
)
from .systems import (
    LVParams, SpringsParams, sim_linear_var, sim_lorenz96, sim_lv,
    sim_nonlinear_var, sim_springs,
)
from .tensor import load_checkpoint, save_checkpoint
from .training import Dataset, TrainResult, build_model, infer_graphs, train

__all__ = [
    "generate_truth", "simulate_entity", "build_dataset",
    "run_generate", "run_train", "run_infer", "run_eval", "evaluate_graphs",
]


def generate_truth(cfg: ExperimentConfig, rng: np.random.Generator) -> TruthSet:
    fam = cfg.family
    fp = cfg.params
    if fam == "linear_var":
        return gen_linear_var(cfg.p, cfg.M, density=fp["density"],
                              relocate_frac=fp["relocate_frac"],
                              rho=fp["rho"], rng=rng)
    if fam == "nonlinear_var":
        return gen_nonlinear_var(cfg.p, cfg.M, fix_rule=fp["fix_rule"], rng=rng)
    if fam == "lotka_volterra":
        return gen_lv(cfg.p, cfg.M, extra_edges=fp["extra_edges"], rng=rng)
    if fam == "lorenz96":
        forcing = fp["forcing"]
        if len(forcing) != cfg.M:
            raise ConfigurationError(
                f"lorenz96 needs one forcing value per entity "
                f"({cfg.M} entities, {len(forcing)} values)")
        return gen_lorenz96(cfg.p, forcing)
    if fam == "springs":
        return gen_springs(cfg.p, cfg.M, rng=rng)
    raise ConfigurationError(f"unknown family {fam!r}")


def simulate_entity(cfg: ExperimentConfig, truth: TruthSet, m: int,
                    rng: np.random.Generator) -> np.ndarray:
    fam = cfg.family
    fp = cfg.params
    z = truth.entities[m]
    if fam == "linear_var":
        return sim_linear_var(z, cfg.T_long, rng, burn_in=fp["burn_in"])
    if fam == "nonlinear_var":
        return sim_nonlinear_var(z, cfg.T_long, rng,
                                 noise_var=fp["noise_var"],
                                 burn_in=fp["burn_in"])
    if fam == "lotka_volterra":
        params = LVParams(alpha=fp["alpha"], beta_rate=fp["beta_rate"],
                          gamma=fp["gamma"], delta_rate=fp["delta_rate"],
                          eta=fp["eta"], dt=fp["dt"],
                          record_every=fp["record_every"])
        return sim_lv(z, params, cfg.T_long, rng,
                      obs_noise_var=fp["obs_noise_var"],
                      init_low=fp["init_low"], init_high=fp["init_high"],
                      burn_in=fp["burn_in"])
    if fam == "lorenz96":
        return sim_lorenz96(cfg.p, truth.meta["forcing"][m], fp["dt"],
                            cfg.T_long, rng, record_every=fp["record_every"],
                            init_jitter_var=fp["init_jitter_var"],
                            burn_in=fp["burn_in"])
    if fam == "springs":
        params = SpringsParams(k=fp["k"], dt=fp["dt"],
                               record_every=fp["record_every"],
                               box_half_width=fp["box_half_width"],
                               velocity_norm=fp["velocity_norm"])
        return sim_springs(z, params, cfg.T_long, rng)
    raise ConfigurationError(f"unknown family {fam!r}")


def build_dataset(cfg: ExperimentConfig) -> tuple[Dataset, TruthSet]:
    """Generate truth plus one long trajectory per entity, in memory."""
    cfg.validate()
    ss = np.random.SeedSequence(cfg.seed)
    truth_seed, *entity_seeds = ss.spawn(1 + cfg.M)
    truth = generate_truth(cfg, np.random.default_rng(truth_seed))
    series = [simulate_entity(cfg, truth, m, np.random.default_rng(entity_seeds[m]))
              for m in range(cfg.M)]
    return Dataset(series), truth


def run_generate(cfg: ExperimentConfig, out_dir) -> None:
    dataset, truth = build_dataset(cfg)
    dataio.write_dataset(out_dir, dataset.series, truth, cfg.to_dict(), cfg.seed)


def _check_manifest_dims(cfg: ExperimentConfig, manifest: dict) -> None:
    for key in ("p", "d", "M"):
        if manifest[key] != getattr(cfg, key):
            raise ConfigurationError(
                f"dataset {key}={manifest[key]} does not match config "
                f"{key}={getattr(cfg, key)}")


def run_train(cfg: ExperimentConfig, data_dir, out_dir,
              progress=None) -> TrainResult:
    dataset, manifest = dataio.load_dataset(data_dir)
    _check_manifest_dims(cfg, manifest)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved-config.json"), "w") as fh:
        fh.write(cfg.to_json())
        fh.write("\n")
    try:
        result = train(cfg, dataset, progress=progress)
    except Exception as exc:
        partial = getattr(exc, "result", None)
        if partial is not None:
            save_checkpoint(os.path.join(out_dir, "model.bin"),
                            partial.model.params)
            dataio.write_loss_csv(os.path.join(out_dir, "loss.csv"),
                                  partial.loss_log)
        raise
    save_checkpoint(os.path.join(out_dir, "model.bin"), result.model.params)
    dataio.write_loss_csv(os.path.join(out_dir, "loss.csv"), result.loss_log)
    return result


def _load_model_for(cfg: ExperimentConfig, checkpoint_path):
    model = build_model(cfg)
    model.params.load(load_checkpoint(checkpoint_path))
    model.eval()
    return model


def run_infer(checkpoint_path, data_dir, out_dir,
              cfg: ExperimentConfig | None = None):
    if cfg is None:
        sibling = os.path.join(os.path.dirname(checkpoint_path) or ".",
                               "resolved-config.json")
        from .config import load as load_config
        cfg = load_config(sibling)
    dataset, manifest = dataio.load_dataset(data_dir)
    _check_manifest_dims(cfg, manifest)
    model = _load_model_for(cfg, checkpoint_path)
    result = infer_graphs(model, dataset, cfg)
    os.makedirs(out_dir, exist_ok=True)
    dataio.write_graph_csv(os.path.join(out_dir, "common_est.csv"), result.common)
    for m in range(dataset.M):
        dataio.write_graph_csv(os.path.join(out_dir, f"entity_{m}_est.csv"),
                               result.entities[m])
    return result


def evaluate_graphs(common_est: np.ndarray, entity_ests: list,
                    common_truth: np.ndarray, entity_truths: list,
                    binary_mode: bool = False) -> dict:
    """Metrics payload: common and per-entity reports (with and without the
    diagonal), entity macro-averages, sweeps, and sign agreement."""
    if common_est.shape != common_truth.shape:
        raise ConfigurationError(
            f"estimate shape {common_est.shape} != truth {common_truth.shape}")

    def full_report(est, truth):
        out = {}
        for tag, include in (("including_diagonal", True),
                             ("excluding_diagonal", False)):
            rep = metrics.score_graph(est, truth, include_diagonal=include)
            out[tag] = rep.to_dict()
        out["sign_agreement"] = metrics.sign_agreement(est, truth)
        if binary_mode:
            norm, _ = metrics.normalize_graph(est)
            pred = np.abs(norm) >= 0.5
            lab = np.abs(truth) > 1e-12
            off = ~np.eye(truth.shape[0], dtype=bool)
            out["acc_at_half"] = float(np.mean(pred == lab))
            out["acc_at_half_offdiag"] = float(np.mean(pred[off] == lab[off]))
        return out

    payload = {"common": full_report(common_est, common_truth)}
    if binary_mode:
        diff = common_est - common_truth
        off = ~np.eye(common_truth.shape[0], dtype=bool)
        payload["common"]["frobenius_error"] = float(np.linalg.norm(diff))
        payload["common"]["frobenius_error_offdiag"] = float(
            np.linalg.norm(diff[off]))

    payload["entities"] = [full_report(est, tru)
                           for est, tru in zip(entity_ests, entity_truths)]
    macro = {}
    for tag in ("including_diagonal", "excluding_diagonal"):
        for key in ("auroc", "auprc", "f1_best"):
            vals = [e[tag][key] for e in payload["entities"]]
            macro.setdefault(tag, {})[key] = float(np.mean(vals))
    if binary_mode:
        macro["acc_at_half"] = float(np.mean(
            [e["acc_at_half"] for e in payload["entities"]]))
        macro["acc_at_half_offdiag"] = float(np.mean(
            [e["acc_at_half_offdiag"] for e in payload["entities"]]))
    payload["entity_macro"] = macro
    return payload


def run_eval(est_dir, truth_dir, out_path) -> dict:
    common_truth, entity_truths = dataio.load_truth(truth_dir)
    manifest = dataio.read_manifest(truth_dir)
    binary = manifest["truth"]["mode"] == "binary"
    common_est = dataio.read_graph_csv(os.path.join(est_dir, "common_est.csv"))
    entity_ests = []
    for m in range(manifest["M"]):
        path = os.path.join(est_dir, f"entity_{m}_est.csv")
        if not os.path.exists(path):
            raise ConfigurationError(f"missing estimate file {path}")
        entity_ests.append(dataio.read_graph_csv(path))
    payload = evaluate_graphs(common_est, entity_ests, common_truth,
                              entity_truths, binary_mode=binary)
    dataio.write_metrics_json(out_path, payload)
    sweep_rows = [(r["threshold"], r["tpr"], r["tnr"], r["acc"])
                  for r in payload["common"]["excluding_diagonal"]["sweep"]]
    base, _ = os.path.splitext(out_path)
    dataio.write_sweep_csv(base + "_sweep.csv", sweep_rows)
    return payload
