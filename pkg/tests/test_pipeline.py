"""End-to-end pipeline: dataset format, CLI subcommands, byte determinism."""

import hashlib
import json
import os

import numpy as np
import pytest

from grangervae import dataio
from grangervae.cli import main
from grangervae.config import load as load_config
from grangervae.config import resolve
from grangervae.errors import ConfigurationError
from grangervae.experiment import build_dataset, run_eval, run_generate

TINY = {
    "family": "linear_var", "p": 5, "M": 3, "T_long": 69, "T": 10,
    "stride": 2, "q": 1, "epochs": 2, "batch_groups": 8, "n_hid": 8,
    "val_fraction": 0.2, "seed": 5,
    "family_params": {"linear_var": {"density": 0.25, "burn_in": 20}},
}


def write_cfg(tmp_path, overrides=None):
    cfg = dict(TINY)
    if overrides:
        cfg.update(overrides)
    path = os.path.join(tmp_path, "config.json")
    with open(path, "w") as fh:
        json.dump(cfg, fh)
    return path


def tree_hash(root):
    digest = hashlib.sha256()
    for dirpath, dirnames, filenames in sorted(os.walk(root)):
        dirnames.sort()
        for fname in sorted(filenames):
            full = os.path.join(dirpath, fname)
            digest.update(os.path.relpath(full, root).encode())
            with open(full, "rb") as fh:
                digest.update(fh.read())
    return digest.hexdigest()


# -- config ---------------------------------------------------------------------

def test_config_rejects_unknown_keys(tmp_path):
    path = os.path.join(tmp_path, "bad.json")
    with open(path, "w") as fh:
        json.dump({"no_such_option": 1}, fh)
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_config_seed_override(tmp_path):
    path = write_cfg(tmp_path)
    cfg = load_config(path, seed=42)
    assert cfg.seed == 42


def test_config_family_consistency():
    with pytest.raises(ConfigurationError):
        resolve({"family": "springs", "mode": "continuous", "d": 4})
    with pytest.raises(ConfigurationError):
        resolve({"family": "lotka_volterra", "p": 10})


# -- dataset directory -------------------------------------------------------------

def test_generate_writes_expected_layout(tmp_path):
    cfg = resolve(TINY)
    out = os.path.join(tmp_path, "data")
    run_generate(cfg, out)
    names = sorted(os.listdir(out))
    assert "manifest.json" in names
    assert "common.csv" in names
    for m in range(3):
        assert f"entity_{m}.bin" in names
        assert f"entity_{m}.csv" in names
        size = os.path.getsize(os.path.join(out, f"entity_{m}.bin"))
        assert size == 8 * 69 * 5 * 1
    manifest = dataio.read_manifest(out)
    assert manifest["d"] == 1 and manifest["p"] == 5 and manifest["M"] == 3


def test_generate_springs_manifest_d4(tmp_path):
    cfg = resolve({"family": "springs", "mode": "binary", "p": 3, "d": 4,
                   "M": 2, "T_long": 30, "T": 10, "seed": 1,
                   "family_params": {"springs": {"record_every": 10}}})
    out = os.path.join(tmp_path, "springs")
    run_generate(cfg, out)
    manifest = dataio.read_manifest(out)
    assert manifest["d"] == 4
    assert manifest["truth"]["mode"] == "binary"
    size = os.path.getsize(os.path.join(out, "entity_0.bin"))
    assert size == 8 * 30 * 3 * 4


def test_manifest_validation_rejects_truncated_file(tmp_path):
    cfg = resolve(TINY)
    out = os.path.join(tmp_path, "data")
    run_generate(cfg, out)
    path = os.path.join(out, "entity_1.bin")
    with open(path, "r+b") as fh:
        fh.truncate(100)
    with pytest.raises(ConfigurationError, match="bytes"):
        dataio.load_dataset(out)


def test_graph_csv_round_trip_precision(tmp_path):
    mat = np.random.default_rng(0).normal(size=(4, 4)) * 1e3
    path = os.path.join(tmp_path, "graph.csv")
    dataio.write_graph_csv(path, mat)
    back = dataio.read_graph_csv(path)
    assert np.allclose(back, mat, rtol=1e-11, atol=0)


def test_dataset_round_trip_bit_exact(tmp_path):
    cfg = resolve(TINY)
    dataset, truth = build_dataset(cfg)
    out = os.path.join(tmp_path, "data")
    dataio.write_dataset(out, dataset.series, truth, cfg.to_dict(), cfg.seed)
    loaded, manifest = dataio.load_dataset(out)
    for a, b in zip(dataset.series, loaded.series):
        assert np.array_equal(a, b)


# -- CLI subcommands ------------------------------------------------------------------

def test_cli_full_pipeline(tmp_path, capsys):
    cfg_path = write_cfg(tmp_path)
    data = os.path.join(tmp_path, "data")
    run = os.path.join(tmp_path, "run")
    est = os.path.join(tmp_path, "est")
    metrics_path = os.path.join(tmp_path, "metrics.json")

    assert main(["generate", "--config", cfg_path, "--out", data]) == 0
    assert main(["train", "--config", cfg_path, "--data", data,
                 "--out", run, "--quiet"]) == 0
    assert os.path.exists(os.path.join(run, "model.bin"))
    assert os.path.exists(os.path.join(run, "resolved-config.json"))
    loss_lines = open(os.path.join(run, "loss.csv")).read().strip().split("\n")
    assert loss_lines[0] == "epoch,recon,kl_common,kl_entity,total"
    assert len(loss_lines) == 1 + 2          # header + epochs run

    assert main(["infer", "--checkpoint", os.path.join(run, "model.bin"),
                 "--data", data, "--out", est]) == 0
    est_files = sorted(os.listdir(est))
    assert est_files == ["common_est.csv", "entity_0_est.csv",
                         "entity_1_est.csv", "entity_2_est.csv"]

    assert main(["eval", "--est", est, "--truth", data,
                 "--out", metrics_path]) == 0
    payload = json.loads(open(metrics_path).read())
    for key in ("auroc", "auprc", "f1_best"):
        assert key in payload["common"]["including_diagonal"]
    assert "entity_macro" in payload
    assert os.path.exists(os.path.join(tmp_path, "metrics_sweep.csv"))


def test_cli_eval_perfect_estimates(tmp_path):
    cfg_path = write_cfg(tmp_path)
    data = os.path.join(tmp_path, "data")
    est = os.path.join(tmp_path, "est")
    main(["generate", "--config", cfg_path, "--out", data])
    os.makedirs(est)
    common, entities = dataio.load_truth(data)
    dataio.write_graph_csv(os.path.join(est, "common_est.csv"), common)
    for m, z in enumerate(entities):
        dataio.write_graph_csv(os.path.join(est, f"entity_{m}_est.csv"), z)
    out = os.path.join(tmp_path, "m.json")
    assert main(["eval", "--est", est, "--truth", data, "--out", out]) == 0
    payload = json.loads(open(out).read())
    assert payload["common"]["including_diagonal"]["auroc"] == 1.0
    macro = payload["entity_macro"]["including_diagonal"]["auroc"]
    assert macro == pytest.approx(
        np.mean([e["including_diagonal"]["auroc"]
                 for e in payload["entities"]]))


def test_cli_error_exit_codes(tmp_path):
    missing = os.path.join(tmp_path, "nope.json")
    assert main(["generate", "--config", missing,
                 "--out", os.path.join(tmp_path, "x")]) == 2
    bad_cfg = write_cfg(tmp_path, {"family": "martian"})
    assert main(["generate", "--config", bad_cfg,
                 "--out", os.path.join(tmp_path, "y")]) == 2


def test_cli_dimension_mismatch_exit_2(tmp_path):
    cfg_path = write_cfg(tmp_path)
    data = os.path.join(tmp_path, "data")
    main(["generate", "--config", cfg_path, "--out", data])
    other = write_cfg(tmp_path, {"p": 6})
    os.rename(other, os.path.join(tmp_path, "config6.json"))
    assert main(["train", "--config", os.path.join(tmp_path, "config6.json"),
                 "--data", data, "--out", os.path.join(tmp_path, "r"),
                 "--quiet"]) == 2


def test_checkpoint_version_mismatch_exit_2(tmp_path):
    cfg_path = write_cfg(tmp_path)
    data = os.path.join(tmp_path, "data")
    run = os.path.join(tmp_path, "run")
    main(["generate", "--config", cfg_path, "--out", data])
    main(["train", "--config", cfg_path, "--data", data, "--out", run,
          "--quiet"])
    ckpt = os.path.join(run, "model.bin")
    blob = bytearray(open(ckpt, "rb").read())
    blob[0] = 9
    open(ckpt, "wb").write(bytes(blob))
    assert main(["infer", "--checkpoint", ckpt, "--data", data,
                 "--out", os.path.join(tmp_path, "est")]) == 2


def test_generate_same_seed_byte_identical(tmp_path):
    cfg_path = write_cfg(tmp_path)
    one = os.path.join(tmp_path, "d1")
    two = os.path.join(tmp_path, "d2")
    main(["generate", "--config", cfg_path, "--out", one])
    main(["generate", "--config", cfg_path, "--out", two])
    assert tree_hash(one) == tree_hash(two)


def test_full_pipeline_byte_determinism(tmp_path):
    cfg_path = write_cfg(tmp_path)
    hashes = []
    for tag in ("a", "b"):
        root = os.path.join(tmp_path, tag)
        data = os.path.join(root, "data")
        run = os.path.join(root, "run")
        est = os.path.join(root, "est")
        assert main(["generate", "--config", cfg_path, "--out", data]) == 0
        assert main(["train", "--config", cfg_path, "--data", data,
                     "--out", run, "--quiet"]) == 0
        assert main(["infer", "--checkpoint", os.path.join(run, "model.bin"),
                     "--data", data, "--out", est]) == 0
        assert main(["eval", "--est", est, "--truth", data,
                     "--out", os.path.join(root, "metrics.json")]) == 0
        hashes.append(tree_hash(root))
    assert hashes[0] == hashes[1]


def test_rerun_train_identical_checkpoint_bytes(tmp_path):
    cfg_path = write_cfg(tmp_path)
    data = os.path.join(tmp_path, "data")
    main(["generate", "--config", cfg_path, "--out", data])
    blobs = []
    for tag in ("r1", "r2"):
        run = os.path.join(tmp_path, tag)
        main(["train", "--config", cfg_path, "--data", data, "--out", run,
              "--quiet"])
        blobs.append(open(os.path.join(run, "model.bin"), "rb").read())
    assert blobs[0] == blobs[1]


def test_eval_shape_mismatch_exit_2(tmp_path):
    cfg_path = write_cfg(tmp_path)
    data = os.path.join(tmp_path, "data")
    est = os.path.join(tmp_path, "est")
    main(["generate", "--config", cfg_path, "--out", data])
    os.makedirs(est)
    dataio.write_graph_csv(os.path.join(est, "common_est.csv"), np.zeros((3, 3)))
    for m in range(3):
        dataio.write_graph_csv(os.path.join(est, f"entity_{m}_est.csv"),
                               np.zeros((3, 3)))
    assert main(["eval", "--est", est, "--truth", data,
                 "--out", os.path.join(tmp_path, "m.json")]) == 2
