"""Dataset directory format, estimate CSVs, and log files.

A dataset directory holds ``manifest.json``, one ``entity_<m>.bin`` per
entity (little-endian float64, row-major [T_long, p, d]), and the truth
graphs as ``common.csv`` / ``entity_<m>.csv`` with 12 significant digits.
Everything written here is byte-deterministic given identical inputs.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import ConfigurationError
from .graphgen import TruthSet
from .training import Dataset

__all__ = [
    "MANIFEST_VERSION", "write_dataset", "read_manifest", "load_dataset",
    "load_truth", "write_graph_csv", "read_graph_csv", "write_loss_csv",
    "write_metrics_json", "write_sweep_csv",
]

MANIFEST_VERSION = 1
_CSV_FMT = "%.11e"  # 12 significant digits


def write_graph_csv(path, matrix: np.ndarray) -> None:
    np.savetxt(path, np.asarray(matrix, dtype=np.float64),
               delimiter=",", fmt=_CSV_FMT)


def read_graph_csv(path) -> np.ndarray:
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read graph CSV {path}: {exc}") from exc


def write_dataset(out_dir, series: list, truth: TruthSet, cfg_dict: dict,
                  seed: int) -> None:
    os.makedirs(out_dir, exist_ok=True)
    entities = []
    for m, arr in enumerate(series):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        fname = f"entity_{m}.bin"
        with open(os.path.join(out_dir, fname), "wb") as fh:
            fh.write(arr.tobytes())
        entities.append({"id": m, "file": fname, "length": int(arr.shape[0])})
        write_graph_csv(os.path.join(out_dir, f"entity_{m}.csv"),
                        truth.entities[m])
    write_graph_csv(os.path.join(out_dir, "common.csv"), truth.common)

    manifest = {
        "format_version": MANIFEST_VERSION,
        "family": cfg_dict["family"],
        "p": int(series[0].shape[1]),
        "d": int(series[0].shape[2]),
        "M": len(series),
        "dtype": "f64le",
        "entities": entities,
        "truth": {"common": "common.csv",
                  "entities": [f"entity_{m}.csv" for m in range(len(series))],
                  "mode": truth.mode},
        "config": cfg_dict,
        "seed": int(seed),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "generation.log"), "w") as fh:
        fh.write(f"family={cfg_dict['family']} seed={seed} "
                 f"M={len(series)} p={series[0].shape[1]} d={series[0].shape[2]} "
                 f"T_long={series[0].shape[0]}\n")


def read_manifest(data_dir) -> dict:
    path = os.path.join(data_dir, "manifest.json")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read manifest {path}: {exc}") from exc
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise ConfigurationError(
            f"manifest version {manifest.get('format_version')} unsupported")
    return manifest


def load_dataset(data_dir, validate: bool = True) -> tuple[Dataset, dict]:
    """Read a dataset directory; file sizes are checked before any compute."""
    manifest = read_manifest(data_dir)
    p, d = manifest["p"], manifest["d"]
    series = []
    for ent in manifest["entities"]:
        path = os.path.join(data_dir, ent["file"])
        expected = 8 * ent["length"] * p * d
        if validate:
            try:
                actual = os.path.getsize(path)
            except OSError as exc:
                raise ConfigurationError(f"missing data file {path}") from exc
            if actual != expected:
                raise ConfigurationError(
                    f"{path}: has {actual} bytes, manifest implies {expected}")
        raw = np.fromfile(path, dtype="<f8")
        series.append(raw.reshape(ent["length"], p, d))
    return Dataset(series), manifest


def load_truth(data_dir) -> tuple[np.ndarray, list]:
    manifest = read_manifest(data_dir)
    common = read_graph_csv(os.path.join(data_dir, manifest["truth"]["common"]))
    entities = [read_graph_csv(os.path.join(data_dir, f))
                for f in manifest["truth"]["entities"]]
    return common, entities


def write_loss_csv(path, rows: list) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,recon,kl_common,kl_entity,total\n")
        for row in rows:
            fh.write("%d,%s,%s,%s,%s\n" % (
                row["epoch"], _CSV_FMT % row["recon"],
                _CSV_FMT % row["kl_common"], _CSV_FMT % row["kl_entity"],
                _CSV_FMT % row["total"]))


def write_metrics_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_sweep_csv(path, sweep_rows: list) -> None:
    with open(path, "w") as fh:
        fh.write("threshold,tpr,tnr,acc\n")
        for (thr, tpr, tnr, acc) in sweep_rows:
            fh.write("%s,%s,%s,%s\n" % tuple(_CSV_FMT % v
                                             for v in (thr, tpr, tnr, acc)))
