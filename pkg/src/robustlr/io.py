"""CSV and JSON persistence for datasets, instances and reports."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import IoError, RobustLRError
from .model import Dataset, RegressionInstance, SpikedCovariance


def write_dataset_csv(dataset: Dataset, path, include_mask: bool | None = None) -> None:
    """Header ``x_0,...,x_{d-1},y[,is_outlier]``, 17 significant digits, LF endings."""
    if include_mask is None:
        include_mask = dataset.outlier_mask is not None
    d = dataset.d
    header = [f"x_{j}" for j in range(d)] + ["y"]
    cols = [dataset.X, dataset.y[:, None]]
    fmt = ["%.17g"] * (d + 1)
    if include_mask:
        mask = dataset.outlier_mask if dataset.outlier_mask is not None else np.zeros(dataset.n, dtype=bool)
        header.append("is_outlier")
        cols.append(mask.astype(float)[:, None])
        fmt.append("%d")
    table = np.hstack(cols)
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            np.savetxt(fh, table, fmt=fmt, delimiter=",")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_dataset_csv(path) -> Dataset:
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            body = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise IoError(f"malformed dataset file {path}: {exc}") from exc
    if "y" not in header:
        raise IoError(f"{path}: header has no y column")
    has_mask = header[-1] == "is_outlier"
    d = header.index("y")
    if header[:d] != [f"x_{j}" for j in range(d)]:
        raise IoError(f"{path}: unexpected header {header}")
    if body.size == 0:
        raise IoError(f"{path}: no data rows")
    if body.shape[1] != len(header):
        raise IoError(f"{path}: rows have {body.shape[1]} fields, header has {len(header)}")
    mask = body[:, -1].astype(bool) if has_mask else None
    try:
        return Dataset(body[:, :d], body[:, d], mask)
    except RobustLRError as exc:
        raise IoError(f"{path}: {exc}") from exc


def write_json(obj, path) -> None:
    try:
        with open(path, "w", newline="\n") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoError(f"malformed JSON in {path}: {exc}") from exc


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def instance_to_dict(inst: RegressionInstance) -> dict:
    out = {
        "beta": inst.beta.tolist(),
        "sigma": inst.sigma,
        "epsilon": inst.epsilon,
        "tau": inst.tau,
        "seed": inst.seed,
        "covariance_kind": inst.covariance_kind,
    }
    if isinstance(inst.covariance, SpikedCovariance):
        out["spike_v"] = np.asarray(inst.covariance.v, dtype=float).tolist()
        out["spike_c2"] = inst.covariance.c2
    elif inst.covariance_kind == "explicit":
        out["covariance"] = np.asarray(inst.covariance).tolist()
    return out


def instance_from_dict(obj: dict) -> RegressionInstance:
    kind = obj.get("covariance_kind", "identity")
    if kind == "identity":
        cov = "identity"
    elif kind == "diagonal-spiked":
        cov = SpikedCovariance(np.asarray(obj["spike_v"], dtype=float), float(obj["spike_c2"]))
    else:
        cov = np.asarray(obj["covariance"], dtype=float)
    return RegressionInstance(
        beta=np.asarray(obj["beta"], dtype=float),
        sigma=float(obj["sigma"]),
        covariance=cov,
        epsilon=float(obj.get("epsilon", 0.0)),
        tau=float(obj.get("tau", 0.1)),
        seed=int(obj.get("seed", 0)),
    )
