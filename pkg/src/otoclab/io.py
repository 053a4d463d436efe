"""CSV/JSON persistence for ensembles, fits and bound tables.

Ensemble CSVs have the header ``time,mean_re,mean_im,stderr`` and floats with
17 significant digits, so values round-trip bit-exactly. Each CSV has a JSON
sidecar with the same stem carrying kind, beta, seeds and model parameters.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .analysis import FitResult
from .correlators import EnsembleResult

CSV_HEADER = ("time", "mean_re", "mean_im", "stderr")


def fmt(x):
    return f"{float(x):.17g}"


def ensemble_filename(kind, beta):
    return f"{kind}_beta{beta:g}.csv"


def dumps_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_ensemble(result, path):
    path = Path(path)
    mean = np.asarray(result.mean, dtype=np.complex128)
    rows = [",".join(CSV_HEADER)]
    for t, m, s in zip(result.times, mean, result.stderr):
        rows.append(",".join((fmt(t), fmt(m.real), fmt(m.imag), fmt(s))))
    path.write_text("\n".join(rows) + "\n")
    sidecar = {
        "kind": result.kind,
        "beta": result.beta,
        "n_realizations": result.n_realizations,
        "base_seed": result.base_seed,
        "seeds": [result.base_seed, result.base_seed + result.n_realizations - 1],
        "params": result.params,
        "grid": {"points": len(result.times), "t_min": float(result.times[0]),
                 "t_max": float(result.times[-1])},
        "units": {"time": "1/J", "beta": "1/J"},
        "columns": list(CSV_HEADER),
    }
    path.with_suffix(".json").write_text(dumps_json(sidecar))
    return path


def read_ensemble(path):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        data = np.array([[float(x) for x in row] for row in reader if row])
    meta_path = path.with_suffix(".json")
    if not meta_path.exists():
        raise FileNotFoundError(f"missing sidecar {meta_path}")
    meta = json.loads(meta_path.read_text())
    return EnsembleResult(
        times=data[:, 0],
        mean=data[:, 1] + 1j * data[:, 2],
        stderr=data[:, 3],
        n_realizations=int(meta["n_realizations"]),
        kind=meta["kind"],
        beta=float(meta["beta"]),
        base_seed=int(meta["base_seed"]),
        params=meta.get("params", {}),
    )


def write_fit(fit, path):
    Path(path).write_text(fit.to_json() + "\n")


def read_fit(path):
    return FitResult.from_json(Path(path).read_text())


def write_bound_report(report, directory):
    directory = Path(directory)
    (directory / "bound_report.json").write_text(report.to_json() + "\n")
    (directory / "bound.csv").write_text(report.to_csv())
