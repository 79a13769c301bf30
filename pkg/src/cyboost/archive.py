"""Versioned JSON model archives.

Floats are written with Python's shortest round-trip repr, so loading an
archive restores every number bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .binning import FeatureSpec, binning_from_dict
from .engine import FORMAT_VERSION, FactorTable, Model
from .errors import ArchiveError

FORMAT_NAME = "cyboost-model"


def model_to_dict(model: Model) -> dict:
    return {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "mode": model.mode,
        "mu": model.mu,
        "features": [s.to_dict() for s in model.features],
        "binnings": {k: v.to_dict() for k, v in model.binnings.items()},
        "tables": [
            {
                "feature": t.feature,
                "link": t.link.tolist(),
                "response": t.values.tolist(),
                "sigma": t.sigma.tolist(),
                "count": t.count.tolist(),
                "labels": list(t.labels),
            }
            for t in model.tables
        ],
        "config": model.config,
        "history": model.history,
        "best_cycle": model.best_cycle,
    }


def model_from_dict(d: dict) -> Model:
    if d.get("format") != FORMAT_NAME:
        raise ArchiveError("not a cyboost model archive")
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise ArchiveError(
            f"archive format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    mode = d["mode"]
    tables = [
        FactorTable(
            feature=t["feature"],
            mode=mode,
            link=np.asarray(t["link"], dtype=float),
            sigma=np.asarray(t["sigma"], dtype=float),
            count=np.asarray(t["count"], dtype=np.int64),
            labels=list(t["labels"]),
        )
        for t in d["tables"]
    ]
    return Model(
        mode=mode,
        mu=float(d["mu"]),
        features=[FeatureSpec.from_dict(f) for f in d["features"]],
        binnings={k: binning_from_dict(v) for k, v in d["binnings"].items()},
        tables=tables,
        history=d["history"],
        config=d["config"],
        best_cycle=int(d["best_cycle"]),
    )


def save_model(model: Model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), allow_nan=False))


def load_model(path) -> Model:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"{path}: {exc}") from None
    return model_from_dict(d)
