"""Discretization of raw feature columns into integer bin indices.

Every feature owns ``n_bins`` regular bins numbered ``0 .. n_bins - 1`` plus
one reserved bin at index ``n_bins`` that receives missing values and
categorical levels never seen during fitting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import FitError, SchemaError, ShapeError

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"
EQUIDISTANT = "equidistant"
QUANTILE = "quantile"

RESERVED_LABEL = "<unseen>"


@dataclass(frozen=True)
class FeatureSpec:
    """Declaration of one model feature.

    A composed feature has ``components`` set (names of previously declared
    base features) and no ``kind`` of its own.
    """

    name: str
    kind: str | None = CATEGORICAL
    n_bins: int = 100
    strategy: str = EQUIDISTANT
    components: tuple[str, ...] = ()

    def __post_init__(self):
        if self.components:
            if not 2 <= len(self.components) <= 3:
                raise SchemaError(f"{self.name}: composed features need 2 or 3 components")
            object.__setattr__(self, "kind", None)
            object.__setattr__(self, "components", tuple(self.components))
            return
        if self.kind not in (CATEGORICAL, CONTINUOUS):
            raise SchemaError(f"{self.name}: unknown kind {self.kind!r}")
        if self.n_bins < 1:
            raise SchemaError(f"{self.name}: n_bins must be >= 1")
        if self.strategy not in (EQUIDISTANT, QUANTILE):
            raise SchemaError(f"{self.name}: unknown strategy {self.strategy!r}")

    @property
    def is_composed(self) -> bool:
        return bool(self.components)

    @classmethod
    def composed(cls, *components: str) -> "FeatureSpec":
        return cls(name="*".join(components), components=tuple(components))

    def to_dict(self) -> dict:
        if self.is_composed:
            return {"name": self.name, "components": list(self.components)}
        return {
            "name": self.name,
            "kind": self.kind,
            "n_bins": self.n_bins,
            "strategy": self.strategy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        if d.get("components"):
            return cls(name=d["name"], components=tuple(d["components"]))
        return cls(
            name=d["name"],
            kind=d["kind"],
            n_bins=int(d.get("n_bins", 100)),
            strategy=d.get("strategy", EQUIDISTANT),
        )


def validate_specs(specs: Sequence[FeatureSpec]) -> None:
    """Check name uniqueness and that composed features refer backwards."""
    seen: dict[str, FeatureSpec] = {}
    for spec in specs:
        if spec.name in seen:
            raise SchemaError(f"duplicate feature {spec.name!r}")
        for comp in spec.components:
            base = seen.get(comp)
            if base is None:
                raise SchemaError(
                    f"{spec.name}: component {comp!r} must be declared before it"
                )
            if base.is_composed:
                raise SchemaError(f"{spec.name}: component {comp!r} is itself composed")
        seen[spec.name] = spec


def _missing_mask(values: np.ndarray) -> np.ndarray:
    return np.asarray(pd.isna(values), dtype=bool)


@dataclass(frozen=True)
class CategoricalBinning:
    levels: tuple[str, ...]

    kind = CATEGORICAL

    @property
    def n_bins(self) -> int:
        return len(self.levels)

    @property
    def reserved(self) -> int:
        return len(self.levels)

    def apply(self, values) -> np.ndarray:
        values = np.asarray(values, dtype=object)
        missing = _missing_mask(values)
        out = np.full(len(values), self.reserved, dtype=np.int64)
        present = pd.Series(values[~missing], dtype=object).astype(str)
        codes = pd.Categorical(present, categories=list(self.levels)).codes
        out[~missing] = np.where(codes < 0, self.reserved, codes)
        return out

    def labels(self) -> list[str]:
        return list(self.levels) + [RESERVED_LABEL]

    def centers(self) -> np.ndarray:
        return np.arange(self.n_bins, dtype=float)

    def to_dict(self) -> dict:
        return {"type": CATEGORICAL, "levels": list(self.levels)}


@dataclass(frozen=True)
class ContinuousBinning:
    edges: tuple[float, ...]

    kind = CONTINUOUS

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1

    @property
    def reserved(self) -> int:
        return self.n_bins

    def apply(self, values) -> np.ndarray:
        x = np.asarray(values, dtype=float)
        missing = np.isnan(x)
        edges = np.asarray(self.edges)
        idx = np.searchsorted(edges, x, side="right") - 1
        idx = np.clip(idx, 0, self.n_bins - 1)
        idx[missing] = self.reserved
        return idx.astype(np.int64)

    def labels(self) -> list[str]:
        e = self.edges
        out = [f"[{e[k]:.6g}, {e[k + 1]:.6g})" for k in range(self.n_bins)]
        out[-1] = out[-1][:-1] + "]"
        return out + [RESERVED_LABEL]

    def centers(self) -> np.ndarray:
        e = np.asarray(self.edges)
        return 0.5 * (e[:-1] + e[1:])

    def to_dict(self) -> dict:
        return {"type": CONTINUOUS, "edges": list(self.edges)}


@dataclass(frozen=True)
class ComposedBinning:
    """Row-major product of 2 or 3 component binnings."""

    names: tuple[str, ...]
    parts: tuple[CategoricalBinning | ContinuousBinning, ...] = field(repr=False)

    kind = "composed"

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(p.n_bins for p in self.parts)

    @property
    def n_bins(self) -> int:
        return int(np.prod(self.shape))

    @property
    def reserved(self) -> int:
        return self.n_bins

    def apply_columns(self, columns: Sequence) -> np.ndarray:
        comps = [p.apply(col) for p, col in zip(self.parts, columns)]
        return compose_bins(comps, self.shape)

    def decompose(self, index) -> tuple:
        """Inverse of the row-major rule for a regular composed index."""
        return tuple(int(i) for i in np.unravel_index(int(index), self.shape))

    def labels(self) -> list[str]:
        comp_labels = [p.labels()[:-1] for p in self.parts]
        out = []
        for k in range(self.n_bins):
            idx = self.decompose(k)
            out.append(" x ".join(comp_labels[c][i] for c, i in enumerate(idx)))
        return out + [RESERVED_LABEL]

    def to_dict(self) -> dict:
        return {
            "type": "composed",
            "names": list(self.names),
            "parts": [p.to_dict() for p in self.parts],
        }


BinDefinition = CategoricalBinning | ContinuousBinning | ComposedBinning


def binning_from_dict(d: dict) -> BinDefinition:
    if d["type"] == CATEGORICAL:
        return CategoricalBinning(tuple(d["levels"]))
    if d["type"] == CONTINUOUS:
        return ContinuousBinning(tuple(float(e) for e in d["edges"]))
    return ComposedBinning(
        tuple(d["names"]), tuple(binning_from_dict(p) for p in d["parts"])
    )


def _quantile_edges(sorted_x: np.ndarray, n_bins: int) -> np.ndarray:
    # Linear-interpolation quantiles at k/n_bins with exact integer positions,
    # so an edge that should coincide with a data point does so bit-exactly.
    n = len(sorted_x)
    edges = np.empty(n_bins + 1)
    for k in range(n_bins + 1):
        lo, rem = divmod((n - 1) * k, n_bins)
        if rem == 0:
            edges[k] = sorted_x[lo]
        else:
            a, b = sorted_x[lo], sorted_x[lo + 1]
            edges[k] = a + (b - a) * (rem / n_bins)
    return edges


def fit_binning(values, spec: FeatureSpec) -> CategoricalBinning | ContinuousBinning:
    """Learn the bin definition of a base feature from its training column."""
    if spec.is_composed:
        raise FitError(f"{spec.name}: fit composed features via fit_composed")
    values = np.asarray(values, dtype=object if spec.kind == CATEGORICAL else float)
    if len(values) == 0:
        raise FitError(f"{spec.name}: empty column")

    if spec.kind == CATEGORICAL:
        present = values[~_missing_mask(values)]
        levels = pd.unique(pd.Series(present, dtype=object).astype(str))
        return CategoricalBinning(tuple(levels))

    x = values[~np.isnan(values)]
    if len(x) == 0:
        raise FitError(f"{spec.name}: column holds only missing values")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        return ContinuousBinning((lo, hi))
    if spec.strategy == EQUIDISTANT:
        edges = np.linspace(lo, hi, spec.n_bins + 1)
    else:
        edges = np.unique(_quantile_edges(np.sort(x), spec.n_bins))
    return ContinuousBinning(tuple(float(e) for e in edges))


def fit_composed(spec: FeatureSpec, parts: dict[str, BinDefinition]) -> ComposedBinning:
    try:
        comps = tuple(parts[c] for c in spec.components)
    except KeyError as exc:
        raise SchemaError(f"{spec.name}: unknown component {exc.args[0]!r}") from None
    return ComposedBinning(spec.components, comps)


def apply_binning(defn: BinDefinition, values) -> np.ndarray:
    """Map raw values to bin indices; total over all inputs.

    For a composed definition ``values`` is the sequence of component columns.
    """
    if isinstance(defn, ComposedBinning):
        return defn.apply_columns(values)
    return defn.apply(values)


def compose_bins(columns: Sequence, n_bins: Sequence[int]) -> np.ndarray:
    """Row-major combination of component index columns.

    A component sitting at its reserved index (``== n_bins[c]``) sends the
    row to the composed reserved index ``prod(n_bins)``.
    """
    cols = [np.asarray(c, dtype=np.int64) for c in columns]
    if len(cols) != len(n_bins):
        raise ShapeError("one bin count per component column is required")
    if len({len(c) for c in cols}) > 1:
        raise ShapeError("component columns differ in length")
    total = int(np.prod(n_bins))
    out = np.zeros(len(cols[0]), dtype=np.int64)
    reserved = np.zeros(len(cols[0]), dtype=bool)
    for col, n in zip(cols, n_bins):
        reserved |= col >= n
        out = out * n + col
    out[reserved] = total
    return out
