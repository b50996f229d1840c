"""Combining per-state-variable probability vectors."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hsfp.errors import DataError
from hsfp.flexprob import check_probabilities, effective_scenarios

__all__ = ["EnsembleWeights", "combine_eq", "bhattacharyya", "hellinger", "combine_dcc", "combine"]


@dataclass
class EnsembleWeights:
    weights: np.ndarray
    method: str
    ens: np.ndarray | None = None
    diversity: np.ndarray | None = None
    names: list[str] | None = None
    fallback: bool = False
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        names = self.names or [f"q{i}" for i in range(len(self.weights))]
        out = {"method": self.method, "fallback": self.fallback, "variables": {}}
        for i, name in enumerate(names):
            row = {"weight": float(self.weights[i])}
            if self.ens is not None:
                row["effective_scenarios"] = float(self.ens[i])
            if self.diversity is not None:
                row["diversity"] = float(self.diversity[i])
            out["variables"][name] = row
        return out

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _stack(ps) -> np.ndarray:
    if len(ps) == 0:
        raise DataError("need at least one probability vector")
    lengths = {len(p) for p in ps}
    if len(lengths) != 1:
        raise DataError(f"probability vectors differ in length: {sorted(lengths)}")
    return np.vstack([check_probabilities(p) for p in ps])


def combine_eq(ps, names=None) -> tuple[np.ndarray, EnsembleWeights]:
    P = _stack(ps)
    w = np.full(P.shape[0], 1.0 / P.shape[0])
    return w @ P, EnsembleWeights(w, "EQ", names=names)


def bhattacharyya(p, r) -> float:
    p, r = np.asarray(p, dtype=float), np.asarray(r, dtype=float)
    if p.shape != r.shape:
        raise DataError("vectors differ in length")
    return float(np.sum(np.sqrt(p * r)))


def hellinger(p, r) -> float:
    # 1 - BC == sum (sqrt p - sqrt r)^2 / 2 for normalised p, r; this form is exact at p == r
    p, r = np.asarray(p, dtype=float), np.asarray(r, dtype=float)
    if p.shape != r.shape:
        raise DataError("vectors differ in length")
    one_minus_bc = 0.5 * float(np.sum((np.sqrt(p) - np.sqrt(r)) ** 2))
    return float(np.sqrt(min(max(one_minus_bc, 0.0), 1.0)))


def combine_dcc(ps, names=None) -> tuple[np.ndarray, EnsembleWeights]:
    """Weight each vector by its effective number of scenarios times its mean Hellinger distance to the rest."""
    P = _stack(ps)
    q = P.shape[0]
    if q < 2:
        raise DataError("DCC combination needs at least two vectors")
    ens = np.array([effective_scenarios(p) for p in P])
    dist = np.zeros((q, q))
    for i in range(q):
        for j in range(i + 1, q):
            dist[i, j] = dist[j, i] = hellinger(P[i], P[j])
    diversity = dist.sum(axis=1) / (q - 1)
    score = ens * diversity
    total = score.sum()
    if total <= 0:
        w = np.full(q, 1.0 / q)
        info = EnsembleWeights(w, "DCC", ens, diversity, names, fallback=True,
                               flags=["zero-diversity: fell back to equal weights"])
        return w @ P, info
    w = score / total
    return w @ P, EnsembleWeights(w, "DCC", ens, diversity, names)


def combine(ps, method: str = "DCC", names=None) -> tuple[np.ndarray, EnsembleWeights]:
    """Dispatch on ``method``; a single vector passes through unchanged."""
    method = method.upper()
    if method not in ("EQ", "DCC"):
        raise DataError(f"unknown combination method {method!r}")
    if len(ps) == 1:
        p = check_probabilities(ps[0])
        return p.copy(), EnsembleWeights(np.ones(1), method, names=names)
    return combine_eq(ps, names) if method == "EQ" else combine_dcc(ps, names)
