"""Paired (signal, decision) datasets and their on-disk format.

A dataset is written as a CSV with header ``s_1..s_K, x_1..x_n`` plus a
JSON sidecar (``<name>.json``) holding the metadata and, when available,
the serialized true-problem oracle.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class IODataset:
    signals: np.ndarray
    decisions: np.ndarray
    meta: dict = field(default_factory=dict)
    oracle: object = None

    def __post_init__(self):
        S = np.asarray(self.signals, dtype=float)
        X = np.asarray(self.decisions, dtype=float)
        if S.ndim == 1:
            S = S[:, None]
        if X.ndim == 1:
            X = X[:, None]
        if S.shape[0] != X.shape[0]:
            raise ValueError(f"{S.shape[0]} signals but {X.shape[0]} decisions")
        if not (np.all(np.isfinite(S)) and np.all(np.isfinite(X))):
            raise ValueError("dataset entries must be finite")
        object.__setattr__(self, "signals", S)
        object.__setattr__(self, "decisions", X)

    def __len__(self):
        return self.signals.shape[0]

    @property
    def N(self):
        return self.signals.shape[0]

    @property
    def K(self):
        return self.signals.shape[1]

    @property
    def n(self):
        return self.decisions.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx)
        if idx.dtype != bool:
            idx = idx.astype(np.intp)
        return replace(self, signals=self.signals[idx], decisions=self.decisions[idx])

    def with_decisions(self, X, **meta):
        m = dict(self.meta)
        m.update(meta)
        return replace(self, decisions=np.asarray(X, dtype=float), meta=m)

    # -- I/O -----------------------------------------------------------
    def save(self, path):
        path = Path(path)
        header = [f"s_{k + 1}" for k in range(self.K)] + [f"x_{j + 1}" for j in range(self.n)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for s, x in zip(self.signals, self.decisions):
                w.writerow([f"{v:.17g}" for v in np.concatenate([s, x])])
        side = {"meta": self.meta, "K": self.K, "n": self.n}
        if self.oracle is not None and hasattr(self.oracle, "to_dict"):
            side["oracle"] = self.oracle.to_dict()
        with open(path.with_suffix(".json"), "w") as fh:
            json.dump(side, fh, indent=2, default=_json_default)
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        K = sum(1 for h in header if h.startswith("s_"))
        arr = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, len(header)))
        meta, oracle = {}, None
        side = path.with_suffix(".json")
        if side.exists():
            with open(side) as fh:
                d = json.load(fh)
            meta = d.get("meta", {})
            if "oracle" in d:
                from .oracles import oracle_from_dict
                oracle = oracle_from_dict(d["oracle"])
        return cls(arr[:, :K], arr[:, K:], meta, oracle)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o)}")
