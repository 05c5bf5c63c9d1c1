"""Distance-weighted k-nearest-neighbour regression over design rows.

Two weightings are available. ``"inverse"`` (default) weights each of the
``k`` neighbours by ``1/d``. ``"literal"`` weights them by ``d`` itself,
which favours the farther neighbours; it is kept for comparison only.
Both are normalized to sum to one. A query closer than ``EXACT_MATCH_TOL``
to a stored row returns that row's target unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionMismatchError, InvalidArgumentError, InvalidKError, NonFiniteValueError

MODEL_FORMAT_VERSION = 1
EXACT_MATCH_TOL = 1e-12
K_GRID = (1, 2, 5, 10, 20, 40)
WEIGHTINGS = ("inverse", "literal")


@dataclass(frozen=True)
class Neighbor:
    row: int
    distance: float
    weight: float


@dataclass(frozen=True)
class KnnModel:
    X: np.ndarray
    Y: np.ndarray
    k: int
    weighting: str = "inverse"
    S: int = 1
    row_ids: tuple = ()

    def __post_init__(self):
        if self.X.shape[0] != self.Y.shape[0]:
            raise DimensionMismatchError(f"{self.X.shape[0]} rows but {self.Y.shape[0]} targets")
        if not (1 <= self.k <= self.X.shape[0]):
            raise InvalidKError(f"k={self.k} must be in [1, {self.X.shape[0]}]")
        if self.weighting not in WEIGHTINGS:
            raise InvalidArgumentError(f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def resolve(self, row: int):
        """Training-row label for a provenance entry."""
        return self.row_ids[row] if self.row_ids else row

    def distances(self, Q) -> np.ndarray:
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if Q.shape[1] != self.X.shape[1]:
            raise DimensionMismatchError(f"model expects rows of length {self.X.shape[1]}, got {Q.shape[1]}")
        if not np.all(np.isfinite(Q)):
            raise NonFiniteValueError("query contains non-finite values")
        return cdist(Q, self.X)

    def neighbors(self, x) -> list:
        """The ``k`` (row, distance, weight) triples used for a single query."""
        d = self.distances(x)[0]
        return _neighbors(d, self.k, self.weighting)

    def predict(self, X, k: int | None = None) -> np.ndarray:
        """Predict one row (1-D input) or a stack of rows.

        ``k`` may override the stored neighbour count, which lets a grid of
        ``k`` values reuse one fitted model.
        """
        single = np.ndim(X) == 1
        out = predict_from_distances(self.distances(X), self.Y, k or self.k, self.weighting)
        return out[0] if single else out

    def predict_with_provenance(self, x):
        nb = self.neighbors(x)
        return _combine(nb, self.Y), nb

    def to_json(self) -> str:
        return json.dumps(
            {
                "format_version": MODEL_FORMAT_VERSION,
                "kind": "knn",
                "k": self.k,
                "weighting": self.weighting,
                "S": self.S,
                "row_ids": list(self.row_ids),
                "X": self.X.tolist(),
                "Y": self.Y.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "KnnModel":
        d = json.loads(text)
        if d.get("kind") != "knn" or d.get("format_version") != MODEL_FORMAT_VERSION:
            raise InvalidArgumentError("not a version-1 KNN model")
        return cls(np.array(d["X"], dtype=float), np.array(d["Y"], dtype=float), int(d["k"]),
                   d["weighting"], int(d["S"]), tuple(d["row_ids"]))


def _neighbors(d: np.ndarray, k: int, weighting: str) -> list:
    order = np.argsort(d, kind="stable")[:k]  # ties resolved by ascending row index
    dk = d[order]
    if dk[0] <= EXACT_MATCH_TOL:
        w = np.zeros(k)
        w[0] = 1.0
    elif weighting == "inverse":
        w = (1.0 / dk) / np.sum(1.0 / dk)
    else:
        w = dk / np.sum(dk)
    return [Neighbor(int(i), float(di), float(wi)) for i, di, wi in zip(order, dk, w)]


def _combine(nb: list, Y: np.ndarray) -> np.ndarray:
    if nb[0].weight == 1.0 and nb[0].distance <= EXACT_MATCH_TOL:
        return Y[nb[0].row].copy()
    w = np.array([n.weight for n in nb])
    return w @ Y[[n.row for n in nb]]


def predict_from_distances(D: np.ndarray, Y: np.ndarray, k: int, weighting: str = "inverse") -> np.ndarray:
    """Weighted-average targets given a ``(queries, n)`` distance matrix."""
    if not (1 <= k <= Y.shape[0]):
        raise InvalidKError(f"k={k} must be in [1, {Y.shape[0]}]")
    return np.vstack([_combine(_neighbors(d, k, weighting), Y) for d in D])


def knn_fit(train, k: int, weighting: str = "inverse") -> KnnModel:
    """Store the training rows of a :class:`~grfkit.ser.DesignMatrices`."""
    row_ids = tuple("|".join(ids) for ids in train.step_ids)
    return KnnModel(np.array(train.A_imu, dtype=float), np.array(train.A_grf, dtype=float),
                    int(k), weighting, train.S, row_ids)


def knn_predict(model: KnnModel, x) -> np.ndarray:
    return model.predict(x)


def provenance_report(neighbors: list, model: KnnModel) -> str:
    return json.dumps(
        [{"row": n.row, "row_id": model.resolve(n.row), "distance": n.distance, "weight": n.weight}
         for n in neighbors]
    )
