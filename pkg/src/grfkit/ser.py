"""SVD Embedding Regression.

Each design row holds ``S`` consecutive steps of one measurement. Steps are
laid out one after another; within a step the IMU features (or the GRF
components ``x, y, z``) occupy contiguous 200-sample blocks. Both design
matrices are reduced to a rank-``r`` embedding by truncated SVD, an
elastic-net regression maps IMU embeddings to GRF embeddings component by
component, and the predicted embedding is mapped back through the GRF
singular values and right singular vectors.

No centering or scaling is applied before the SVD.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .errors import (
    ConvergenceError,
    DegenerateFitWarning,
    DimensionMismatchError,
    EmptyDesignError,
    IllConditionedEmbeddingError,
    InvalidArgumentError,
    InvalidRankError,
    NonFiniteValueError,
)
from .signal import GRF, STEP_LENGTH, SensorSet, grf_row, select_sensor_channels

MODEL_FORMAT_VERSION = 1
DEFAULT_RANK = 6
ENERGY_THRESHOLD = 0.95
SIGMA_FLOOR = 1e-12
CD_TOL = 1e-10
CD_MAX_SWEEPS = 100_000
POLISH_EVERY = 10
LANCZOS_MIN_ROWS = 300

S_GRID = (2, 3, 5, 6, 10, 12, 15, 20, 30, 60)
LAMBDA_GRID = (0.0,) + tuple(float(v) for v in np.logspace(-6, 0, 7))


@dataclass(frozen=True)
class DesignMatrices:
    """Batched IMU inputs and GRF targets.

    ``provenance[i]`` is ``(measurement_id, first_step, stop_step)`` for row
    ``i`` (positions within that measurement's step list) and ``step_ids[i]``
    the ids of its ``S`` steps.
    """

    A_imu: np.ndarray
    A_grf: np.ndarray
    S: int
    sensors: SensorSet
    provenance: tuple
    step_ids: tuple
    athlete_ids: tuple = ()

    @property
    def n_rows(self) -> int:
        return self.A_imu.shape[0]


def _group_by_measurement(steps):
    groups: dict[str, list] = {}
    for step in steps:
        groups.setdefault(step.measurement_id, []).append(step)
    return groups


def assemble_matrices(steps, S: int, sensors: SensorSet) -> DesignMatrices:
    """Stack non-overlapping runs of ``S`` steps into design rows.

    ``steps`` may be any iterable of :class:`~grfkit.signal.Step`; they are
    grouped by ``measurement_id`` in order of first appearance and must be in
    time order within each measurement. Remainder steps are dropped.
    """
    if int(S) != S or S < 1:
        raise InvalidArgumentError(f"S must be a positive integer, got {S}")
    S = int(S)
    sensors = SensorSet.parse(sensors) if isinstance(sensors, str) else sensors
    imu_rows, grf_rows, prov, ids, athletes = [], [], [], [], []
    for mid, group in _group_by_measurement(steps).items():
        for b in range(len(group) // S):
            batch = group[b * S:(b + 1) * S]
            imu_rows.append(np.concatenate([select_sensor_channels(s, sensors) for s in batch]))
            grf_rows.append(np.concatenate([grf_row(s) for s in batch]))
            prov.append((mid, b * S, (b + 1) * S))
            ids.append(tuple(s.step_id for s in batch))
            athletes.append(batch[0].athlete_id)
    if not imu_rows:
        raise EmptyDesignError(f"no measurement has at least S={S} steps")
    return DesignMatrices(
        np.vstack(imu_rows), np.vstack(grf_rows), S, sensors, tuple(prov), tuple(ids), tuple(athletes)
    )


def split_grf_row(row: np.ndarray, S: int) -> np.ndarray:
    """Undo the GRF row layout: ``(S*600,)`` -> ``(S, 200, 3)`` with x, y, z last."""
    row = np.asarray(row, dtype=float)
    if row.shape != (S * STEP_LENGTH * len(GRF),):
        raise DimensionMismatchError(f"expected a GRF row of length {S * STEP_LENGTH * 3}, got {row.shape}")
    return row.reshape(S, len(GRF), STEP_LENGTH).transpose(0, 2, 1)


# -- truncated SVD -----------------------------------------------------------


@dataclass(frozen=True)
class TruncatedSvd:
    """Leading ``rank`` singular triplets, singular values descending.

    ``V`` holds the right singular vectors as columns, so ``A ~ U @ diag(s) @ V.T``.
    """

    U: np.ndarray
    s: np.ndarray
    V: np.ndarray
    energy_fraction: float
    total_energy: float

    @property
    def rank(self) -> int:
        return self.s.size

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.s) @ self.V.T

    def embed(self, X: np.ndarray) -> np.ndarray:
        """``X V diag(1/s)``: project rows into the embedding space."""
        if np.any(self.s <= SIGMA_FLOOR):
            raise IllConditionedEmbeddingError(
                f"retained singular value {self.s.min():.3g} is below {SIGMA_FLOOR}"
            )
        return (np.asarray(X, dtype=float) @ self.V) / self.s


def _fix_signs(U, V):
    """Make the largest-magnitude entry of every right singular vector positive."""
    pivot = np.argmax(np.abs(V), axis=0)
    flip = np.sign(V[pivot, np.arange(V.shape[1])])
    flip[flip == 0] = 1.0
    return U * flip, V * flip


def truncated_svd(A, rank: int | None = None, energy: float | None = None) -> TruncatedSvd:
    """Best rank-``r`` factorization of ``A``.

    Exactly one of ``rank`` (fixed ``r``) or ``energy`` (smallest ``r`` whose
    share of ``||A||_F^2`` reaches the threshold) must be given.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.size == 0:
        raise EmptyDesignError(f"need a nonempty 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NonFiniteValueError("matrix contains non-finite values")
    if (rank is None) == (energy is None):
        raise InvalidArgumentError("give exactly one of rank or energy")
    full = min(A.shape)
    if rank is not None and not (1 <= rank <= full):
        raise InvalidRankError(f"rank {rank} is outside [1, {full}] for a {A.shape[0]}x{A.shape[1]} matrix")
    if energy is not None and not (0 < energy <= 1):
        raise InvalidArgumentError(f"energy threshold must be in (0, 1], got {energy}")

    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    total = float(np.sum(s**2))
    if total == 0.0:
        raise IllConditionedEmbeddingError("matrix is identically zero")
    cum = np.cumsum(s**2) / total
    if energy is not None:
        # tolerance so that an exact threshold hit is not lost to rounding
        rank = int(np.searchsorted(cum, energy - 1e-12)) + 1
        rank = min(rank, full)
    U, V = _fix_signs(U[:, :rank], Vt[:rank].T)
    return TruncatedSvd(U, s[:rank].copy(), V, float(min(cum[rank - 1], 1.0)), total)


def truncated_svd_from_gram(A, gram, rank: int) -> TruncatedSvd:
    """Leading ``rank`` singular triplets of ``A`` given ``gram = A @ A.T``.

    Same factorization as :func:`truncated_svd` with a fixed rank, computed
    from the top eigenpairs of the row Gram matrix. This is much cheaper
    when many row subsets of one feature matrix are factorized, since their
    Gram matrices are submatrices of a single product. Singular values are
    accurate to about ``eps * s[0]**2 / s[r-1]``, so use the direct route
    when small retained values matter.
    """
    A = np.asarray(A, dtype=float)
    gram = np.asarray(gram, dtype=float)
    n = A.shape[0]
    if gram.shape != (n, n):
        raise DimensionMismatchError(f"Gram matrix must be {n}x{n}, got {gram.shape}")
    if not 1 <= rank <= min(A.shape):
        raise InvalidRankError(f"rank {rank} is outside [1, {min(A.shape)}] for a {A.shape[0]}x{A.shape[1]} matrix")
    total = float(np.trace(gram))
    if not total > 0:
        raise IllConditionedEmbeddingError("matrix is identically zero")
    if n > LANCZOS_MIN_ROWS:
        # fixed start vector keeps the factorization reproducible
        w, U = scipy.sparse.linalg.eigsh(gram, k=rank, which="LA", v0=np.ones(n), tol=0)
        order = np.argsort(w)
        w, U = w[order], U[:, order]
    else:
        w, U = scipy.linalg.eigh(gram, subset_by_index=[n - rank, n - 1])
    w, U = np.clip(w[::-1], 0.0, None), U[:, ::-1]
    s = np.sqrt(w)
    if s[-1] <= SIGMA_FLOOR:
        raise IllConditionedEmbeddingError(f"retained singular value {s[-1]:.3g} is below {SIGMA_FLOOR}")
    V = (A.T @ U) / s
    U, V = _fix_signs(U, V)
    return TruncatedSvd(np.ascontiguousarray(U), s, V, float(min(w.sum() / total, 1.0)), total)


# -- elastic net -------------------------------------------------------------


def _augment(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.hstack([X, np.ones((X.shape[0], 1))])


def l1_kill_threshold(X, y, penalize_intercept: bool = True) -> float:
    """Smallest ``lambda1`` for which every penalized coefficient is zero.

    At ``z = 0`` the subgradient condition reads ``|2 Z_j^T y| <= lambda1``.
    With an unpenalized intercept the free intercept absorbs the mean first.
    """
    Z = _augment(X)
    y = np.asarray(y, dtype=float)
    if not penalize_intercept:
        y = y - y.mean(axis=0)
        Z = Z[:, :-1]
    return float(2 * np.max(np.abs(Z.T @ y)))


def ridge_closed_form(X, y, lam2: float, penalize_intercept: bool = True):
    """Normal-equations solution of the ``lambda1 = 0`` problem, for warm starts."""
    Z = _augment(X)
    w = np.full(Z.shape[1], float(lam2))
    if not penalize_intercept:
        w[-1] = 0.0
    z = np.linalg.lstsq(Z.T @ Z + np.diag(w), Z.T @ np.asarray(y, dtype=float), rcond=None)[0]
    return z


def fit_elastic_net(
    X,
    y,
    lam1=0.0,
    lam2=0.0,
    *,
    penalize_intercept: bool = True,
    tol: float = CD_TOL,
    max_sweeps: int = CD_MAX_SWEEPS,
    init=None,
):
    """Minimize ``||y - X b - a||^2 + lam2 ||[b a]||_2^2 + lam1 ||[b a]||_1``.

    Cyclic coordinate descent on the intercept-augmented design ``Z = [X 1]``.
    Each coordinate update is the exact minimizer::

        z_j <- soft(rho_j, lam1 / 2) / (||Z_j||^2 + lam2)

    where ``rho_j`` is the correlation of column ``j`` with the partial
    residual. ``y`` may be a matrix; its columns are solved together, and
    ``lam1`` / ``lam2`` may then be per-column arrays, which is how a
    whole regularization grid is fitted in one call.

    Stops when no coordinate moves by more than ``tol * max(1, |z|_inf)``
    in a sweep. Every ``POLISH_EVERY`` sweeps each column is also solved
    exactly on its current support (see :func:`_polish`), which removes the
    slow tail caused by embedding columns nearly collinear with the
    intercept.

    Returns
    -------
    beta : ndarray, shape (r,) or (r, q)
    alpha : float or ndarray, shape (q,)
    """
    Z = _augment(X)
    y = np.asarray(y, dtype=float)
    vector = y.ndim == 1
    Y = y[:, None] if vector else y
    if Y.shape[0] != Z.shape[0]:
        raise DimensionMismatchError(f"X has {Z.shape[0]} rows but y has {Y.shape[0]}")
    if Z.shape[0] < 1:
        raise EmptyDesignError("need at least one observation")
    if not (np.all(np.isfinite(Z)) and np.all(np.isfinite(Y))):
        raise NonFiniteValueError("elastic-net inputs contain non-finite values")
    q = Y.shape[1]
    l1 = np.broadcast_to(np.asarray(lam1, dtype=float), (q,)).copy()
    l2 = np.broadcast_to(np.asarray(lam2, dtype=float), (q,)).copy()
    if np.any(l1 < 0) or np.any(l2 < 0) or not np.all(np.isfinite(l1 + l2)):
        raise InvalidArgumentError("penalties must be finite and non-negative")

    p = Z.shape[1]
    G = Z.T @ Z
    C = Z.T @ Y
    pen = np.ones(p)
    if not penalize_intercept:
        pen[-1] = 0.0
    W = np.zeros((p, q)) if init is None else np.array(init, dtype=float).reshape(p, q)
    done = np.zeros(q, dtype=bool)

    for sweep in range(1, max_sweeps + 1):
        biggest = 0.0
        for j in range(p):
            rho = C[j] - G[j] @ W + G[j, j] * W[j]
            denom = G[j, j] + pen[j] * l2
            thr = pen[j] * l1 / 2
            new = np.sign(rho) * np.maximum(np.abs(rho) - thr, 0.0)
            new = np.divide(new, denom, out=np.zeros(q), where=denom > 0)
            biggest = max(biggest, float(np.max(np.abs(new - W[j]))))
            W[j] = new
        if biggest <= tol * max(1.0, float(np.max(np.abs(W)))):
            break
        if sweep % POLISH_EVERY == 0:
            _polish(G, C, W, pen, l1, l2, done)
    else:
        beta, alpha = W[:-1], W[-1]
        if vector:
            beta, alpha = beta[:, 0], float(alpha[0])
        raise ConvergenceError(
            f"coordinate descent did not converge in {max_sweeps} sweeps", beta, alpha, max_sweeps
        )
    beta, alpha = W[:-1].copy(), W[-1].copy()
    if vector:
        return beta[:, 0], float(alpha[0])
    return beta, alpha


def _polish(G, C, W, pen, l1, l2, done):
    """Finish columns of ``W`` exactly by an active-set (feature-sign) search.

    For a support ``A`` with signs ``s`` the stationarity conditions are the
    linear system ``(G_AA + lam2 P_A) z_A = C_A - lam1 / 2 * P_A s_A``.
    Starting from the current iterate, the search moves towards that
    solution, dropping a coordinate whenever it would change sign, and adds
    the coordinate that most violates ``|C_j - G_j z| <= lam1 / 2`` until
    no coordinate does. The result then satisfies the optimality conditions
    exactly (up to rounding), so coordinate descent leaves it in place.
    Columns that do not finish within ``4 p`` moves are left to coordinate
    descent. Finished columns are marked in ``done``.
    """
    p, q = W.shape
    free = pen == 0
    for c in np.nonzero(~done)[0]:
        z = W[:, c].copy()
        act = (z != 0) | free
        sign = np.where(free, 0.0, np.sign(z))
        thr = pen * l1[c] / 2
        slack = 1e-12 * max(1.0, float(np.max(np.abs(C[:, c]))))
        for _ in range(4 * p):
            if act.any():
                lhs = G[np.ix_(act, act)] + np.diag(pen[act] * l2[c])
                try:
                    target = np.linalg.solve(lhs, C[act, c] - thr[act] * sign[act])
                except np.linalg.LinAlgError:
                    break
                za = z[act]
                flips = (~free[act]) & (np.sign(target) != sign[act])
                if flips.any():
                    # walk to the first zero crossing and drop that coordinate
                    idx = np.nonzero(flips)[0]
                    t = za[idx] / (za[idx] - target[idx])
                    k = idx[np.argmin(t)]
                    za = za + np.min(t) * (target - za)
                    za[k] = 0.0
                    z[act] = za
                    j = np.nonzero(act)[0][k]
                    act[j], sign[j] = False, 0.0
                    continue
                z[act] = target
            z[~act] = 0.0
            grad = C[:, c] - G @ z
            viol = np.where(act, -np.inf, np.abs(grad) - thr)
            j = int(np.argmax(viol))
            if viol[j] <= slack:
                W[:, c] = z
                done[c] = True
                break
            act[j], sign[j] = True, np.sign(grad[j])


# -- model -------------------------------------------------------------------


@dataclass(frozen=True)
class SerModel:
    """A fitted SER predictor.

    ``coef`` has one row per GRF embedding component (``r_grf x r_imu``) and
    ``intercept`` one entry per component.
    """

    imu_svd: TruncatedSvd
    grf_svd: TruncatedSvd
    coef: np.ndarray
    intercept: np.ndarray
    S: int
    lam1: float
    lam2: float
    sensors: SensorSet | None = None
    penalize_intercept: bool = True

    @property
    def r_imu(self) -> int:
        return self.imu_svd.rank

    @property
    def r_grf(self) -> int:
        return self.grf_svd.rank

    def embed(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.imu_svd.V.shape[0]:
            raise DimensionMismatchError(
                f"model expects rows of length {self.imu_svd.V.shape[0]}, got {X.shape[1]}"
            )
        return self.imu_svd.embed(X)

    def predict_embedding(self, X) -> np.ndarray:
        return self.embed(X) @ self.coef.T + self.intercept

    def predict(self, X) -> np.ndarray:
        """Predict GRF rows for one row (1-D) or a stack of rows (2-D)."""
        single = np.ndim(X) == 1
        Y = (self.predict_embedding(X) * self.grf_svd.s) @ self.grf_svd.V.T
        return Y[0] if single else Y

    def to_json(self) -> str:
        return json.dumps(
            {
                "format_version": MODEL_FORMAT_VERSION,
                "kind": "ser",
                "S": self.S,
                "lam1": self.lam1,
                "lam2": self.lam2,
                "penalize_intercept": self.penalize_intercept,
                "sensors": self.sensors.value if self.sensors is not None else None,
                "imu": _svd_payload(self.imu_svd),
                "grf": _svd_payload(self.grf_svd),
                "coef": self.coef.tolist(),
                "intercept": self.intercept.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "SerModel":
        d = json.loads(text)
        if d.get("kind") != "ser" or d.get("format_version") != MODEL_FORMAT_VERSION:
            raise InvalidArgumentError("not a version-1 SER model")
        return cls(
            _svd_from_payload(d["imu"]),
            _svd_from_payload(d["grf"]),
            np.array(d["coef"], dtype=float).reshape(len(d["grf"]["s"]), len(d["imu"]["s"])),
            np.array(d["intercept"], dtype=float),
            int(d["S"]),
            float(d["lam1"]),
            float(d["lam2"]),
            SensorSet(d["sensors"]) if d["sensors"] is not None else None,
            bool(d["penalize_intercept"]),
        )


def _svd_payload(svd: TruncatedSvd) -> dict:
    # U is training-set specific and not needed for prediction
    return {
        "s": svd.s.tolist(),
        "V": svd.V.tolist(),
        "energy_fraction": svd.energy_fraction,
        "total_energy": svd.total_energy,
    }


def _svd_from_payload(d: dict) -> TruncatedSvd:
    V = np.array(d["V"], dtype=float).reshape(-1, len(d["s"]))
    return TruncatedSvd(np.empty((0, V.shape[1])), np.array(d["s"], dtype=float), V,
                        float(d["energy_fraction"]), float(d["total_energy"]))


def _svd_for(A, rank, energy):
    if energy is not None:
        return truncated_svd(A, energy=energy)
    return truncated_svd(A, rank=rank)


def ser_fit_grid(
    train: DesignMatrices,
    penalties,
    rank: int | None = DEFAULT_RANK,
    *,
    energy: float | None = None,
    grf_rank: int | None = None,
    penalize_intercept: bool = True,
    imu_svd: TruncatedSvd | None = None,
    grf_svd: TruncatedSvd | None = None,
    warm_start: bool = False,
    tol: float = CD_TOL,
) -> list:
    """Fit one :class:`SerModel` per ``(lam1, lam2)`` pair, sharing the SVDs.

    Precomputed factorizations may be passed in to avoid recomputing them
    across grid searches. ``warm_start`` seeds coordinate descent with the
    ridge solution of each pair.
    """
    if train.n_rows < 1:
        raise EmptyDesignError("training design is empty")
    if train.n_rows == 1:
        warnings.warn("one training row: regression reduces to interpolation", DegenerateFitWarning, stacklevel=2)
    imu = imu_svd if imu_svd is not None else _svd_for(train.A_imu, rank, energy)
    grf = grf_svd if grf_svd is not None else _svd_for(train.A_grf, grf_rank or rank, energy)
    if imu.U.shape[0] != train.n_rows or grf.U.shape[0] != train.n_rows:
        raise DimensionMismatchError("precomputed SVD does not match the training design")

    penalties = [(float(a), float(b)) for a, b in penalties]
    q = grf.rank
    Y = np.tile(grf.U, (1, len(penalties)))
    l1 = np.repeat([a for a, _ in penalties], q)
    l2 = np.repeat([b for _, b in penalties], q)
    init = None
    if warm_start:
        init = np.hstack([ridge_closed_form(imu.U, grf.U, b, penalize_intercept) for _, b in penalties])
    beta, alpha = fit_elastic_net(
        imu.U, Y, l1, l2, penalize_intercept=penalize_intercept, tol=tol, init=init
    )
    models = []
    for i, (a, b) in enumerate(penalties):
        cols = slice(i * q, (i + 1) * q)
        models.append(
            SerModel(imu, grf, beta[:, cols].T.copy(), alpha[cols].copy(), train.S, a, b,
                     train.sensors, penalize_intercept)
        )
    return models


def ser_fit(
    train: DesignMatrices,
    rank: int | None = DEFAULT_RANK,
    lam1: float = 0.0,
    lam2: float = 0.0,
    **kwargs,
) -> SerModel:
    """Fit both truncated SVDs and the per-component elastic-net regressions.

    Keyword arguments are those of :func:`ser_fit_grid`.
    """
    return ser_fit_grid(train, [(lam1, lam2)], rank, **kwargs)[0]


def ser_predict(model: SerModel, x) -> np.ndarray:
    """``y = ((x V_imu / s_imu) B^T + a) diag(s_grf) V_grf^T``."""
    return model.predict(x)
