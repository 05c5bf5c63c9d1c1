"""Prediction tasks: model selection, final fit, evaluation and report tables.

A task is ``(scenario, sensors, method)`` for one target athlete. The
target's test collection is drawn from the seed; every other collection
forms the pool. Hyperparameters are chosen on five folds, each holding out
one pool collection as validation set (the held-out collection's athlete
plays the target inside the fold), by mean validation RMSE of ``g_z``.
The chosen model is refit on the scenario's training part of the pool and
evaluated on the test collection.

Every design matrix used here is a row subset of one per-step feature
matrix, so the workspace keeps one step-level Gram matrix per sensor set.
Batch Gram matrices (for the SVDs) and batch distances (for KNN model
selection) are sums of its submatrices.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import multiprocessing
import time
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .biomech import VARIABLES, compute_all
from .dataset import Scenario, choose_test_collection, derive_rng, make_fold_plan, make_scenario_split
from .errors import (
    DataError,
    EmptyDesignError,
    GrfError,
    InsufficientPersonalDataError,
    InvalidArgumentError,
    NumericalError,
    UnimplementedMethodError,
)
from .knn import K_GRID, WEIGHTINGS, KnnModel, predict_from_distances
from .metrics import mape, mean_over_steps, waveform_errors
from .ser import (
    DEFAULT_RANK,
    LAMBDA_GRID,
    S_GRID,
    DesignMatrices,
    ser_fit_grid,
    split_grf_row,
    truncated_svd_from_gram,
)
from .signal import GRF, STEP_LENGTH, SensorSet, grf_row, select_sensor_channels

log = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
N_FOLDS = 5
METHODS = ("ser", "knn")
SCENARIO_ORDER = (Scenario.OTHERS, Scenario.PERSONAL, Scenario.EVERYONE)
PROVENANCE_ROWS = 3
_GRF_CACHE_SIZE = 256


def parse_method(name: str) -> str:
    key = str(name).strip().lower()
    if key in METHODS:
        return key
    if key == "lstm":
        raise UnimplementedMethodError(f"method 'lstm' is not implemented; supported methods: {list(METHODS)}")
    raise InvalidArgumentError(f"unknown method {name!r}; supported methods: {list(METHODS)}")


@dataclass(frozen=True)
class TaskSpec:
    scenario: Scenario
    sensors: SensorSet
    method: str
    target: str
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        if not isinstance(self.sensors, SensorSet):
            object.__setattr__(self, "sensors", SensorSet.parse(self.sensors))
        object.__setattr__(self, "method", parse_method(self.method))

    @property
    def key(self) -> str:
        return f"{self.scenario.value}_{self.sensors.value}_{self.method}_{self.target}"

    def to_dict(self) -> dict:
        return {"scenario": self.scenario.value, "sensors": self.sensors.value, "method": self.method,
                "target": self.target, "seed": self.seed}


@dataclass(frozen=True)
class Grids:
    S: tuple = S_GRID
    lam1: tuple = LAMBDA_GRID
    lam2: tuple = LAMBDA_GRID
    k: tuple = K_GRID
    rank: int = DEFAULT_RANK
    knn_weighting: str = "inverse"
    impulse_mode: str = "literal"
    penalize_intercept: bool = True

    def __post_init__(self):
        if not (self.S and self.lam1 and self.lam2 and self.k):
            raise InvalidArgumentError("every hyperparameter grid must be nonempty")
        if self.knn_weighting not in WEIGHTINGS:
            raise InvalidArgumentError(f"knn weighting must be one of {WEIGHTINGS}")
        if self.impulse_mode not in ("literal", "corrected"):
            raise InvalidArgumentError("impulse mode must be 'literal' or 'corrected'")

    def to_dict(self) -> dict:
        return {"S": list(self.S), "lam1": list(self.lam1), "lam2": list(self.lam2), "k": list(self.k),
                "rank": self.rank, "knn_weighting": self.knn_weighting, "impulse_mode": self.impulse_mode,
                "penalize_intercept": self.penalize_intercept}

    def points(self, method: str) -> list:
        """Grid points as dicts, in a fixed order."""
        if method == "ser":
            return [{"S": s, "lam1": a, "lam2": b} for s in self.S for a in self.lam1 for b in self.lam2]
        return [{"S": s, "k": k} for s in self.S for k in self.k]


def tie_break_key(score: float, point: dict) -> tuple:
    """Lower is better: score, then smaller S, smaller k, larger penalties."""
    return (score, point["S"], point.get("k", 0), -point.get("lam1", 0.0), -point.get("lam2", 0.0))


# -- workspace ---------------------------------------------------------------


class Workspace:
    """Steps of one dataset with cached per-step features and Gram matrices.

    Steps must be grouped by measurement and in time order within each.
    """

    def __init__(self, steps):
        self.steps = list(steps)
        if not self.steps:
            raise InvalidArgumentError("workspace needs at least one step")
        self.measurements: OrderedDict = OrderedDict()
        for i, s in enumerate(self.steps):
            self.measurements.setdefault(s.measurement_id, []).append(i)
        self.measurements = OrderedDict((m, np.array(ix)) for m, ix in self.measurements.items())
        self.collection_of = {s.measurement_id: s.collection_id for s in self.steps}
        self.collections: dict = {}
        for s in self.steps:
            self.collections.setdefault(s.athlete_id, [])
            if s.collection_id not in self.collections[s.athlete_id]:
                self.collections[s.athlete_id].append(s.collection_id)
        self.athletes = sorted(self.collections)
        self._features: dict = {}
        self._grf = None
        self._grf_svd: OrderedDict = OrderedDict()

    def features(self, sensors: SensorSet):
        if sensors not in self._features:
            F = np.vstack([select_sensor_channels(s, sensors) for s in self.steps])
            self._features[sensors] = (F, F @ F.T)
        return self._features[sensors]

    def grf(self):
        if self._grf is None:
            Y = np.vstack([grf_row(s) for s in self.steps])
            self._grf = (Y, Y @ Y.T)
        return self._grf

    def batches(self, mids, S: int) -> np.ndarray:
        """``(n, S)`` step indices of consecutive non-overlapping batches."""
        rows = []
        for m in mids:
            ix = self.measurements[m]
            nb = ix.size // S
            if nb:
                rows.append(ix[:nb * S].reshape(nb, S))
        return np.vstack(rows) if rows else np.zeros((0, S), dtype=int)

    def step_ids(self, B) -> tuple:
        return tuple(tuple(self.steps[i].step_id for i in row) for row in B)

    @staticmethod
    def rows(F, B) -> np.ndarray:
        return F[B].reshape(B.shape[0], -1)

    @staticmethod
    def batch_gram(G, B, C=None) -> np.ndarray:
        """``rows(F, B) @ rows(F, C).T`` from the step Gram ``G``."""
        C = B if C is None else C
        out = np.zeros((B.shape[0], C.shape[0]))
        for p in range(B.shape[1]):
            out += G[np.ix_(B[:, p], C[:, p])]
        return out

    def batch_sqdist(self, G, B, C) -> np.ndarray:
        d = np.diag(G)
        nb = d[B].sum(axis=1)
        nc = d[C].sum(axis=1)
        return np.maximum(nb[:, None] + nc[None, :] - 2 * self.batch_gram(G, B, C), 0.0)

    def grf_svd(self, mids, S: int, B, rank: int):
        key = (tuple(mids), S, rank)
        if key not in self._grf_svd:
            Y, G = self.grf()
            self._grf_svd[key] = truncated_svd_from_gram(self.rows(Y, B), self.batch_gram(G, B), rank)
            if len(self._grf_svd) > _GRF_CACHE_SIZE:
                self._grf_svd.popitem(last=False)
        else:
            self._grf_svd.move_to_end(key)
        return self._grf_svd[key]

    def mids_of(self, steps) -> list:
        seen = OrderedDict()
        for s in steps:
            seen.setdefault(s.measurement_id, None)
        return list(seen)


def _gz_rmse_per_step(pred_rows, true_rows, S):
    """RMSE of ``g_z`` for every step in a stack of GRF rows."""
    n = pred_rows.shape[0]
    p = pred_rows.reshape(n, S, len(GRF), STEP_LENGTH)[:, :, 2]
    t = true_rows.reshape(n, S, len(GRF), STEP_LENGTH)[:, :, 2]
    return np.sqrt(np.mean((p - t) ** 2, axis=2)).ravel()


# -- fold scoring ------------------------------------------------------------


def _ser_models(ws: Workspace, sensors, train_mids, S, penalties, grids: Grids):
    F, G = ws.features(sensors)
    Y, _ = ws.grf()
    B = ws.batches(train_mids, S)
    # each embedding component is regressed on rank + 1 unknowns
    if B.shape[0] <= grids.rank + 1:
        return None, B
    A_imu, A_grf = ws.rows(F, B), ws.rows(Y, B)
    imu = truncated_svd_from_gram(A_imu, ws.batch_gram(G, B), grids.rank)
    grf = ws.grf_svd(train_mids, S, B, grids.rank)
    design = DesignMatrices(A_imu, A_grf, S, sensors, (), ws.step_ids(B))
    models = ser_fit_grid(design, penalties, imu_svd=imu, grf_svd=grf, warm_start=True,
                          penalize_intercept=grids.penalize_intercept)
    return models, B


def _score_ser(ws, sensors, train_mids, val_mids, grids: Grids) -> dict:
    """Mean validation ``g_z`` RMSE of every SER grid point feasible in this fold."""
    F, _ = ws.features(sensors)
    Y, _ = ws.grf()
    penalties = [(a, b) for a in grids.lam1 for b in grids.lam2]
    scores = {}
    for S in grids.S:
        Bv = ws.batches(val_mids, S)
        if Bv.shape[0] == 0:
            continue
        try:
            models, _ = _ser_models(ws, sensors, train_mids, S, penalties, grids)
        except NumericalError as exc:
            log.warning("SER S=%d skipped in a fold: %s", S, exc)
            continue
        if models is None:
            continue
        Xv, Yv = ws.rows(F, Bv), ws.rows(Y, Bv)
        for m in models:
            scores[(S, m.lam1, m.lam2)] = mean_over_steps(_gz_rmse_per_step(m.predict(Xv), Yv, S))
    return scores


def _score_knn(ws, sensors, train_mids, val_mids, grids: Grids) -> dict:
    F, G = ws.features(sensors)
    Y, _ = ws.grf()
    scores = {}
    for S in grids.S:
        B, Bv = ws.batches(train_mids, S), ws.batches(val_mids, S)
        if Bv.shape[0] == 0 or B.shape[0] == 0:
            continue
        D = np.sqrt(ws.batch_sqdist(G, Bv, B))
        Yt, Yv = ws.rows(Y, B), ws.rows(Y, Bv)
        for k in grids.k:
            if k > B.shape[0]:
                continue
            pred = predict_from_distances(D, Yt, k, grids.knn_weighting)
            scores[(S, k)] = mean_over_steps(_gz_rmse_per_step(pred, Yv, S))
    return scores


def _point(method, key) -> dict:
    if method == "ser":
        return {"S": key[0], "lam1": key[1], "lam2": key[2]}
    return {"S": key[0], "k": key[1]}


@dataclass
class Selection:
    point: dict
    score: float
    fold_scores: dict
    skipped_folds: dict


def select_hyperparams(ws: Workspace, task: TaskSpec, grids: Grids, folds, exclude=()) -> Selection:
    """Grid point with the lowest mean validation ``g_z`` RMSE over ``folds``.

    ``folds`` lists held-out collections. Folds where the scenario has no
    training data are skipped with a warning; a grid point must be feasible
    in every remaining fold.
    """
    per_fold, skipped = {}, {}
    for held in folds:
        try:
            train, val = make_scenario_split(ws.steps, task.scenario, held, exclude=exclude)
        except InsufficientPersonalDataError as exc:
            log.warning("%s: fold %s skipped: %s", task.key, held, exc)
            skipped[held] = str(exc)
            continue
        if not train:
            skipped[held] = "empty training set"
            log.warning("%s: fold %s skipped: empty training set", task.key, held)
            continue
        score = _score_ser if task.method == "ser" else _score_knn
        per_fold[held] = score(ws, task.sensors, ws.mids_of(train), ws.mids_of(val), grids)
    if not per_fold:
        raise InsufficientPersonalDataError(f"{task.key}: every fold is infeasible for scenario {task.scenario.value}")
    common = set.intersection(*(set(s) for s in per_fold.values()))
    if not common:
        raise InvalidArgumentError(f"{task.key}: no grid point is feasible in every fold")
    best = None
    for key in common:
        mean = math.fsum(per_fold[h][key] for h in per_fold) / len(per_fold)
        point = _point(task.method, key)
        cand = (tie_break_key(mean, point), point, mean)
        if best is None or cand[0] < best[0]:
            best = cand
    _, point, mean = best
    key = tuple(point.values())
    return Selection(point, mean, {h: per_fold[h][key] for h in per_fold}, skipped)


# -- evaluation --------------------------------------------------------------


@dataclass
class EvalReport:
    task: TaskSpec
    test_collection: str
    selection: Selection
    train_collections: list
    train_step_digest: str
    n_train_steps: int
    test_step_ids: list
    waveform: dict
    per_step: list
    mape: dict
    biomech_failures: dict
    overlay: dict
    provenance: list = field(default_factory=list)
    weighting_comparison: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    durations: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Deterministic content; wall-clock durations are left out on purpose."""
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "config": self.config,
            "task": self.task.to_dict(),
            "split": {
                "test_collection": self.test_collection,
                "train_collections": self.train_collections,
                "n_train_steps": self.n_train_steps,
                "train_step_ids_sha256": self.train_step_digest,
                "test_step_ids": self.test_step_ids,
            },
            "selection": {
                "hyperparameters": self.selection.point,
                "mean_validation_rmse_gz": self.selection.score,
                "fold_scores": self.selection.fold_scores,
                "skipped_folds": self.selection.skipped_folds,
            },
            "waveform": self.waveform,
            "per_step": self.per_step,
            "mape": self.mape,
            "biomech_failures": self.biomech_failures,
            "knn_provenance": self.provenance,
            "weighting_comparison": self.weighting_comparison,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def _digest(ids) -> str:
    return hashlib.sha256("\n".join(sorted(ids)).encode()).hexdigest()


def _waveform_summary(per_step) -> dict:
    out = {}
    for name in ("rmse", "rrmse"):
        for comp in "xyz":
            out[f"{name}_{comp}"] = mean_over_steps(p[f"{name}_{comp}"] for p in per_step)
    return out


def _biomech(steps, pred, impulse_mode):
    """MAPE per variable between measured and predicted steps."""
    true_vals = {v: [] for v in VARIABLES}
    pred_vals = {v: [] for v in VARIABLES}
    failures = {}
    for step, g_hat in zip(steps, pred):
        try:
            rt = compute_all(step.as_signal(GRF), step.body_weight, impulse_mode)
            rp = compute_all(step.as_signal(GRF).replace(data=g_hat), step.body_weight, impulse_mode)
        except DataError as exc:
            name = type(exc).__name__
            failures[name] = failures.get(name, 0) + 1
            continue
        for v in VARIABLES:
            true_vals[v].append(getattr(rt, v))
            pred_vals[v].append(getattr(rp, v))
    out = {}
    for v in VARIABLES:
        try:
            r = mape(true_vals[v], pred_vals[v])
            out[v] = {"mape": r.value, "used": r.used, "skipped": r.skipped}
        except GrfError:
            out[v] = {"mape": None, "used": 0, "skipped": len(true_vals[v])}
    return out, failures


def run_task(ws: Workspace, task: TaskSpec, grids: Grids = Grids(), config: dict | None = None) -> EvalReport:
    """Select hyperparameters, refit on the full training split and evaluate."""
    try:
        return _run_task(ws, task, grids, config or {})
    except GrfError as exc:
        # keep the exception type so exit codes survive, but name the task
        raise type(exc)(f"task {task.key}: {exc}") from exc


def _run_task(ws, task, grids, config):
    t0 = time.perf_counter()
    if task.target not in ws.collections:
        raise InvalidArgumentError(f"unknown target athlete {task.target!r}")
    test = choose_test_collection(ws.collections, task.target, task.seed)
    pool = sorted(c for cs in ws.collections.values() for c in cs if c != test)
    folds = make_fold_plan(pool, task.seed, N_FOLDS, salt=task.target)
    sel = select_hyperparams(ws, task, grids, folds, exclude=(test,))
    t1 = time.perf_counter()

    train, test_steps = make_scenario_split(ws.steps, task.scenario, test)
    train_mids, test_mids = ws.mids_of(train), ws.mids_of(test_steps)
    S = sel.point["S"]
    F, _ = ws.features(task.sensors)
    Y, _ = ws.grf()
    Bt = ws.batches(test_mids, S)
    Xt, Yt = ws.rows(F, Bt), ws.rows(Y, Bt)
    provenance, comparison = [], {}
    if task.method == "ser":
        models, B = _ser_models(ws, task.sensors, train_mids, S, [(sel.point["lam1"], sel.point["lam2"])], grids)
        if models is None:
            raise EmptyDesignError(f"{B.shape[0]} training rows at S={S} cannot determine {grids.rank + 1} unknowns")
        (model,) = models
        pred = model.predict(Xt)
    else:
        B = ws.batches(train_mids, S)
        model = KnnModel(ws.rows(F, B), ws.rows(Y, B), sel.point["k"], grids.knn_weighting, S,
                         tuple("|".join(ids) for ids in ws.step_ids(B)))
        D = model.distances(Xt)
        pred = predict_from_distances(D, model.Y, model.k, model.weighting)
        for i in range(min(PROVENANCE_ROWS, Xt.shape[0])):
            provenance.append({
                "test_steps": list(ws.step_ids(Bt[i:i + 1])[0]),
                "neighbors": [{"row": n.row, "train_steps": model.resolve(n.row).split("|"),
                               "distance": n.distance, "weight": n.weight} for n in model.neighbors(Xt[i])],
            })
        for w in WEIGHTINGS:
            steps_w = _split_rows(predict_from_distances(D, model.Y, model.k, w), S)
            true_w = _split_rows(Yt, S)
            comparison[w] = _waveform_summary([waveform_errors(g, h) for g, h in zip(true_w, steps_w)])
    t2 = time.perf_counter()

    pred_steps, true_steps = _split_rows(pred, S), _split_rows(Yt, S)
    step_objs = [ws.steps[i] for i in Bt.ravel()]
    per_step = []
    for st, g, h in zip(step_objs, true_steps, pred_steps):
        per_step.append({"step_id": st.step_id, **waveform_errors(g, h)})
    mape_table, failures = _biomech(step_objs, pred_steps, grids.impulse_mode)
    first = step_objs[0] if step_objs else None
    overlay = {}
    if first is not None:
        overlay = {"step_id": first.step_id, "measured_gz": true_steps[0][:, 2].tolist(),
                   "predicted_gz": pred_steps[0][:, 2].tolist()}
    return EvalReport(
        task=task,
        test_collection=test,
        selection=sel,
        train_collections=sorted({s.collection_id for s in train}),
        train_step_digest=_digest(s.step_id for s in train),
        n_train_steps=len(train),
        test_step_ids=[s.step_id for s in step_objs],
        waveform=_waveform_summary(per_step),
        per_step=per_step,
        mape=mape_table,
        biomech_failures=failures,
        overlay=overlay,
        provenance=provenance,
        weighting_comparison=comparison,
        config=config,
        durations={"select_s": t1 - t0, "fit_predict_s": t2 - t1, "total_s": time.perf_counter() - t0},
    )


def _split_rows(rows, S) -> list:
    out = []
    for row in rows:
        out.extend(split_grf_row(row, S))
    return out


# -- sweeps and tables -------------------------------------------------------


def default_targets(ws: Workspace, seed: int, n: int | None = None) -> list:
    """All athletes with at least two collections, or a seeded subset of ``n``."""
    eligible = [a for a in ws.athletes if len(ws.collections[a]) >= 2]
    if n is None or n >= len(eligible):
        return eligible
    pick = derive_rng(seed, "targets").choice(len(eligible), size=n, replace=False)
    return sorted(eligible[i] for i in pick)


def make_tasks(scenarios, sensors, methods, targets, seed) -> list:
    """Task list ordered so that tasks sharing a training split run together."""
    return [
        TaskSpec(sc, se, me, t, seed)
        for sc in scenarios for t in targets for se in sensors for me in methods
    ]


_SWEEP: dict = {}


def _sweep_unit(task):
    return run_task(_SWEEP["ws"], task, _SWEEP["grids"], _SWEEP["config"])


def run_sweep(ws: Workspace, tasks, grids: Grids = Grids(), config: dict | None = None, jobs: int = 1) -> list:
    """Run every task; with ``jobs > 1`` tasks run in forked worker processes.

    Each task is deterministic on its own, so the sorted result does not
    depend on ``jobs``.
    """
    tasks = list(tasks)
    if jobs < 1:
        raise InvalidArgumentError("jobs must be at least 1")
    if jobs == 1 or len(tasks) < 2:
        reports = []
        for task in tasks:
            r = run_task(ws, task, grids, config)
            log.info("%s: rRMSE(g_z) %.4f in %.1f s", task.key, r.waveform["rrmse_z"], r.durations["total_s"])
            reports.append(r)
    else:
        # workers inherit the workspace through fork instead of pickling it
        _SWEEP.update(ws=ws, grids=grids, config=config)
        ctx = multiprocessing.get_context("fork")
        try:
            with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
                reports = list(pool.map(_sweep_unit, tasks))
        finally:
            _SWEEP.clear()
    return sorted(reports, key=lambda r: r.task.key)


def _columns(reports):
    present = {(r.task.scenario, r.task.method) for r in reports}
    return [(sc, me) for sc in SCENARIO_ORDER for me in METHODS if (sc, me) in present]


def _rows(reports):
    present = {r.task.sensors for r in reports}
    return [s for s in SensorSet if s in present]


def report_tables(reports) -> dict:
    """Result tables: rows are sensor sets, columns scenario x method.

    Cells average the per-target values. Returns ``{name: {"rows", "columns",
    "values"}}`` for every waveform metric and every biomech variable's MAPE,
    plus ``"overlays"``.
    """
    reports = list(reports)
    if not reports:
        raise InvalidArgumentError("need at least one report")
    rows, cols = _rows(reports), _columns(reports)
    cells: dict = {}
    for r in reports:
        cells.setdefault((r.task.sensors, r.task.scenario, r.task.method), []).append(r)

    def table(value_of):
        values = []
        for se in rows:
            line = []
            for sc, me in cols:
                vals = [value_of(r) for r in cells.get((se, sc, me), [])]
                vals = [v for v in vals if v is not None]
                line.append(mean_over_steps(vals) if vals else None)
            values.append(line)
        return {"rows": [s.value for s in rows], "columns": [f"{sc.value}/{me}" for sc, me in cols],
                "values": values}

    out = {}
    for name in ("rmse", "rrmse"):
        for comp in "xyz":
            metric = f"{name}_{comp}"
            out[metric] = table(lambda r, m=metric: r.waveform[m])
    for v in VARIABLES:
        out[f"mape_{v}"] = table(lambda r, v=v: r.mape[v]["mape"])
    out["overlays"] = {r.task.key: r.overlay for r in reports}
    return out


def _config_header(config) -> str:
    return "" if config is None else "# config: " + json.dumps(config, sort_keys=True) + "\n"


def table_csv(table: dict, config: dict | None = None) -> str:
    buf = io.StringIO(_config_header(config))
    buf.seek(0, io.SEEK_END)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sensors"] + table["columns"])
    for name, line in zip(table["rows"], table["values"]):
        w.writerow([name] + ["" if v is None else repr(v) for v in line])
    return buf.getvalue()


def overlay_csv(overlay: dict, config: dict | None = None) -> str:
    buf = io.StringIO(_config_header(config))
    buf.seek(0, io.SEEK_END)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample", "measured_gz", "predicted_gz"])
    for i, (a, b) in enumerate(zip(overlay["measured_gz"], overlay["predicted_gz"])):
        w.writerow([i, repr(a), repr(b)])
    return buf.getvalue()


def write_reports(reports, out_dir, config: dict) -> list:
    """Write one JSON per report, the tables (CSV and JSON) and overlay CSVs."""
    out = Path(out_dir)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    (out / "tables").mkdir(exist_ok=True)
    (out / "overlays").mkdir(exist_ok=True)
    written = []
    for r in reports:
        p = out / "reports" / f"{r.task.key}.json"
        p.write_text(r.to_json())
        written.append(p)
    tables = report_tables(reports)
    overlays = tables.pop("overlays")
    p = out / "tables" / "tables.json"
    p.write_text(json.dumps({"format_version": REPORT_FORMAT_VERSION, "config": config, "tables": tables},
                            indent=1, sort_keys=True) + "\n")
    written.append(p)
    for name, t in tables.items():
        p = out / "tables" / f"{name}.csv"
        p.write_text(table_csv(t, config))
        written.append(p)
    for key, ov in overlays.items():
        if ov:
            p = out / "overlays" / f"{key}.csv"
            p.write_text(overlay_csv(ov, config))
            written.append(p)
    return written
