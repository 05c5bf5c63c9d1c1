"""On-disk data model, step store and training/validation splits.

Layout of a dataset directory::

    manifest.json
    <measurement_id>/grf.csv          force plate, newtons, 1000 Hz
    <measurement_id>/sacrum.csv       IMU, m/s^2 and rad/s, 500 Hz
    <measurement_id>/left_shank.csv
    <measurement_id>/right_shank.csv

Every CSV starts with a ``t,<channel>,...`` header; ``t`` is the device's own
clock in seconds with 6 decimals. All paths in the manifest are relative to
the manifest. The manifest schema is::

    {
      "format_version": 1,
      "athletes": [{"athlete_id": str, "body_weight_N": float}],
      "collections": [{
        "collection_id": str, "athlete_id": str,
        "measurements": [{
          "measurement_id": str, "speed_mps": float,
          "files": {device: path}, "rates": {device: Hz},
          "jump_windows_s": [[t0, t1], [t0, t1]],
          "run_window_s": [t0, t1],
          "ap_braking_sign": "negative"
        }]
      }]
    }

``jump_windows_s`` bracket the landing of the jump before and after the run
in approximate (any device's) time; ``run_window_s`` bounds the running part
on the force-plate clock.

A step store is a directory with ``steps.npy`` (``n x 200 x channels``) and
``index.json`` holding channel labels and per-step metadata.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InsufficientPersonalDataError,
    InvalidArgumentError,
    ManifestError,
    MissingFileError,
    NonFiniteValueError,
    RaggedRowsError,
    RateMismatchError,
)
from .signal import IMU_ACC, IMU_GYR, SampledSignal, Step

FORMAT_VERSION = 1
DEVICES = ("grf", "sacrum", "left_shank", "right_shank")
DEVICE_CHANNELS = {
    "grf": ("fx", "fy", "fz"),
    "sacrum": IMU_ACC + IMU_GYR,
    "left_shank": IMU_ACC + IMU_GYR,
    "right_shank": IMU_ACC + IMU_GYR,
}
RATE_TOL = 1e-3


# -- manifest ----------------------------------------------------------------


@dataclass(frozen=True)
class Measurement:
    measurement_id: str
    collection_id: str
    athlete_id: str
    speed: float
    files: dict
    rates: dict
    jump_windows: tuple
    run_window: tuple
    braking_sign: str = "negative"

    def to_dict(self) -> dict:
        return {
            "measurement_id": self.measurement_id,
            "speed_mps": self.speed,
            "files": dict(self.files),
            "rates": dict(self.rates),
            "jump_windows_s": [list(w) for w in self.jump_windows],
            "run_window_s": list(self.run_window),
            "ap_braking_sign": self.braking_sign,
        }


@dataclass(frozen=True)
class Collection:
    collection_id: str
    athlete_id: str
    measurement_ids: tuple


@dataclass
class DatasetIndex:
    root: Path
    body_weights: dict = field(default_factory=dict)
    collections: dict = field(default_factory=dict)
    measurements: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.measurements)

    def path(self, measurement_id: str, device: str) -> Path:
        return self.root / self.measurements[measurement_id].files[device]

    def collections_of(self, athlete_id: str) -> list:
        return [c for c, col in self.collections.items() if col.athlete_id == athlete_id]

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "athletes": [{"athlete_id": a, "body_weight_N": bw} for a, bw in self.body_weights.items()],
            "collections": [
                {
                    "collection_id": c.collection_id,
                    "athlete_id": c.athlete_id,
                    "measurements": [self.measurements[m].to_dict() for m in c.measurement_ids],
                }
                for c in self.collections.values()
            ],
        }


def _require(d, key, kind, where):
    if not isinstance(d, dict) or key not in d:
        raise ManifestError(f"{where}: missing field {key!r}")
    value = d[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind):
        raise ManifestError(f"{where}: field {key!r} must be {kind.__name__}")
    return value


def _window(value, where):
    if (not isinstance(value, list) or len(value) != 2
            or not all(isinstance(v, (int, float)) for v in value) or not value[0] < value[1]):
        raise ManifestError(f"{where}: expected an increasing [t0, t1] pair, got {value!r}")
    return (float(value[0]), float(value[1]))


def parse_manifest(data: dict, root: Path, check_files: bool = True) -> DatasetIndex:
    if not isinstance(data, dict) or data.get("format_version") != FORMAT_VERSION:
        raise ManifestError(f"manifest format_version must be {FORMAT_VERSION}")
    index = DatasetIndex(Path(root))
    for i, a in enumerate(_require(data, "athletes", list, "manifest")):
        aid = _require(a, "athlete_id", str, f"athletes[{i}]")
        bw = _require(a, "body_weight_N", float, f"athletes[{i}]")
        if aid in index.body_weights:
            raise ManifestError(f"duplicate athlete_id {aid!r}")
        if not bw > 0:
            raise ManifestError(f"athlete {aid!r}: body weight must be positive")
        index.body_weights[aid] = bw
    for i, c in enumerate(_require(data, "collections", list, "manifest")):
        where = f"collections[{i}]"
        cid = _require(c, "collection_id", str, where)
        aid = _require(c, "athlete_id", str, where)
        if cid in index.collections:
            raise ManifestError(f"duplicate collection_id {cid!r}")
        if aid not in index.body_weights:
            raise ManifestError(f"{where}: unknown athlete {aid!r}")
        mids = []
        for j, m in enumerate(_require(c, "measurements", list, where)):
            w = f"{where}.measurements[{j}]"
            mid = _require(m, "measurement_id", str, w)
            if mid in index.measurements:
                raise ManifestError(f"duplicate measurement_id {mid!r}")
            files = _require(m, "files", dict, w)
            rates = _require(m, "rates", dict, w)
            for dev in DEVICES:
                if dev not in files or not isinstance(files[dev], str):
                    raise ManifestError(f"{w}: no file for device {dev!r}")
                if not isinstance(rates.get(dev), (int, float)) or not rates[dev] > 0:
                    raise ManifestError(f"{w}: no valid rate for device {dev!r}")
                if check_files and not (Path(root) / files[dev]).is_file():
                    raise MissingFileError(f"{w}: data file not found: {Path(root) / files[dev]}")
            jumps = _require(m, "jump_windows_s", list, w)
            if len(jumps) != 2:
                raise ManifestError(f"{w}: need two jump windows")
            sign = m.get("ap_braking_sign", "negative")
            if sign != "negative":
                raise ManifestError(f"{w}: only ap_braking_sign 'negative' is supported")
            index.measurements[mid] = Measurement(
                mid, cid, aid, _require(m, "speed_mps", float, w),
                {d: files[d] for d in DEVICES}, {d: float(rates[d]) for d in DEVICES},
                tuple(_window(v, w) for v in jumps),
                _window(_require(m, "run_window_s", list, w), w),
                sign,
            )
            mids.append(mid)
        index.collections[cid] = Collection(cid, aid, tuple(mids))
    return index


def load_manifest(path, check_files: bool = True) -> DatasetIndex:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"manifest not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    return parse_manifest(data, path.parent, check_files)


def manifest_text(index: DatasetIndex) -> str:
    return json.dumps(index.to_dict(), indent=2) + "\n"


def save_manifest(index: DatasetIndex, path) -> None:
    Path(path).write_text(manifest_text(index))


# -- measurement files -------------------------------------------------------


def _parse_csv_slow(path: Path):
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "t":
            raise RaggedRowsError(f"{path}: header must start with 't'")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise RaggedRowsError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise NonFiniteValueError(f"{path}:{lineno}: {exc}") from exc
            bad = [h for h, v in zip(header, values) if not math.isfinite(v)]
            if bad:
                raise NonFiniteValueError(f"{path}:{lineno}: non-finite value in {bad[0]!r}")
            rows.append(values)
    return header, np.array(rows, dtype=float).reshape(-1, len(header))


def load_measurement(path, rate: float | None = None) -> SampledSignal:
    """Read one device CSV into a :class:`SampledSignal`.

    The rate is inferred from the time column and, when ``rate`` is given,
    must agree with it to 0.1 %.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"measurement file not found: {path}")
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != len(header) or not np.all(np.isfinite(data)):
            raise ValueError
    except ValueError:
        # slow path only to produce a precise diagnostic
        header, data = _parse_csv_slow(path)
    if header[0] != "t":
        raise RaggedRowsError(f"{path}: header must start with 't'")
    if data.shape[0] < 1:
        raise RaggedRowsError(f"{path}: no samples")
    t = data[:, 0]
    if data.shape[0] >= 2:
        dt = np.diff(t)
        if np.any(dt <= 0):
            raise RateMismatchError(f"{path}: time column is not increasing")
        inferred = 1.0 / float(np.median(dt))
        if rate is None:
            rate = inferred
        elif abs(inferred - rate) > RATE_TOL * rate:
            raise RateMismatchError(f"{path}: declared {rate} Hz but time column implies {inferred:.3f} Hz")
    elif rate is None:
        raise RateMismatchError(f"{path}: cannot infer a rate from one sample")
    return SampledSignal(float(rate), tuple(header[1:]), data[:, 1:], float(t[0]))


def save_measurement(path, signal: SampledSignal) -> None:
    """Write a device CSV; values use the shortest exact float representation."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(("t",) + signal.channels)]
    for ti, row in zip(signal.times.tolist(), signal.data.tolist()):
        lines.append(f"{ti:.6f}," + ",".join(map(repr, row)))
    path.write_text("\n".join(lines) + "\n")


def load_devices(index: DatasetIndex, measurement_id: str) -> dict:
    m = index.measurements[measurement_id]
    return {dev: load_measurement(index.path(measurement_id, dev), m.rates[dev]) for dev in DEVICES}


# -- step store --------------------------------------------------------------

_STEP_META = ("step_id", "athlete_id", "collection_id", "measurement_id", "side", "body_weight", "speed")


def save_steps(directory, steps) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    steps = list(steps)
    channels = steps[0].channels if steps else ()
    if any(s.channels != channels for s in steps):
        raise InvalidArgumentError("all steps in a store must share channel labels")
    data = np.stack([s.data for s in steps]) if steps else np.zeros((0, 200, 0))
    np.save(directory / "steps.npy", data)
    meta = {
        "format_version": FORMAT_VERSION,
        "channels": list(channels),
        "steps": [{k: getattr(s, k) for k in _STEP_META} for s in steps],
    }
    (directory / "index.json").write_text(json.dumps(meta, indent=1) + "\n")


def load_steps(directory) -> list:
    directory = Path(directory)
    for name in ("steps.npy", "index.json"):
        if not (directory / name).is_file():
            raise MissingFileError(f"step store incomplete: {directory / name} not found")
    meta = json.loads((directory / "index.json").read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise ManifestError(f"{directory}: unsupported step store version")
    data = np.load(directory / "steps.npy")
    if data.shape[0] != len(meta["steps"]):
        raise ManifestError(f"{directory}: {data.shape[0]} arrays but {len(meta['steps'])} index entries")
    channels = tuple(meta["channels"])
    return [Step(channels, d, **m) for d, m in zip(data, meta["steps"])]


# -- scenarios and folds -----------------------------------------------------


class Scenario(enum.Enum):
    OTHERS = "others"
    PERSONAL = "personal"
    EVERYONE = "everyone"

    @classmethod
    def parse(cls, name) -> "Scenario":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise InvalidArgumentError(
                f"unknown scenario {name!r}; expected one of {[s.value for s in cls]}"
            ) from None


def make_scenario_split(steps, scenario, held_out_collection: str, exclude=()):
    """Training and validation steps for one held-out collection.

    The validation set is the held-out collection; its athlete is the
    target. ``exclude`` lists further collections withheld from training
    (the test collection during model selection). Input order is kept.
    """
    scenario = Scenario.parse(scenario)
    steps = list(steps)
    validation = [s for s in steps if s.collection_id == held_out_collection]
    if not validation:
        raise InvalidArgumentError(f"collection {held_out_collection!r} has no steps")
    target = validation[0].athlete_id
    exclude = set(exclude) | {held_out_collection}
    pool = [s for s in steps if s.collection_id not in exclude]
    others = [s for s in pool if s.athlete_id != target]
    personal = [s for s in pool if s.athlete_id == target]
    if scenario is Scenario.PERSONAL and not personal:
        raise InsufficientPersonalDataError(
            f"athlete {target!r} has no collection besides {held_out_collection!r} available for training"
        )
    # others and personal partition the pool, so EVERYONE is the pool itself
    train = {Scenario.OTHERS: others, Scenario.PERSONAL: personal, Scenario.EVERYONE: pool}[scenario]
    return train, validation


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, keys...)``; string keys hash stably."""
    words = [int(seed)] + [zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(words))


def choose_test_collection(collections_by_athlete: dict, athlete_id: str, seed: int) -> str:
    options = sorted(collections_by_athlete[athlete_id])
    return options[int(derive_rng(seed, "test", athlete_id).integers(len(options)))]


def make_fold_plan(collection_ids, seed: int, n_folds: int = 5, salt: str = "") -> tuple:
    """Validation collections for ``n_folds`` folds from a seeded shuffle."""
    ids = sorted(collection_ids)
    order = derive_rng(seed, "folds", salt).permutation(len(ids))
    return tuple(ids[i] for i in order[:n_folds])
