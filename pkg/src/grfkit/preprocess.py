"""From raw device files to aligned 200-sample steps.

Per measurement:

1. find the two jump landings in the raw vertical force and in each IMU's
   acceleration norm, and fit a linear clock warp per IMU;
2. GRF: newtons to body weights, 30 Hz low-pass, 1000 -> 500 Hz;
3. IMUs: 20 Hz low-pass on their own clock, then resample onto the GRF grid;
4. segment the run using the summed shank acceleration norms;
5. compute per-step alignment shifts and cut each step from the continuous
   signals, starting ``PREROLL`` samples before the aligned phase.

Each step keeps the sacrum channels, the shank on its own side and the GRF.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .alignment import (
    alignment_shifts,
    apply_warp,
    detect_jump_reference,
    estimate_linear_warp,
    segment_steps,
)
from .dataset import DatasetIndex, load_devices
from .errors import DataError, EmptyOverlapError
from .signal import (
    GRF,
    IMU_ACC,
    IMU_GYR,
    SAC_ACC,
    SAC_GYR,
    SH_ACC,
    SH_GYR,
    STEP_LENGTH,
    SampledSignal,
    Step,
    butterworth_lowpass,
    downsample,
)

log = logging.getLogger(__name__)

IMU_CUTOFF_HZ = 20.0
GRF_CUTOFF_HZ = 30.0
PREROLL = 10
STEP_CHANNELS = SAC_ACC + SAC_GYR + SH_ACC + SH_GYR + GRF

_IMU = IMU_ACC + IMU_GYR
_PREFIX = {"sacrum": "sac", "left_shank": "lsh", "right_shank": "rsh"}


def _labels(prefix):
    return tuple(f"{prefix}_{c}" for c in _IMU)


def acc_norm(signal: SampledSignal) -> SampledSignal:
    acc = signal.data[:, [signal.index(c) for c in IMU_ACC]]
    return SampledSignal(signal.rate, ("norm",), np.sqrt(np.sum(acc**2, axis=1)), signal.start_time)


def estimate_warps(devices: dict, jump_windows) -> dict:
    """Linear clock warp of every IMU onto the force-plate clock."""
    fz = devices["grf"].select(("fz",))
    t_grf = [detect_jump_reference(fz, w) for w in jump_windows]
    warps = {}
    for dev in _PREFIX:
        norm = acc_norm(devices[dev])
        t_imu = [detect_jump_reference(norm, w) for w in jump_windows]
        warps[dev] = estimate_linear_warp((t_imu[0], t_grf[0]), (t_imu[1], t_grf[1]))
    return warps


def synchronize(devices: dict, body_weight: float, jump_windows) -> SampledSignal:
    """All channels on one 500 Hz grid of the force-plate clock.

    Channels: ``sac_*``, ``lsh_*``, ``rsh_*`` (acc and gyr) then ``grf_*`` in BW.
    """
    warps = estimate_warps(devices, jump_windows)
    raw = devices["grf"]
    grf = SampledSignal(raw.rate, GRF, raw.data / body_weight, raw.start_time)
    grf = butterworth_lowpass(grf, GRF_CUTOFF_HZ)
    factor = int(round(raw.rate / 500.0))
    grf = downsample(grf, factor) if factor > 1 else grf
    span = (grf.start_time, grf.start_time + (grf.n_samples - 1) / grf.rate)
    parts = []
    for dev, prefix in _PREFIX.items():
        imu = butterworth_lowpass(devices[dev].select(_IMU), IMU_CUTOFF_HZ)
        imu = apply_warp(imu, warps[dev], span)
        parts.append(imu.replace(channels=_labels(prefix)))
    k0 = max(int(round(p.start_time * p.rate)) for p in parts)
    k1 = min(int(round(p.start_time * p.rate)) + p.n_samples for p in parts)
    g0 = int(round((grf.start_time) * grf.rate))
    k0, k1 = max(k0, g0), min(k1, g0 + grf.n_samples)
    if k1 <= k0:
        raise EmptyOverlapError("IMU and GRF recordings do not overlap after synchronization")
    cols = []
    for p in parts + [grf]:
        first = k0 - int(round(p.start_time * p.rate))
        cols.append(p.data[first:first + (k1 - k0)])
    channels = sum((p.channels for p in parts), ()) + GRF
    return SampledSignal(500.0, channels, np.hstack(cols), k0 / 500.0)


def _norm(sig: SampledSignal, labels) -> np.ndarray:
    return np.sqrt(np.sum(sig.data[:, [sig.index(c) for c in labels]] ** 2, axis=1))


def cut_steps(sync: SampledSignal, run_window, meta: dict, preroll: int = PREROLL) -> list:
    """Segment, align and cut the run inside ``run_window`` (force-plate time)."""
    lo = max(0, int(np.ceil((run_window[0] - sync.start_time) * sync.rate)))
    hi = min(sync.n_samples, int(np.floor((run_window[1] - sync.start_time) * sync.rate)) + 1)
    left = _norm(sync, _labels("lsh")[:3])
    right = _norm(sync, _labels("rsh")[:3])
    both = SampledSignal(sync.rate, ("shank_norm",), (left + right)[lo:hi])
    bounds = segment_steps(both, left[lo:hi], right[lo:hi])

    starts = np.array(bounds.starts) + lo
    own = [left if side == "left" else right for side in bounds.sides]
    ok = [s + STEP_LENGTH <= sync.n_samples for s in starts]
    X = np.vstack([o[s:s + STEP_LENGTH] for o, s, good in zip(own, starts, ok) if good])
    shifts = iter(alignment_shifts(X))

    steps = []
    for k, (start, side, good) in enumerate(zip(starts, bounds.sides, ok)):
        if not good:
            continue
        begin = int(start - next(shifts) - preroll)
        if begin < 0 or begin + STEP_LENGTH > sync.n_samples:
            log.warning("%s: step %d falls outside the recording and is dropped", meta["measurement_id"], k)
            continue
        p = "lsh" if side == "left" else "rsh"
        labels = _labels("sac") + _labels(p) + GRF
        data = sync.data[begin:begin + STEP_LENGTH][:, [sync.index(c) for c in labels]]
        steps.append(Step(STEP_CHANNELS, data, side=side, step_id=f"{meta['measurement_id']}:{k:03d}", **meta))
    return steps


def preprocess_measurement(index: DatasetIndex, measurement_id: str, preroll: int = PREROLL) -> list:
    m = index.measurements[measurement_id]
    bw = index.body_weights[m.athlete_id]
    sync = synchronize(load_devices(index, measurement_id), bw, m.jump_windows)
    meta = {
        "body_weight": bw,
        "athlete_id": m.athlete_id,
        "collection_id": m.collection_id,
        "measurement_id": measurement_id,
        "speed": m.speed,
    }
    return cut_steps(sync, m.run_window, meta, preroll)


@dataclass
class PreprocessResult:
    steps: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)


def preprocess_dataset(index: DatasetIndex, preroll: int = PREROLL) -> PreprocessResult:
    """Preprocess every measurement; data problems skip the measurement with a warning."""
    result = PreprocessResult()
    for mid in index.measurements:
        try:
            steps = preprocess_measurement(index, mid, preroll)
        except DataError as exc:
            log.warning("%s skipped: %s: %s", mid, type(exc).__name__, exc)
            result.failures[mid] = f"{type(exc).__name__}: {exc}"
            continue
        result.steps.extend(steps)
        result.counts[mid] = len(steps)
    return result
