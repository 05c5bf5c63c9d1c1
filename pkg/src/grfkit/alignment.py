"""Clock synchronization, step segmentation and step alignment.

Each device records an in-place jump before and after the run. The landing
edges give two anchor pairs ``(t_imu, t_grf)``, from which a linear warp maps
IMU time onto the force-plate clock. The synchronized shank signal is then
split into steps by correlating with a triangular template, and the steps
are shifted by whole samples to a common phase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .errors import (
    DegenerateAnchorError,
    EmptyOverlapError,
    ImplausibleDriftError,
    InsufficientSamplesError,
    InvalidArgumentError,
    NoReferenceFoundError,
    NoStepsFoundError,
)
from .signal import SH_ACC, SampledSignal, Step

MAX_DRIFT = 0.01
SNAP_TOL = 1e-9
# landing edge must stand this many robust standard deviations above the
# typical sample-to-sample change
JUMP_PROMINENCE = 10.0

TEMPLATE_TRIANGLE_S = 0.1
TEMPLATE_ZERO_S = 0.1
PEAK_PERCENTILE = 90.0
PEAK_FRACTION = 0.5
MIN_STEP_SEPARATION_S = 0.1
MIN_SEGMENT_S = 0.4
MAX_ALIGN_SHIFT = 20


# -- jump references and drift -----------------------------------------------


def detect_jump_reference(signal: SampledSignal, window, channel: str | None = None) -> float:
    """Time of the sharpest rising edge inside ``window = (t0, t1)``.

    The edge is the largest forward difference of the chosen channel (the
    only channel by default). The midpoint of that sample interval is
    returned, which centres the estimate on a step discontinuity instead of
    biasing it to the earlier sample.
    """
    if channel is None:
        if len(signal.channels) != 1:
            raise InvalidArgumentError("pass channel= for a multichannel signal")
        channel = signal.channels[0]
    x = signal.column(channel)
    t = signal.times
    t0, t1 = window
    inside = np.nonzero((t >= t0) & (t <= t1))[0]
    if inside.size < 2:
        raise NoReferenceFoundError(f"window [{t0:g}, {t1:g}] s holds fewer than two samples")
    lo, hi = inside[0], inside[-1]
    d = np.diff(x[lo:hi + 1])
    i = int(np.argmax(d))
    peak = d[i]
    noise = 1.4826 * np.median(np.abs(d - np.median(d)))
    if peak <= 0 or peak <= JUMP_PROMINENCE * noise:
        raise NoReferenceFoundError(
            f"no landing edge in [{t0:g}, {t1:g}] s: largest rise {peak:.3g}, noise level {noise:.3g}"
        )
    return float((t[lo + i] + t[lo + i + 1]) / 2)


@dataclass(frozen=True)
class LinearWarp:
    """``t_grf = scale * t_imu + offset``."""

    scale: float = 1.0
    offset: float = 0.0

    def __call__(self, t):
        return self.scale * np.asarray(t, dtype=float) + self.offset

    def inverse(self, t):
        return (np.asarray(t, dtype=float) - self.offset) / self.scale


def estimate_linear_warp(start_pair, end_pair, max_drift: float = MAX_DRIFT) -> LinearWarp:
    """Affine map through two ``(t_imu, t_grf)`` anchor pairs."""
    (a_imu, a_grf), (b_imu, b_grf) = start_pair, end_pair
    if not b_imu > a_imu:
        raise DegenerateAnchorError(f"anchors must be increasing in IMU time, got {a_imu} and {b_imu}")
    scale = (b_grf - a_grf) / (b_imu - a_imu)
    if abs(scale - 1.0) > max_drift:
        raise ImplausibleDriftError(f"clock scale {scale:.6f} is outside [{1 - max_drift}, {1 + max_drift}]")
    return LinearWarp(float(scale), float(a_grf - scale * a_imu))


def apply_warp(signal: SampledSignal, warp: LinearWarp, span=None) -> SampledSignal:
    """Resample ``signal`` onto the target clock grid ``k / rate``.

    Grid points cover the warped extent of the signal, optionally clipped to
    ``span = (t0, t1)`` in target time. Values come from linear
    interpolation between the bracketing device samples; grid points that
    land on a device sample (within 1e-9 samples) copy it exactly.
    """
    rate = signal.rate
    lo = float(warp(signal.start_time))
    hi = float(warp(signal.start_time + (signal.n_samples - 1) / rate))
    if span is not None:
        lo, hi = max(lo, span[0]), min(hi, span[1])
    k0 = int(np.ceil(lo * rate - SNAP_TOL))
    k1 = int(np.floor(hi * rate + SNAP_TOL))
    if k1 < k0:
        raise EmptyOverlapError(f"warped signal does not overlap the target span [{lo:g}, {hi:g}] s")
    k = np.arange(k0, k1 + 1)
    f = (warp.inverse(k / rate) - signal.start_time) * rate
    near = np.round(f)
    f = np.where(np.abs(f - near) < SNAP_TOL, near, f)
    f = np.clip(f, 0, signal.n_samples - 1)
    i = np.minimum(np.floor(f).astype(int), signal.n_samples - 2) if signal.n_samples > 1 else np.zeros_like(k)
    w = (f - i)[:, None]
    data = signal.data
    if signal.n_samples == 1:
        out = np.repeat(data, k.size, axis=0)
    else:
        out = data[i] * (1 - w) + data[i + 1] * w
        exact = w[:, 0] == 0
        out[exact] = data[i[exact]]
    return SampledSignal(rate, signal.channels, out, float(k0 / rate))


# -- segmentation ------------------------------------------------------------


def step_template(rate: float = 500.0) -> np.ndarray:
    """Symmetric 100 ms triangle (peak at 50 ms) followed by 100 ms of zeros.

    At 500 Hz: 25 samples up, 25 down, 50 zeros.
    """
    half = int(round(TEMPLATE_TRIANGLE_S * rate / 2))
    rise = np.arange(half) / half
    fall = 1 - np.arange(half) / half
    return np.concatenate([rise, fall, np.zeros(int(round(TEMPLATE_ZERO_S * rate)))])


@dataclass(frozen=True)
class StepBoundaries:
    starts: tuple
    sides: tuple

    def __len__(self):
        return len(self.starts)

    def __iter__(self):
        return iter(zip(self.starts, self.sides))


def template_correlation(x: np.ndarray, rate: float = 500.0) -> np.ndarray:
    """Valid-mode correlation of the median-removed signal with the template."""
    x = np.asarray(x, dtype=float)
    return np.correlate(x - np.median(x), step_template(rate), mode="valid")


def _assign_sides(starts, left, right, width):
    if left is None or right is None:
        return tuple("left" if k % 2 == 0 else "right" for k in range(len(starts)))
    votes = 0
    for k, s in enumerate(starts):
        win = slice(s, s + width)
        left_first = np.max(left[win]) >= np.max(right[win])
        # parity vote: does "left on even steps" explain this boundary?
        votes += 1 if left_first == (k % 2 == 0) else -1
    even = "left" if votes >= 0 else "right"
    odd = "right" if even == "left" else "left"
    return tuple(even if k % 2 == 0 else odd for k in range(len(starts)))


def segment_steps(shank_norm: SampledSignal, left=None, right=None, channel: str | None = None) -> StepBoundaries:
    """Step starts from template-correlation maxima.

    ``shank_norm`` is a 500 Hz acceleration norm showing an impact at every
    foot contact (the pipeline passes the sum of both shank norms).
    Maxima must exceed half the 90th percentile of the correlation trace and
    be at least 100 ms apart. When the separate ``left`` and ``right``
    norms are supplied, sides alternate with the phase that agrees with the
    larger shank response at most boundaries; otherwise the first step is
    labelled left.
    """
    channel = channel or shank_norm.channels[0]
    x = shank_norm.column(channel)
    rate = shank_norm.rate
    if x.size < int(round(MIN_SEGMENT_S * rate)):
        raise InsufficientSamplesError(f"need at least {MIN_SEGMENT_S} s of signal, got {x.size} samples")
    c = template_correlation(x, rate)
    thr = PEAK_FRACTION * np.percentile(c, PEAK_PERCENTILE)
    sep = int(round(MIN_STEP_SEPARATION_S * rate))
    peaks, _ = find_peaks(c, distance=sep)
    peaks = peaks[(c[peaks] > thr) & (c[peaks] > 0)]
    if peaks.size == 0:
        raise NoStepsFoundError("no template-correlation maximum above the detection threshold")
    starts = tuple(int(p) for p in peaks)
    width = int(round(TEMPLATE_TRIANGLE_S * rate))
    return StepBoundaries(starts, _assign_sides(starts, left, right, width))


# -- alignment ---------------------------------------------------------------


def _best_shift(x, ref, max_shift):
    shifts = np.arange(-max_shift, max_shift + 1)
    scores = np.array([np.dot(np.roll(x, s), ref) for s in shifts])
    return int(shifts[np.argmax(scores)])


def alignment_shifts(X, max_shift: int = MAX_ALIGN_SHIFT, template=None) -> np.ndarray:
    """Integer shifts that bring each row of ``X`` to a common phase.

    ``np.roll(X[i], shift[i])`` is the aligned row. Rows are first matched
    one by one to the running mean of the rows already aligned, then once
    more to the mean of all of them, and the shifts are re-centred on their
    median. Finally one common delay is added so that the mean correlation
    with the step template is largest.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X = X - X.mean(axis=1, keepdims=True)
    n = X.shape[0]
    shifts = np.zeros(n, dtype=int)
    total = X[0].copy()
    for i in range(1, n):
        shifts[i] = _best_shift(X[i], total / i, max_shift)
        total += np.roll(X[i], shifts[i])
    if n > 1:
        ref = np.mean([np.roll(X[i], shifts[i]) for i in range(n)], axis=0)
        shifts = np.array([_best_shift(X[i], ref, max_shift) for i in range(n)])
        shifts -= int(np.round(np.median(shifts)))
    aligned_mean = np.mean([np.roll(X[i], shifts[i]) for i in range(n)], axis=0)
    tmpl = step_template() if template is None else np.asarray(template, dtype=float)
    padded = np.zeros(X.shape[1])
    m = min(tmpl.size, padded.size)
    padded[:m] = tmpl[:m]
    tmpl = padded - padded.mean()
    delay = _best_shift(aligned_mean, tmpl, max_shift)
    return shifts + delay


def alignment_signal(step: Step) -> np.ndarray:
    """Acceleration norm of the shank on the stepping side."""
    return np.sqrt(np.sum(step.data[:, [step.index(c) for c in SH_ACC]] ** 2, axis=1))


def align_steps(steps, max_shift: int = MAX_ALIGN_SHIFT) -> list:
    """Circularly shift every channel of each step by its alignment shift."""
    steps = list(steps)
    if not steps:
        return []
    shifts = alignment_shifts(np.vstack([alignment_signal(s) for s in steps]), max_shift)
    return [s.with_data(np.roll(s.data, int(k), axis=0)) for s, k in zip(steps, shifts)]
