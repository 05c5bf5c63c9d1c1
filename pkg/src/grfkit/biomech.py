"""Discrete biomechanical variables of a single stance.

All functions take a GRF container (a :class:`~grfkit.signal.Step` or a
:class:`~grfkit.signal.SampledSignal`) with ``grf_x``, ``grf_y``, ``grf_z``
channels in body-weight units. The GRF is treated as the piecewise-linear
interpolant of its samples: threshold crossings, window endpoints and
integrals are all evaluated on that interpolant.

Braking is the part of the stance where ``grf_y < 0``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import NoStanceError, StanceTooShortError, TruncatedStanceError
from .signal import GRF, SampledSignal, zero_phase_lowpass

STANCE_THRESHOLD_N = 50.0
LOADING_WINDOW_S = 0.025
ACTIVE_PEAK_FROM = 0.3
GRAVITY = 9.81
BIOMECH_LOWPASS_HZ = 50.0

VARIABLES = (
    "loading_rate",
    "contact_time",
    "braking_time",
    "braking_percentage",
    "active_peak",
    "average_vertical_force",
    "net_vertical_impulse",
    "ap_velocity_change",
)

UNITS = {
    "loading_rate": "bw_per_s",
    "contact_time": "s",
    "braking_time": "s",
    "braking_percentage": "fraction",
    "active_peak": "bw",
    "average_vertical_force": "bw",
    "net_vertical_impulse": "bw_s",
    "ap_velocity_change": "m_per_s",
    "vertical_impulse": "bw_s",
}


@dataclass(frozen=True)
class StanceEvents:
    """Stance timing in seconds, measured from ``origin``.

    ``origin`` is the time of the sample preceding the 50 N crossing, so
    every derived quantity depends only on the waveform after it.
    """

    origin: float
    start: float
    end: float
    braking_time: float

    @property
    def contact_time(self) -> float:
        return self.end - self.start

    @property
    def absolute_start(self) -> float:
        return self.origin + self.start

    @property
    def absolute_end(self) -> float:
        return self.origin + self.end


class _Grf:
    """Samples of one stance re-based at an integer sample index."""

    def __init__(self, grf, base: int = 0):
        self.rate = float(grf.rate)
        self.t0 = float(getattr(grf, "start_time", 0.0))
        self.xyz = np.column_stack([grf.column(c) for c in GRF])
        self.base = base

    def rebased(self, base: int) -> "_Grf":
        out = object.__new__(_Grf)
        out.rate, out.t0, out.xyz, out.base = self.rate, self.t0, self.xyz, base
        return out

    @property
    def t(self) -> np.ndarray:
        return (np.arange(self.xyz.shape[0]) - self.base) / self.rate

    def knots(self, a: float, b: float, comp: int):
        """Interpolant knots on ``[a, b]``: both endpoints plus interior samples."""
        t = self.t
        v = self.xyz[:, comp]
        inner = (t > a) & (t < b)
        tk = np.concatenate([[a], t[inner], [b]])
        vk = np.concatenate([[np.interp(a, t, v)], v[inner], [np.interp(b, t, v)]])
        return tk, vk

    def at(self, tau: float, comp: int) -> float:
        return float(np.interp(tau, self.t, self.xyz[:, comp]))


def _events(g: _Grf, body_weight: float, threshold_n: float):
    gz = g.xyz[:, 2]
    thr = threshold_n / body_weight
    above = gz > thr
    if not above.any():
        raise NoStanceError(
            f"vertical GRF never exceeds {threshold_n} N (peak {gz.max() * body_weight:.1f} N)"
        )
    i = int(np.argmax(above))
    base = max(i - 1, 0)
    g = g.rebased(base)
    dt = 1.0 / g.rate
    if i == 0:
        ts = 0.0
    else:
        ts = (thr - gz[i - 1]) / (gz[i] - gz[i - 1]) * dt
    below = np.nonzero(gz[i + 1:] < thr)[0]
    if below.size == 0:
        raise TruncatedStanceError(f"vertical GRF never drops back below {threshold_n} N")
    j = i + 1 + int(below[0])
    te = (j - 1 - base + (thr - gz[j - 1]) / (gz[j] - gz[j - 1])) * dt
    return g, ts, te


def _negative_measure(tk: np.ndarray, vk: np.ndarray) -> float:
    """Length of the set where a piecewise-linear function is negative."""
    t0, t1 = tk[:-1], tk[1:]
    v0, v1 = vk[:-1], vk[1:]
    seg = t1 - t0
    both = (v0 < 0) & (v1 < 0)
    cross = (v0 < 0) != (v1 < 0)
    total = seg[both].sum()
    if cross.any():
        a, b, h = v0[cross], v1[cross], seg[cross]
        frac = a / (a - b)  # fraction of the segment before the zero
        total += np.where(a < 0, frac * h, (1 - frac) * h).sum()
    return float(total)


def stance_events(grf, body_weight: float, threshold_n: float = STANCE_THRESHOLD_N) -> StanceEvents:
    """Locate stance start/end at the ``threshold_n`` crossings of ``BW * g_z``.

    Crossings are linearly interpolated between the bracketing samples. If
    the first sample is already above threshold the stance starts there.
    """
    g, ts, te = _events(_Grf(grf), body_weight, threshold_n)
    tk, vk = g.knots(ts, te, 1)
    return StanceEvents(g.t0 + g.base / g.rate, ts, te, _negative_measure(tk, vk))


def _rebase(grf, events: StanceEvents) -> _Grf:
    g = _Grf(grf)
    return g.rebased(int(round((events.origin - g.t0) * g.rate)))


def loading_rate(grf, events: StanceEvents) -> float:
    """Mean slope of ``g_z`` over the first 25 ms of stance (BW/s)."""
    if events.start + LOADING_WINDOW_S > events.end:
        raise StanceTooShortError(
            f"stance of {events.contact_time * 1e3:.1f} ms is shorter than 25 ms"
        )
    g = _rebase(grf, events)
    return (g.at(events.start + LOADING_WINDOW_S, 2) - g.at(events.start, 2)) / LOADING_WINDOW_S


def active_peak(grf, events: StanceEvents) -> float:
    """Maximum ``g_z`` between 30 % of stance and stance end (BW)."""
    g = _rebase(grf, events)
    a = events.start + ACTIVE_PEAK_FROM * events.contact_time
    _, vk = g.knots(a, events.end, 2)
    return float(vk.max())


def vertical_impulse(grf, events: StanceEvents) -> float:
    """Trapezoidal integral of ``g_z`` over the stance (BW s)."""
    tk, vk = _rebase(grf, events).knots(events.start, events.end, 2)
    return float(np.trapezoid(vk, tk))


def vertical_aggregates(grf, events: StanceEvents, impulse_mode: str = "literal"):
    """Average vertical force (BW) and net vertical impulse (BW s).

    ``impulse_mode="literal"`` subtracts 1 from the integral, as the variable
    is usually tabulated; ``"conventional"`` integrates ``g_z - 1`` instead.
    """
    integral = vertical_impulse(grf, events)
    average = integral / events.contact_time
    if impulse_mode == "literal":
        net = integral - 1.0
    elif impulse_mode == "conventional":
        net = integral - events.contact_time
    else:
        raise ValueError(f"impulse_mode must be 'literal' or 'conventional', got {impulse_mode!r}")
    return average, net


def ap_velocity_change(grf, events: StanceEvents) -> float:
    """``9.81 * integral of g_y`` over the stance (m/s)."""
    tk, vk = _rebase(grf, events).knots(events.start, events.end, 1)
    return GRAVITY * float(np.trapezoid(vk, tk))


@dataclass(frozen=True)
class BiomechReport:
    loading_rate: float
    contact_time: float
    braking_time: float
    braking_percentage: float
    active_peak: float
    average_vertical_force: float
    net_vertical_impulse: float
    ap_velocity_change: float
    vertical_impulse: float
    impulse_mode: str = "literal"

    def values(self) -> dict:
        return {name: getattr(self, name) for name in VARIABLES}

    def net_impulse(self, mode: str) -> float:
        if mode == "literal":
            return self.vertical_impulse - 1.0
        return self.vertical_impulse - self.contact_time

    def to_dict(self) -> dict:
        d = asdict(self)
        out = {"impulse_mode": d.pop("impulse_mode")}
        for name, value in d.items():
            unit = UNITS[name]
            out[f"{name}_{unit}" if unit != "fraction" else name] = value
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _tag(exc: Exception, variable: str) -> Exception:
    new = type(exc)(f"{variable}: {exc}")
    new.variable = variable
    return new


def lowpass_grf(grf, cutoff: float = BIOMECH_LOWPASS_HZ, order: int = 4):
    cols = np.column_stack([grf.column(c) for c in GRF])
    filtered = zero_phase_lowpass(cols, cutoff, grf.rate, order)
    return SampledSignal(grf.rate, GRF, filtered, getattr(grf, "start_time", 0.0))


def compute_all(
    grf,
    body_weight: float,
    impulse_mode: str = "literal",
    lowpass: bool = True,
    threshold_n: float = STANCE_THRESHOLD_N,
) -> BiomechReport:
    """Low-pass the GRF at 50 Hz (4th order, zero phase), then compute every variable."""
    if lowpass:
        grf = lowpass_grf(grf)
    try:
        events = stance_events(grf, body_weight, threshold_n)
    except (NoStanceError, TruncatedStanceError) as exc:
        raise _tag(exc, "contact_time") from exc
    try:
        lr = loading_rate(grf, events)
    except StanceTooShortError as exc:
        raise _tag(exc, "loading_rate") from exc
    average, net = vertical_aggregates(grf, events, impulse_mode)
    tc = events.contact_time
    return BiomechReport(
        loading_rate=lr,
        contact_time=tc,
        braking_time=events.braking_time,
        braking_percentage=events.braking_time / tc,
        active_peak=active_peak(grf, events),
        average_vertical_force=average,
        net_vertical_impulse=net,
        ap_velocity_change=ap_velocity_change(grf, events),
        vertical_impulse=vertical_impulse(grf, events),
        impulse_mode=impulse_mode,
    )
