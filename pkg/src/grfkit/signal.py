"""Core time-series containers and preprocessing primitives."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .errors import (
    InsufficientSamplesError,
    InvalidArgumentError,
    InvalidCutoffError,
    UnknownChannelError,
)

STEP_LENGTH = 200
STEP_RATE = 500.0

SAC_ACC = ("sac_acc_x", "sac_acc_y", "sac_acc_z")
SAC_GYR = ("sac_gyr_x", "sac_gyr_y", "sac_gyr_z")
# shank channels of a step always come from the shank on the stepping side
SH_ACC = ("sh_acc_x", "sh_acc_y", "sh_acc_z")
SH_GYR = ("sh_gyr_x", "sh_gyr_y", "sh_gyr_z")
GRF = ("grf_x", "grf_y", "grf_z")

IMU_ACC = ("acc_x", "acc_y", "acc_z")
IMU_GYR = ("gyr_x", "gyr_y", "gyr_z")


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SampledSignal:
    """Uniformly sampled multichannel time series.

    ``data`` has shape ``(n_samples, n_channels)``; sample ``i`` sits at
    ``start_time + i / rate`` seconds.
    """

    rate: float
    channels: tuple
    data: np.ndarray
    start_time: float = 0.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        channels = tuple(self.channels)
        if not self.rate > 0:
            raise InvalidArgumentError(f"rate must be positive, got {self.rate}")
        if data.ndim != 2 or data.shape[1] != len(channels):
            raise InvalidArgumentError(
                f"data shape {data.shape} does not match {len(channels)} channels"
            )
        if len(set(channels)) != len(channels):
            raise InvalidArgumentError(f"duplicate channel labels in {channels}")
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("signal contains NaN or Inf samples")
        object.__setattr__(self, "rate", float(self.rate))
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "start_time", float(self.start_time))

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(self.n_samples) / self.rate

    @property
    def duration(self) -> float:
        return self.n_samples / self.rate

    def index(self, label: str) -> int:
        try:
            return self.channels.index(label)
        except ValueError:
            raise UnknownChannelError(
                f"channel {label!r} not in {list(self.channels)}"
            ) from None

    def column(self, label: str) -> np.ndarray:
        return self.data[:, self.index(label)]

    def select(self, labels) -> "SampledSignal":
        idx = [self.index(lb) for lb in labels]
        return self.replace(data=self.data[:, idx], channels=tuple(labels))

    def slice(self, start: int, stop: int) -> "SampledSignal":
        return self.replace(
            data=self.data[start:stop], start_time=self.start_time + start / self.rate
        )

    def replace(self, **changes) -> "SampledSignal":
        kw = dict(
            rate=self.rate,
            channels=self.channels,
            data=self.data,
            start_time=self.start_time,
        )
        kw.update(changes)
        return SampledSignal(**kw)


@dataclass(frozen=True)
class Step:
    """One foot contact: ``STEP_LENGTH`` samples at ``STEP_RATE`` Hz per channel."""

    channels: tuple
    data: np.ndarray
    side: str
    body_weight: float
    athlete_id: str = ""
    collection_id: str = ""
    measurement_id: str = ""
    speed: float = 0.0
    step_id: str = ""
    rate: float = field(default=STEP_RATE)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        channels = tuple(self.channels)
        if data.shape != (STEP_LENGTH, len(channels)):
            raise InvalidArgumentError(
                f"step data must be {STEP_LENGTH} x {len(channels)}, got {data.shape}"
            )
        if self.side not in ("left", "right"):
            raise InvalidArgumentError(f"side must be 'left' or 'right', got {self.side!r}")
        if not self.body_weight > 0:
            raise InvalidArgumentError("body_weight must be positive")
        if float(self.rate) != STEP_RATE:
            raise InvalidArgumentError(f"steps are sampled at {STEP_RATE} Hz")
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("step contains NaN or Inf samples")
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "body_weight", float(self.body_weight))
        object.__setattr__(self, "rate", float(self.rate))

    def index(self, label: str) -> int:
        try:
            return self.channels.index(label)
        except ValueError:
            raise UnknownChannelError(
                f"step has no channel {label!r} (has {list(self.channels)})"
            ) from None

    def column(self, label: str) -> np.ndarray:
        return self.data[:, self.index(label)]

    def as_signal(self, labels=None) -> SampledSignal:
        sig = SampledSignal(self.rate, self.channels, self.data)
        return sig if labels is None else sig.select(labels)

    def with_data(self, data) -> "Step":
        return Step(
            channels=self.channels,
            data=data,
            side=self.side,
            body_weight=self.body_weight,
            athlete_id=self.athlete_id,
            collection_id=self.collection_id,
            measurement_id=self.measurement_id,
            speed=self.speed,
            step_id=self.step_id,
            rate=self.rate,
        )


class SensorSet(enum.Enum):
    """Input signal combinations.

    Feature order is fixed: sacrum before shank, acceleration before angular
    velocity, x/y/z for the 3D variant.
    """

    ALL = "all"
    ACC = "acc"
    ANG = "ang"
    SACRUM = "sacrum"
    SHANKS = "shanks"
    SAC_ACC3D = "sac-acc3d"
    SAC_ACC = "sac-acc"

    @classmethod
    def parse(cls, name: str) -> "SensorSet":
        key = name.strip().lower().replace("_", "-").replace("/", "-")
        if key == "shank":
            key = "shanks"
        for member in cls:
            if member.value == key:
                return member
        raise InvalidArgumentError(
            f"unknown sensor set {name!r}; expected one of {[m.value for m in cls]}"
        )

    @property
    def features(self) -> tuple:
        """Feature definitions as ``(kind, labels)`` with kind ``norm`` or ``raw``."""
        return _FEATURES[self]

    @property
    def n_channels(self) -> int:
        return len(self.features)

    @property
    def raw_channels(self) -> tuple:
        out = []
        for _, labels in self.features:
            out.extend(labels)
        return tuple(out)


_FEATURES = {
    SensorSet.ALL: (("norm", SAC_ACC), ("norm", SH_ACC), ("norm", SAC_GYR), ("norm", SH_GYR)),
    SensorSet.ACC: (("norm", SAC_ACC), ("norm", SH_ACC)),
    SensorSet.ANG: (("norm", SAC_GYR), ("norm", SH_GYR)),
    SensorSet.SACRUM: (("norm", SAC_ACC), ("norm", SAC_GYR)),
    SensorSet.SHANKS: (("norm", SH_ACC), ("norm", SH_GYR)),
    SensorSet.SAC_ACC3D: (("raw", SAC_ACC[:1]), ("raw", SAC_ACC[1:2]), ("raw", SAC_ACC[2:])),
    SensorSet.SAC_ACC: (("norm", SAC_ACC),),
}


def _butter(order: int, cutoff: float, rate: float):
    if not isinstance(order, (int, np.integer)) or order < 1:
        raise InvalidArgumentError(f"filter order must be a positive integer, got {order!r}")
    if not 0 < cutoff < rate / 2:
        raise InvalidCutoffError(
            f"cutoff {cutoff} Hz must lie strictly between 0 and Nyquist ({rate / 2} Hz)"
        )
    # scipy prewarps the analog prototype, so the -3 dB point lands on `cutoff`
    return sps.butter(int(order), cutoff, btype="low", fs=rate)


def zero_phase_lowpass(x: np.ndarray, cutoff: float, rate: float, order: int = 4) -> np.ndarray:
    """Forward-backward Butterworth low-pass along axis 0 of a plain array."""
    b, a = _butter(order, cutoff, rate)
    x = np.asarray(x, dtype=float)
    if x.shape[0] <= 6 * order:
        raise InsufficientSamplesError(
            f"need more than {6 * order} samples to filter, got {x.shape[0]}"
        )
    padlen = min(3 * max(len(a), len(b)), x.shape[0] - 1)
    head = 2 * x[:1] - x[padlen:0:-1]
    tail = 2 * x[-1:] - x[-2:-padlen - 2:-1]
    padded = np.concatenate([head, x, tail], axis=0)
    # Gustafsson initial conditions make forward-backward equal backward-forward,
    # so filtering commutes with time reversal
    y = sps.filtfilt(b, a, padded, axis=0, method="gust")
    return y[padlen:padlen + x.shape[0]]


def butterworth_lowpass(signal: SampledSignal, cutoff: float, order: int = 4) -> SampledSignal:
    """Zero-phase Butterworth low-pass of every channel.

    Parameters
    ----------
    signal : SampledSignal
    cutoff : float
        -3 dB frequency of a single pass, in Hz.
    order : int
        Butterworth order of a single pass.

    Returns
    -------
    SampledSignal
        Same rate, channels and length. Because the filter runs forward and
        backward, the combined magnitude response is ``|H(f)|**2`` and the
        phase is zero.
    """
    return signal.replace(data=zero_phase_lowpass(signal.data, cutoff, signal.rate, order))


def downsample(signal: SampledSignal, factor: int, antialias: bool = True) -> SampledSignal:
    """Keep every ``factor``-th sample.

    With ``antialias`` the signal first goes through a 4th-order zero-phase
    low-pass at 0.8 times the output Nyquist frequency.
    """
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise InvalidArgumentError(f"factor must be a positive integer, got {factor!r}")
    out_rate = signal.rate / factor
    if abs(out_rate - round(out_rate)) > 1e-9:
        raise InvalidArgumentError(
            f"rate {signal.rate} Hz is not divisible into an integral rate by {factor}"
        )
    data = signal.data
    if antialias and factor > 1:
        data = zero_phase_lowpass(data, 0.8 * out_rate / 2, signal.rate, 4)
    return signal.replace(data=data[::factor], rate=float(round(out_rate)))


def l2_norm_channels(signal: SampledSignal, triple, label: str | None = None) -> SampledSignal:
    """Magnitude of three channels, as a single-channel signal."""
    triple = tuple(triple)
    if len(triple) != 3:
        raise InvalidArgumentError("l2_norm_channels needs exactly three labels")
    idx = [signal.index(lb) for lb in triple]
    norm = np.sqrt(np.sum(signal.data[:, idx] ** 2, axis=1))
    if label is None:
        label = "norm(" + ",".join(triple) + ")"
    return signal.replace(data=norm[:, None], channels=(label,))


def normalize_by_bodyweight(grf_newtons: SampledSignal, body_weight: float) -> SampledSignal:
    """Divide force samples (N) by body weight (N), giving BW units."""
    if not body_weight > 0:
        raise InvalidArgumentError(f"body weight must be positive, got {body_weight}")
    return grf_newtons.replace(data=grf_newtons.data / float(body_weight))


def select_sensor_channels(step: Step, sensors: SensorSet) -> np.ndarray:
    """Flatten the input features of one step into a row.

    Each feature contributes its ``STEP_LENGTH`` samples contiguously, features
    in the fixed order of ``sensors.features``.
    """
    blocks = []
    for kind, labels in sensors.features:
        cols = step.data[:, [step.index(lb) for lb in labels]]
        if kind == "norm":
            blocks.append(np.sqrt(np.sum(cols**2, axis=1)))
        else:
            blocks.append(cols[:, 0])
    return np.concatenate(blocks)


def grf_row(step: Step) -> np.ndarray:
    """GRF of one step flattened as ``g_x`` block, ``g_y`` block, ``g_z`` block."""
    return np.concatenate([step.column(lb) for lb in GRF])
