"""Deterministic synthetic running dataset.

Each virtual athlete gets a latent style (body weight, impact prominence,
contact and flight times, peak forces, braking profile, sensor gains). A
measurement is a standing period, an in-place jump, a run of ``n_steps``
stances, a second jump and more standing. The GRF of a stance is an active
half-sine plus an optional impact bump; the IMU channels are fixed smooth
functions of the same stance parameters, so the IMU-to-GRF mapping is
learnable by construction. IMU clocks are offset and stretched relative to
the force plate and every signal is evaluated analytically at each
device's own sample times.

All randomness flows from ``derive_rng(seed, ...)``, so a seed fully
determines the dataset.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import (
    DEVICE_CHANNELS,
    DEVICES,
    FORMAT_VERSION,
    DatasetIndex,
    derive_rng,
    parse_manifest,
    save_manifest,
    save_measurement,
)
from .errors import InvalidArgumentError
from .signal import SampledSignal

G = 9.81
GRF_RATE = 1000.0
IMU_RATE = 500.0
SPEEDS = (3.8, 4.9)
MIN_STEPS = 60

# noise and quantization, fixed so that benchmark numbers are reproducible
GRF_NOISE_N = 2.0
ACC_NOISE = 0.15
GYR_NOISE = 0.03
FORCE_QUANT = 1e-2
ACC_QUANT = 1e-4
GYR_QUANT = 1e-5

MAX_CLOCK_OFFSET_S = 0.05
MAX_CLOCK_SCALE_DEV = 5e-4

IMPACT_WIDTH = 0.26  # fraction of stance occupied by the impact bump
SHANK_SHOCK_RISE_S = 0.015
SHANK_SHOCK_FALL_S = 0.035
SHANK_LOADING = 0.3  # stance loading on the shank, in g per unit of vertical force
JUMP_WINDOW_HALF_S = 0.25
DRIFT_AMPLITUDE = 0.12


@dataclass(frozen=True)
class AthleteStyle:
    athlete_id: str
    body_weight: float
    impact: float
    contact_time: float
    flight_time: float
    active_peak: float
    impact_height: float
    braking_fraction: float
    braking_amp: float
    propulsion_amp: float
    ml_amp: float
    asymmetry: float
    sacrum_gain: tuple
    sacrum_lag: float
    impact_attenuation: float
    shank_gain: float
    shank_shock: float
    swing_amp: float
    swing_rate: float
    sacrum_rot: float


def draw_style(rng: np.random.Generator, athlete_id: str) -> AthleteStyle:
    u = rng.uniform
    return AthleteStyle(
        athlete_id=athlete_id,
        body_weight=float(u(520, 850)),
        impact=float(u(0, 1)),
        contact_time=float(u(0.20, 0.26)),
        flight_time=float(u(0.08, 0.13)),
        active_peak=float(u(2.2, 2.8)),
        impact_height=float(u(0.4, 0.9)),
        braking_fraction=float(u(0.42, 0.52)),
        braking_amp=float(u(0.25, 0.45)),
        propulsion_amp=float(u(0.25, 0.40)),
        ml_amp=float(u(0.03, 0.10)),
        asymmetry=float(u(-0.03, 0.03)),
        sacrum_gain=tuple(float(v) for v in u(0.85, 1.15, size=3)),
        sacrum_lag=float(u(0.004, 0.012)),
        impact_attenuation=float(u(0.2, 0.4)),
        shank_gain=float(u(0.85, 1.15)),
        shank_shock=float(u(1.5, 2.5)),
        swing_amp=float(u(0.4, 0.8)),
        swing_rate=float(u(5.0, 8.0)),
        sacrum_rot=float(u(0.5, 1.5)),
    )


@dataclass(frozen=True)
class StanceParams:
    t0: float
    tc: float
    flight: float
    side: str
    active: float
    impact: float
    braking: float
    propulsion: float
    braking_fraction: float
    ml: float
    grf_gain: float = 1.0  # GRF-only modulation, invisible to the IMUs

    @property
    def sign(self) -> float:
        return 1.0 if self.side == "left" else -1.0


def plan_stances(rng, style: AthleteStyle, speed: float, n_steps: int, t_start: float,
                 session: dict, first_side: str, drift_period: int | None = None) -> list:
    """Per-step stance parameters with session offsets and step jitter."""
    tc0 = style.contact_time * (4.0 / speed) ** 0.5 * session["tc"]
    fl0 = style.flight_time * session["flight"]
    act0 = style.active_peak * (speed / 4.0) ** 0.3 * session["active"]
    out, t = [], t_start
    other = "right" if first_side == "left" else "left"
    for k in range(n_steps):
        side = first_side if k % 2 == 0 else other
        asym = 1 + (style.asymmetry if side == "left" else -style.asymmetry)
        tc = tc0 * rng.normal(1, 0.03)
        fl = fl0 * rng.normal(1, 0.05)
        gain = 1.0
        if drift_period:
            gain = 1 + DRIFT_AMPLITUDE * np.cos(2 * np.pi * (k % drift_period) / drift_period)
        p = float(np.clip(style.impact * rng.normal(1, 0.1), 0, 1))
        out.append(StanceParams(
            t0=t, tc=float(tc), flight=float(fl), side=side,
            active=float(act0 * asym * rng.normal(1, 0.04)),
            impact=p * style.impact_height,
            braking=float(style.braking_amp * speed / 4.0 * rng.normal(1, 0.05)),
            propulsion=float(style.propulsion_amp * speed / 4.0 * rng.normal(1, 0.05)),
            braking_fraction=style.braking_fraction,
            ml=style.ml_amp,
            grf_gain=float(gain),
        ))
        t += tc + fl
    return out


# -- stance shapes -----------------------------------------------------------


def stance_gz(u, active, impact):
    """Vertical GRF (BW) of one stance at normalized time ``u`` in [0, 1]."""
    u = np.asarray(u, dtype=float)
    inside = (u >= 0) & (u <= 1)
    uc = np.clip(u, 0, 1)
    bump = np.where(uc < IMPACT_WIDTH, np.sin(np.pi * uc / IMPACT_WIDTH) ** 2, 0.0)
    return np.where(inside, active * np.sin(np.pi * uc) + impact * bump, 0.0)


def stance_gy(u, braking, propulsion, fb):
    u = np.asarray(u, dtype=float)
    inside = (u >= 0) & (u <= 1)
    uc = np.clip(u, 0, 1)
    brake = -braking * np.sin(np.pi * np.clip(uc / fb, 0, 1))
    push = propulsion * np.sin(np.pi * np.clip((uc - fb) / (1 - fb), 0, 1))
    return np.where(inside, np.where(uc < fb, brake, push), 0.0)


def stance_gx(u, ml, sign):
    u = np.asarray(u, dtype=float)
    inside = (u >= 0) & (u <= 1)
    uc = np.clip(u, 0, 1)
    return np.where(inside, sign * ml * (np.sin(np.pi * uc) + 0.3 * np.sin(2 * np.pi * uc)), 0.0)


def _span(t, a, b):
    """Index slice of the sorted array ``t`` inside ``[a, b)``."""
    return slice(int(np.searchsorted(t, a)), int(np.searchsorted(t, b)))


# -- measurement timeline ----------------------------------------------------


@dataclass(frozen=True)
class Timeline:
    landings: tuple
    hop_start: float
    run_start: float
    run_end: float
    duration: float
    stances: tuple
    landing_heights: tuple


def _push_off(u):
    return (1 - u) + 1.5 * np.sin(np.pi * u) * (1 - u)


def background_gz(t, tl: Timeline) -> np.ndarray:
    """Vertical GRF (BW) outside the stances: standing, jumps and the hop in."""
    gz = np.ones_like(t)
    for t_land, height in zip(tl.landings, tl.landing_heights):
        sl = _span(t, t_land - 0.6, t_land - 0.3)
        gz[sl] = _push_off((t[sl] - (t_land - 0.6)) / 0.3)
        gz[_span(t, t_land - 0.3, t_land)] = 0.0
        sl = _span(t, t_land, t_land + 5.0)
        gz[sl] = 1 + (height - 1) * np.exp(-(t[sl] - t_land) / 0.08)
    sl = _span(t, tl.hop_start, tl.run_start - 0.15)
    gz[sl] = _push_off((t[sl] - tl.hop_start) / (tl.run_start - 0.15 - tl.hop_start))
    gz[_span(t, tl.run_start - 0.15, tl.run_end)] = 0.0
    sl = _span(t, tl.run_end, tl.run_end + 0.3)
    gz[sl] = np.sin(np.pi / 2 * (t[sl] - tl.run_end) / 0.3) ** 2
    return gz


def grf_bw(t, tl: Timeline) -> np.ndarray:
    """Noise-free GRF in BW units, columns x, y, z."""
    out = np.zeros((t.size, 3))
    out[:, 2] = background_gz(t, tl)
    for st in tl.stances:
        sl = _span(t, st.t0, st.t0 + st.tc + 1e-9)
        u = (t[sl] - st.t0) / st.tc
        out[sl, 0] += stance_gx(u, st.ml, st.sign)
        out[sl, 1] += stance_gy(u, st.braking, st.propulsion, st.braking_fraction)
        out[sl, 2] += st.grf_gain * stance_gz(u, st.active, st.impact)
    return out


def sacrum_imu(t, tl: Timeline, style: AthleteStyle, gains) -> np.ndarray:
    """Sacrum acceleration (m/s^2) and angular velocity (rad/s) at true times ``t``."""
    out = np.zeros((t.size, 6))
    out[:, 2] = G * background_gz(t, tl) * gains[2]
    lag = style.sacrum_lag
    for k, st in enumerate(tl.stances):
        sl = _span(t, st.t0 + lag, st.t0 + lag + st.tc + 1e-9)
        u = (t[sl] - st.t0 - lag) / st.tc
        vert = stance_gz(u, st.active, style.impact_attenuation * st.impact)
        out[sl, 0] += G * gains[0] * stance_gx(u, st.ml, st.sign)
        out[sl, 1] += G * gains[1] * stance_gy(u, st.braking, st.propulsion, st.braking_fraction)
        out[sl, 2] += G * gains[2] * vert
        period = st.tc + st.flight
        sl = _span(t, st.t0, st.t0 + period)
        phi = (t[sl] - st.t0) / period
        w = style.sacrum_rot
        out[sl, 3] += w * st.sign * np.sin(2 * np.pi * phi)
        out[sl, 4] += 0.5 * w * np.sin(np.pi * phi) * st.active / 2.5
        out[sl, 5] += 0.3 * w * st.sign * np.cos(2 * np.pi * phi)
    return out


def shank_imu(t, tl: Timeline, style: AthleteStyle, side: str, gain: float) -> np.ndarray:
    """Shank acceleration and angular velocity for the ``side`` leg."""
    out = np.zeros((t.size, 6))
    out[:, 2] = G * background_gz(t, tl)
    for t_land in tl.landings:
        sl = _span(t, t_land, t_land + 1.0)
        out[sl, 2] += G * 4.0 * np.exp(-(t[sl] - t_land) / 0.03)
    own = [st for st in tl.stances if st.side == side]
    for j, st in enumerate(own):
        sl = _span(t, st.t0, st.t0 + st.tc + 1e-9)
        u = (t[sl] - st.t0) / st.tc
        out[sl, 2] += G * gain * SHANK_LOADING * stance_gz(u, st.active, 0.0)
        out[sl, 5] -= 0.9 / st.tc * np.sin(np.pi * u)
        # tibial shock: asymmetric triangle at contact
        amp = G * gain * (style.shank_shock + 4.0 * st.impact / max(style.impact_height, 1e-9))
        rise, fall = SHANK_SHOCK_RISE_S, SHANK_SHOCK_FALL_S
        sl = _span(t, st.t0, st.t0 + rise)
        out[sl, 2] += amp * (t[sl] - st.t0) / rise
        sl = _span(t, st.t0 + rise, st.t0 + rise + fall)
        out[sl, 2] += amp * (1 - (t[sl] - st.t0 - rise) / fall)
        # swing until the next contact of this leg; the first contact is
        # preceded by a swing of the same length
        toe_off = st.t0 + st.tc
        nxt = own[j + 1].t0 if j + 1 < len(own) else toe_off + 2 * st.flight + st.tc
        swings = [(toe_off, nxt)] + ([(st.t0 - st.tc - 2 * st.flight, st.t0)] if j == 0 else [])
        for a, b in swings:
            sl = _span(t, a, b)
            psi = (t[sl] - a) / (b - a)
            out[sl, 0] += G * gain * style.swing_amp * np.sin(2 * np.pi * psi)
            out[sl, 5] += style.swing_rate * np.sin(np.pi * psi)
    return out


# -- one measurement ---------------------------------------------------------


@dataclass(frozen=True)
class MeasurementTruth:
    contact_times: tuple
    sides: tuple
    clock: dict
    landings: tuple
    body_weight: float


def build_timeline(rng, style, speed, n_steps, session, drift_period=None, min_duration_s=None) -> Timeline:
    t_land1 = 1.5 + float(rng.uniform(0, 0.3))
    hop_start = t_land1 + 1.2
    run_start = hop_start + 0.45
    first_side = "left" if rng.uniform() < 0.5 else "right"
    stances = plan_stances(rng, style, speed, n_steps, run_start, session, first_side, drift_period)
    last = stances[-1]
    run_end = last.t0 + last.tc + last.flight
    t_land2 = run_end + 1.5 + float(rng.uniform(0, 0.3))
    duration = t_land2 + 1.5
    if min_duration_s is not None:
        duration = max(duration, float(min_duration_s))
    heights = tuple(float(h) for h in rng.uniform(3.0, 4.0, size=2))
    return Timeline((t_land1, t_land2), hop_start, run_start, run_end, duration, tuple(stances), heights)


def _quantize(x, q):
    return np.round(x / q) * q


def generate_measurement(seed: int, style: AthleteStyle, speed: float, n_steps: int, session: dict,
                         key: str, drift_period: int | None = None, min_duration_s: float | None = None):
    """Device signals for one measurement plus the generator's ground truth."""
    rng = derive_rng(seed, "measurement", key)
    tl = build_timeline(rng, style, speed, n_steps, session, drift_period, min_duration_s)
    gains = tuple(g * session["sensor"] for g in style.sacrum_gain)

    n_grf = int(round(tl.duration * GRF_RATE))
    t = np.arange(n_grf) / GRF_RATE
    force = grf_bw(t, tl) * style.body_weight + rng.normal(0, GRF_NOISE_N, (n_grf, 3))
    signals = {"grf": SampledSignal(GRF_RATE, DEVICE_CHANNELS["grf"], _quantize(force, FORCE_QUANT))}

    clock = {}
    n_imu = int(round(tl.duration * IMU_RATE))
    for dev in DEVICES[1:]:
        scale = 1 + float(rng.uniform(-MAX_CLOCK_SCALE_DEV, MAX_CLOCK_SCALE_DEV))
        offset = float(rng.uniform(-MAX_CLOCK_OFFSET_S, MAX_CLOCK_OFFSET_S))
        clock[dev] = (scale, offset)
        # a device sample at its own time tau happened at true time scale*tau + offset
        tau = np.arange(n_imu) / IMU_RATE
        t_true = scale * tau + offset
        if dev == "sacrum":
            x = sacrum_imu(t_true, tl, style, gains)
        else:
            x = shank_imu(t_true, tl, style, dev.split("_")[0], style.shank_gain * session["sensor"])
        x[:, :3] = _quantize(x[:, :3] + rng.normal(0, ACC_NOISE, (n_imu, 3)), ACC_QUANT)
        x[:, 3:] = _quantize(x[:, 3:] + rng.normal(0, GYR_NOISE, (n_imu, 3)), GYR_QUANT)
        signals[dev] = SampledSignal(IMU_RATE, DEVICE_CHANNELS[dev], x)
    truth = MeasurementTruth(
        tuple(st.t0 for st in tl.stances), tuple(st.side for st in tl.stances), clock,
        tl.landings, style.body_weight,
    )
    windows = [[round(tl_ - JUMP_WINDOW_HALF_S, 6), round(tl_ + JUMP_WINDOW_HALF_S, 6)] for tl_ in tl.landings]
    run_window = [round(tl.run_start - 0.3, 6), round(tl.run_end + 0.3, 6)]
    return signals, truth, windows, run_window


# -- whole dataset -----------------------------------------------------------


def _session(rng) -> dict:
    return {
        "tc": float(rng.uniform(0.98, 1.02)),
        "flight": float(rng.uniform(0.95, 1.05)),
        "active": float(rng.uniform(0.97, 1.03)),
        "sensor": float(rng.uniform(0.97, 1.03)),
    }


def synth_generate(
    out_dir,
    seed: int = 0,
    n_athletes: int = 4,
    collections_per_athlete: int = 2,
    speeds=SPEEDS,
    steps_per_measurement: int = MIN_STEPS,
    drift_period: int | None = None,
    min_duration_s: float | None = None,
) -> DatasetIndex:
    """Write a dataset (CSV files, ``manifest.json`` and ``truth.json``) to ``out_dir``."""
    if n_athletes < 1 or collections_per_athlete < 1 or not speeds:
        raise InvalidArgumentError("need at least one athlete, collection and speed")
    if steps_per_measurement < MIN_STEPS:
        raise InvalidArgumentError(f"steps_per_measurement must be at least {MIN_STEPS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    athletes, collections, truth = [], [], {}
    for a in range(n_athletes):
        aid = f"A{a + 1:02d}"
        style = draw_style(derive_rng(seed, "athlete", aid), aid)
        athletes.append({"athlete_id": aid, "body_weight_N": round(style.body_weight, 3)})
        style = AthleteStyle(**{**asdict(style), "body_weight": round(style.body_weight, 3)})
        for c in range(collections_per_athlete):
            cid = f"{aid}-C{c + 1}"
            session = _session(derive_rng(seed, "collection", cid))
            measurements = []
            for s_i, speed in enumerate(speeds):
                mid = f"{cid}-S{s_i + 1}"
                signals, tr, windows, run_window = generate_measurement(
                    seed, style, float(speed), steps_per_measurement, session, mid, drift_period, min_duration_s
                )
                files = {}
                for dev in DEVICES:
                    rel = f"{mid}/{dev}.csv"
                    save_measurement(out / rel, signals[dev])
                    files[dev] = rel
                measurements.append({
                    "measurement_id": mid,
                    "speed_mps": float(speed),
                    "files": files,
                    "rates": {dev: signals[dev].rate for dev in DEVICES},
                    "jump_windows_s": windows,
                    "run_window_s": run_window,
                    "ap_braking_sign": "negative",
                })
                truth[mid] = asdict(tr)
            collections.append({"collection_id": cid, "athlete_id": aid, "measurements": measurements})
    manifest = {"format_version": FORMAT_VERSION, "athletes": athletes, "collections": collections}
    index = parse_manifest(manifest, out)
    save_manifest(index, out / "manifest.json")
    (out / "truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n")
    return index
