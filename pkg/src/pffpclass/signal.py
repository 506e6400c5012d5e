"""Penetrometer signal processing.

Turns a raw accelerometer record into a penetration profile (deceleration,
velocity and displacement from seabed contact to rest) and derives the two
feature sets consumed by the classifiers:

* ``SummaryFeatures``: normalized peak deceleration and penetration depth.
* ``FeatureVector``: normalized deceleration averaged over 1 cm depth bins,
  zero-padded to a fixed length of 211.

Normalized deceleration is deceleration divided by impact velocity (units 1/s).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from . import N_BINS
from .errors import (
    DepthExceedsRange,
    InvalidRecord,
    NoImpactFound,
    NonPositiveImpactVelocity,
    TooShort,
    VelocityNeverReachesZero,
)

STANDARD_GRAVITY = 9.80665  # m/s^2
NOMINAL_RATE = 2000.0  # Hz
BIN_WIDTH = 0.01  # m
MAX_DEPTH = N_BINS * BIN_WIDTH  # 2.11 m
RESIDUAL_VELOCITY = 0.05  # fraction of impact velocity accepted as "stopped"
RAW_HEADER = ("time_s", "accel_g")

# guards floor/ceil against representation error, e.g. 0.03 * 100 = 3.0000000000000004
_BIN_EPS = 1e-9


@dataclass(frozen=True)
class RawRecord:
    """Accelerometer samples in g, with time in seconds."""

    time: np.ndarray
    accel_g: np.ndarray
    sampling_rate: float = NOMINAL_RATE
    deployment_id: str = ""

    def __post_init__(self):
        t = np.asarray(self.time, dtype=float)
        a = np.asarray(self.accel_g, dtype=float)
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "accel_g", a)
        if t.ndim != 1 or t.shape != a.shape:
            raise InvalidRecord("time and acceleration must be 1-D arrays of equal length")
        if t.size == 0:
            raise InvalidRecord("empty record")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(a))):
            raise InvalidRecord("non-finite sample in record")
        if t.size > 1:
            dt = np.diff(t)
            if np.any(dt <= 0):
                raise InvalidRecord("time stamps must be strictly increasing")
            nominal = 1.0 / self.sampling_rate
            if np.max(np.abs(dt - nominal)) > 0.01 * nominal:
                raise InvalidRecord(
                    f"sampling interval deviates more than 1% from {self.sampling_rate:g} Hz"
                )

    def __len__(self):
        return self.time.size


@dataclass(frozen=True)
class ImpactConfig:
    threshold_g: float = 1.0
    hold: int = 10
    baseline_samples: int = 100


@dataclass(frozen=True)
class PenetrationProfile:
    """Kinematics from seabed contact (index 0) to rest, SI units."""

    time: np.ndarray
    displacement: np.ndarray
    velocity: np.ndarray
    deceleration: np.ndarray
    impact_velocity: float

    @property
    def max_deceleration(self) -> float:
        return float(np.max(self.deceleration))

    @property
    def penetration_depth(self) -> float:
        return float(self.displacement[-1])


@dataclass(frozen=True)
class FeatureVector:
    bins: np.ndarray
    valid_bins: int


@dataclass(frozen=True)
class SummaryFeatures:
    normalized_max_deceleration: float
    penetration_depth: float

    def as_array(self) -> np.ndarray:
        return np.array([self.normalized_max_deceleration, self.penetration_depth])


def read_raw_csv(path, sampling_rate=NOMINAL_RATE, deployment_id=None) -> RawRecord:
    """Read a ``time_s,accel_g`` CSV file."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidRecord(f"{path.name}: empty file") from None
        if tuple(h.strip() for h in header) != RAW_HEADER:
            raise InvalidRecord(f"{path.name}: expected header {','.join(RAW_HEADER)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise InvalidRecord(f"{path.name}:{lineno}: expected 2 columns")
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                raise InvalidRecord(f"{path.name}:{lineno}: non-numeric value") from None
    if not rows:
        raise InvalidRecord(f"{path.name}: no samples")
    data = np.array(rows)
    return RawRecord(
        data[:, 0],
        data[:, 1],
        sampling_rate=sampling_rate,
        deployment_id=deployment_id if deployment_id is not None else path.stem,
    )


def write_raw_csv(record: RawRecord, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(RAW_HEADER) + "\n")
        for t, a in zip(record.time, record.accel_g):
            fh.write(f"{t:.6f},{a:.6f}\n")


def detect_impact(record: RawRecord, config: ImpactConfig = ImpactConfig()) -> int:
    """Index of the first sediment-contact sample.

    Contact is the first sample exceeding the free-fall baseline by
    ``config.threshold_g`` and staying above it for ``config.hold`` samples.
    The baseline is the median of the leading ``config.baseline_samples``.
    """
    a = record.accel_g
    n_base = max(1, min(config.baseline_samples, a.size))
    baseline = float(np.median(a[:n_base]))
    above = a > baseline + config.threshold_g
    if not above.any():
        raise NoImpactFound(f"deceleration never exceeds baseline + {config.threshold_g:g} g")

    hold = max(1, int(config.hold))
    if above.size >= hold:
        held = np.lib.stride_tricks.sliding_window_view(above, hold).all(axis=1)
    else:
        held = np.zeros(0, dtype=bool)
    if not held.any():
        # a run still open at the end of the record may be a real impact that was cut off
        if above[-1] and above[max(0, above.size - hold):].all():
            raise TooShort("record ends during the impact hold window")
        raise NoImpactFound(f"no exceedance held for {hold} samples")
    index = int(np.argmax(held))
    if above[index + hold:].all():
        raise TooShort("record ends before deceleration returns to rest")
    return index


def estimate_impact_velocity(record: RawRecord, impact_index: int) -> float:
    """Velocity at contact from the free-fall segment, assuming release from rest.

    During free fall the probe accelerates at ``g`` less the measured
    (drag) deceleration.
    """
    if impact_index < 1:
        raise NonPositiveImpactVelocity("no free-fall segment before impact")
    t = record.time[: impact_index + 1]
    net = (1.0 - record.accel_g[: impact_index + 1]) * STANDARD_GRAVITY
    return float(trapezoid(net, t))


def integrate_profile(
    record: RawRecord, impact_index: int, impact_velocity: float | None = None
) -> PenetrationProfile:
    """Integrate deceleration from contact until the probe stops.

    velocity = impact_velocity - integral(deceleration dt), displacement =
    integral(velocity dt), both trapezoidal. The series ends at the first
    zero crossing of velocity, located by linear interpolation.
    """
    if not 0 <= impact_index < len(record):
        raise IndexError(f"impact index {impact_index} outside record of length {len(record)}")
    if impact_velocity is None:
        impact_velocity = estimate_impact_velocity(record, impact_index)
    v0 = float(impact_velocity)
    if not v0 > 0:
        raise NonPositiveImpactVelocity(f"impact velocity {v0:g} m/s is not positive")

    t = record.time[impact_index:] - record.time[impact_index]
    decel = record.accel_g[impact_index:] * STANDARD_GRAVITY
    v = v0 - cumulative_trapezoid(decel, t, initial=0.0)

    stopped = np.flatnonzero(v <= 0.0)
    if stopped.size:
        j = int(stopped[0])
        t, decel, v = t[: j + 1].copy(), decel[: j + 1].copy(), v[: j + 1].copy()
        if v[j] < 0.0:
            frac = v[j - 1] / (v[j - 1] - v[j])
            t[j] = t[j - 1] + frac * (t[j] - t[j - 1])
            decel[j] = decel[j - 1] + frac * (decel[j] - decel[j - 1])
            v[j] = 0.0
    else:
        j = int(np.argmin(v))
        if v[j] > RESIDUAL_VELOCITY * v0:
            raise VelocityNeverReachesZero(
                f"velocity only drops to {v[j]:.3f} m/s (impact {v0:.3f} m/s)"
            )
        t, decel, v = t[: j + 1], decel[: j + 1], v[: j + 1]

    displacement = cumulative_trapezoid(v, t, initial=0.0)
    return PenetrationProfile(t, displacement, v, decel, v0)


def normalize(profile: PenetrationProfile) -> np.ndarray:
    """Normalized deceleration, deceleration / impact velocity (1/s)."""
    v0 = profile.impact_velocity
    if not v0 > 0:
        raise NonPositiveImpactVelocity(f"impact velocity {v0:g} m/s is not positive")
    return np.asarray(profile.deceleration, dtype=float) / v0


def bin_by_depth(displacement, values, penetration_depth=None) -> FeatureVector:
    """Average ``values`` over 1 cm displacement bins into a 211-long vector.

    Bins inside the penetration depth that receive no sample repeat the
    previous bin. Bins past the penetration depth are zero. Negative
    averages (sensor noise) are clipped to zero.
    """
    d = np.asarray(displacement, dtype=float)
    x = np.asarray(values, dtype=float)
    depth = float(d[-1]) if penetration_depth is None else float(penetration_depth)
    if depth > MAX_DEPTH + _BIN_EPS:
        raise DepthExceedsRange(f"penetration depth {depth:.3f} m exceeds {MAX_DEPTH:.2f} m")

    valid = max(0, math.ceil(depth / BIN_WIDTH - _BIN_EPS))
    idx = np.floor(d / BIN_WIDTH + _BIN_EPS).astype(int)
    keep = (idx >= 0) & (idx < valid)
    sums = np.bincount(idx[keep], weights=x[keep], minlength=N_BINS)[:N_BINS]
    counts = np.bincount(idx[keep], minlength=N_BINS)[:N_BINS]

    bins = np.zeros(N_BINS)
    prev = 0.0
    for k in range(valid):
        if counts[k]:
            prev = sums[k] / counts[k]
        bins[k] = prev
    np.maximum(bins, 0.0, out=bins)
    return FeatureVector(bins, valid)


def summary_features(profile: PenetrationProfile) -> SummaryFeatures:
    v0 = profile.impact_velocity
    if not v0 > 0:
        raise NonPositiveImpactVelocity(f"impact velocity {v0:g} m/s is not positive")
    return SummaryFeatures(profile.max_deceleration / v0, profile.penetration_depth)


def extract_features(
    record: RawRecord,
    config: ImpactConfig = ImpactConfig(),
    impact_velocity: float | None = None,
):
    """Run the whole chain: returns ``(profile, summary, feature_vector)``."""
    index = detect_impact(record, config)
    profile = integrate_profile(record, index, impact_velocity)
    norm = normalize(profile)
    features = bin_by_depth(profile.displacement, norm, profile.penetration_depth)
    return profile, summary_features(profile), features
