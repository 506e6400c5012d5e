"""Synthetic penetrometer records for testing and demonstration.

Each class gets its own template family of deceleration-versus-time shapes
and a distinct penetration depth range, loosely following how stiff sands
stop the probe quickly with a late peak while soft clays let it sink deep
with an early peak and long decay:

====== ============ =====================================
class  depth (cm)   deceleration shape
====== ============ =====================================
1      5 - 9        rising to a late peak
2      10 - 18      half sine
3      30 - 50      plateau with short ramps
4      70 - 110     early peak, then slow decay
====== ============ =====================================

The record is a free fall from rest with a small drag reading, the
penetration pulse scaled so the probe stops at the target depth, and a rest
tail. Accelerations are in g, sampled at 2 kHz.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .signal import NOMINAL_RATE, STANDARD_GRAVITY, RawRecord, write_raw_csv

DEPTH_RANGES = {1: (0.05, 0.09), 2: (0.10, 0.18), 3: (0.30, 0.50), 4: (0.70, 1.10)}

# sand %, fines %, liquid limit, USCS symbol consistent with each class
_SOIL = {
    1: (95.0, 5.0, None, "SP"),
    2: (70.0, 30.0, None, "SM"),
    3: (20.0, 80.0, 35.0, "CL"),
    4: (10.0, 90.0, 70.0, "CH"),
}


def _shape(label: int, tau: np.ndarray, rng) -> np.ndarray:
    if label == 1:
        p = rng.uniform(1.2, 2.0)
        return tau**p * (1.0 - tau) ** 0.25
    if label == 2:
        return np.sin(np.pi * tau) ** rng.uniform(0.9, 1.2)
    if label == 3:
        ramp = rng.uniform(0.02, 0.05)
        return np.clip(np.minimum(tau, 1.0 - tau) / ramp, 0.0, 1.0)
    if label == 4:
        peak = rng.uniform(0.02, 0.04)
        floor = rng.uniform(0.12, 0.2)
        return (1 - floor) * (tau / peak) * np.exp(1.0 - tau / peak) + floor * np.clip((1.0 - tau) / 0.05, 0.0, 1.0)
    raise ValueError(f"unknown class {label}")


@dataclass(frozen=True)
class SyntheticDeployment:
    deployment_id: str
    label: int
    record: RawRecord
    target_depth: float
    impact_velocity: float


def make_record(label: int, rng, deployment_id: str = "", noise_g: float = 0.01):
    """One synthetic record of the given class."""
    dt = 1.0 / NOMINAL_RATE
    drag = rng.uniform(0.02, 0.06)
    t_fall = rng.uniform(0.36, 0.60)
    n_fall = int(round(t_fall / dt))
    v0 = (1.0 - drag) * STANDARD_GRAVITY * n_fall * dt
    depth = rng.uniform(*DEPTH_RANGES[label])

    # unit-duration shape -> stretch to duration T and height A so that
    # the velocity drop equals v0 and displacement equals depth
    tau = np.linspace(0.0, 1.0, 2001)
    s = _shape(label, tau, rng)
    area = trapezoid(s, tau)
    v_unit = 1.0 - cumulative_trapezoid(s, tau, initial=0.0) / area
    depth_per_v0T = trapezoid(v_unit, tau)
    T = depth / (v0 * depth_per_v0T)
    A = v0 / (T * area)

    n_pen = int(np.ceil(T / dt))
    pen = A * np.interp(np.arange(n_pen) * dt / T, tau, s) / STANDARD_GRAVITY
    n_rest = int(rng.integers(200, 400))
    accel = np.concatenate([np.full(n_fall, drag), pen, np.zeros(n_rest)])
    accel = accel + rng.normal(0.0, noise_g, accel.size)
    time = np.arange(accel.size) * dt
    record = RawRecord(time, accel, NOMINAL_RATE, deployment_id)
    return SyntheticDeployment(deployment_id, label, record, depth, v0)


def make_corpus(n: int, seed: int = 0, proportions=(0.25, 0.25, 0.25, 0.25), noise_g: float = 0.01):
    """``n`` records with class counts apportioned from ``proportions``."""
    rng = np.random.default_rng(seed)
    p = np.asarray(proportions, dtype=float)
    counts = np.floor(n * p / p.sum()).astype(int)
    counts[: n - counts.sum()] += 1
    labels = np.repeat(np.arange(1, 5), counts)
    labels = labels[rng.permutation(labels.size)]
    return [
        make_record(int(c), rng, f"syn{i:04d}", noise_g) for i, c in enumerate(labels)
    ]


def write_corpus(deployments, out_dir) -> Path:
    """Write raw CSVs under ``out_dir/raw`` and ``out_dir/manifest.csv``; returns the manifest path."""
    out = Path(out_dir)
    raw = out / "raw"
    raw.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["deployment_id", "raw_file", "site", "sublocation", "sand_content_pct",
             "fines_content_pct", "liquid_limit", "uscs_symbol", "class_label"]
        )
        for dep in deployments:
            name = f"{dep.deployment_id}.csv"
            write_raw_csv(dep.record, raw / name)
            sand, fines, ll, uscs = _SOIL[dep.label]
            w.writerow(
                [dep.deployment_id, name, "synthetic", "", sand, fines,
                 "" if ll is None else ll, uscs, dep.label]
            )
    return manifest


def to_table(deployments):
    """Extract features in memory, skipping the CSV round trip."""
    from .corpus import FeatureTable
    from .signal import extract_features

    ids, summary, bins, labels = [], [], [], []
    for dep in deployments:
        _, s, f = extract_features(dep.record)
        ids.append(dep.deployment_id)
        summary.append(s.as_array())
        bins.append(f.bins)
        labels.append(dep.label)
    return FeatureTable(ids, np.array(summary), np.array(bins), np.array(labels))
