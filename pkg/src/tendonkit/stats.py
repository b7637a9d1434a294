"""Evaluation statistics: smoothing and per-axis rotation-velocity distributions."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .env import AXIS_INDEX, direction_sign, rotation_reward, rotation_reward_band


def exponential_smoothing(series, alpha: float):
    """y_0 = x_0; y_t = alpha * x_t + (1 - alpha) * y_{t-1}."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ValueError("cannot smooth an empty series")
    y = np.empty_like(x)
    y[0] = x[0]
    for t in range(1, len(x)):
        y[t] = alpha * x[t] + (1.0 - alpha) * y[t - 1]
    return y


@dataclass
class RotationStats:
    axis: str
    direction: str
    samples: np.ndarray     # raw angular velocity about the axis (rad/s)
    smoothed: np.ndarray    # exponentially smoothed series
    mean: float
    median: float
    p05: float
    p25: float
    p75: float
    p95: float
    in_band_fraction: float  # fraction of raw samples on the max-reward plateau
    band: tuple              # (lo, hi) of the plateau

    def summary(self) -> dict:
        """JSON-ready digest (the raw/smoothed series stay out of it)."""
        return {
            "axis": self.axis,
            "direction": self.direction,
            "mean": self.mean,
            "median": self.median,
            "p05": self.p05,
            "p25": self.p25,
            "p75": self.p75,
            "p95": self.p95,
            "in_band_fraction": self.in_band_fraction,
            "band": list(self.band),
            "n_samples": int(len(self.samples)),
        }


def hand_frame_omega(omega_world):
    """Convert angular velocity to the hand frame.

    The simulator already reports ball state in the hand frame, so this is the
    identity; it stays an explicit pipeline step so external (IMU-style) logs
    can plug in their own frame rotation.
    """
    return np.asarray(omega_world, dtype=float)


def rotation_stats(rows, axis: str, direction: str, alpha: float = 0.3) -> RotationStats:
    """Distribution of the rotational velocity about `axis` from trajectory rows.

    `rows` is a list of dicts with omega_x/omega_y/omega_z keys (as parsed from
    a trajectory CSV).  The in-band fraction counts raw samples whose rotation
    reward sits on its plateau, matching the per-step reward computation; the
    distribution statistics are computed on the smoothed series.
    """
    if axis not in AXIS_INDEX:
        raise ValueError(f"axis must be one of {sorted(AXIS_INDEX)}")
    key = f"omega_{axis}"
    if rows and key not in rows[0]:
        raise ValueError(f"trajectory log is missing column {key}")
    omega = hand_frame_omega([float(r[key]) for r in rows]) if rows else np.zeros(1)
    sign = direction_sign(direction)
    band = rotation_reward_band(sign)
    if len(rows) == 0:
        in_band = 0.0
    else:
        in_band = float(np.mean(rotation_reward(omega, sign) == 2.0))
    smoothed = exponential_smoothing(omega, alpha)
    return RotationStats(
        axis=axis,
        direction=direction,
        samples=omega,
        smoothed=smoothed,
        mean=float(np.mean(smoothed)),
        median=float(np.median(smoothed)),
        p05=float(np.percentile(smoothed, 5)),
        p25=float(np.percentile(smoothed, 25)),
        p75=float(np.percentile(smoothed, 75)),
        p95=float(np.percentile(smoothed, 95)),
        in_band_fraction=in_band,
        band=band,
    )


# ---------------------------------------------------------------------------
# CSV helpers (all emitted CSVs round-trip through these)
# ---------------------------------------------------------------------------

def write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def read_csv_dicts(path) -> list:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
