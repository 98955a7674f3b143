"""Fit the GPU iteration-time law and solo decode speed from measurements.

Mixed-mode samples are (chunk_size, iteration_time) pairs fitted with ordinary
least squares; solo samples are per-slot token rates averaged directly. The
fitted line lives in the (alpha, beta) parameterization; ``build_profile``
converts it back to the (c, a, b0) primitives of :class:`HardwareProfile`.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .model import HardwareProfile

MIXED_HEADER = ("chunk_size", "iter_time_s")
SOLO_HEADER = ("tokens_per_s",)


class DegenerateDesign(ValueError):
    """The mixed samples cannot identify a slope (fewer than two distinct C)."""


class EmptySamples(ValueError):
    """A fit was requested on an empty sample list."""


@dataclass(frozen=True)
class MeasurementSet:
    """Raw calibration inputs: mixed (C, tau) pairs and solo token rates."""

    mixed_samples: tuple[tuple[float, float], ...]
    solo_samples: tuple[float, ...]

    def __post_init__(self):
        if any(c <= 0 or t <= 0 for c, t in self.mixed_samples):
            raise ValueError("mixed samples must have positive chunk sizes and times")
        if any(r <= 0 for r in self.solo_samples):
            raise ValueError("solo samples must be positive rates")


@dataclass(frozen=True)
class CalibrationResult:
    alpha: float
    beta: float
    gamma: float
    r_squared: float
    n_mixed: int
    n_solo: int


def fit_mixed(samples) -> tuple[float, float, float]:
    """Least-squares fit tau ~ alpha + beta * C; returns (alpha, beta, r_squared)."""
    samples = list(samples)
    if len(samples) < 2:
        raise DegenerateDesign("need at least two mixed samples")
    c = np.array([s[0] for s in samples], dtype=float)
    t = np.array([s[1] for s in samples], dtype=float)
    if np.ptp(c) == 0:
        raise DegenerateDesign("all chunk sizes are equal; slope is unidentifiable")

    c_bar, t_bar = c.mean(), t.mean()
    beta = float(np.sum((c - c_bar) * (t - t_bar)) / np.sum((c - c_bar) ** 2))
    alpha = float(t_bar - beta * c_bar)
    if beta <= 0:
        warnings.warn(
            f"fitted slope is non-positive ({beta:.3g}); measurement data looks unphysical",
            stacklevel=2,
        )

    ss_res = float(np.sum((t - alpha - beta * c) ** 2))
    ss_tot = float(np.sum((t - t_bar) ** 2))
    r_squared = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return alpha, beta, min(1.0, max(0.0, r_squared))


def fit_solo(samples) -> float:
    """Arithmetic mean of per-slot token rates."""
    samples = list(samples)
    if not samples:
        raise EmptySamples("no solo samples")
    return float(np.mean(samples))


def calibrate(measurements: MeasurementSet) -> CalibrationResult:
    alpha, beta, r2 = fit_mixed(measurements.mixed_samples)
    gamma = fit_solo(measurements.solo_samples)
    return CalibrationResult(
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        r_squared=r2,
        n_mixed=len(measurements.mixed_samples),
        n_solo=len(measurements.solo_samples),
    )


def build_profile(
    result: CalibrationResult, batch_cap: int, chunk_size: float, threshold: float = 0.0
) -> HardwareProfile:
    """Turn a fitted (alpha, beta, gamma) into hardware primitives.

    The fit only sees the above-threshold regime, so the overhead constant is
    recovered as c = alpha + beta * b0 and the per-token cost as a = beta.
    """
    return HardwareProfile(
        batch_cap=batch_cap,
        chunk_size=chunk_size,
        fixed_overhead=result.alpha + result.beta * threshold,
        marginal_cost=result.beta,
        threshold=threshold,
        solo_rate=result.gamma,
    )


def read_mixed_csv(path) -> tuple[tuple[float, float], ...]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader.fieldnames, MIXED_HEADER, path)
        return tuple(
            (float(row["chunk_size"]), float(row["iter_time_s"])) for row in reader
        )


def read_solo_csv(path) -> tuple[float, ...]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader.fieldnames, SOLO_HEADER, path)
        return tuple(float(row["tokens_per_s"]) for row in reader)


def load_measurements(mixed_path, solo_path) -> MeasurementSet:
    return MeasurementSet(
        mixed_samples=read_mixed_csv(mixed_path),
        solo_samples=read_solo_csv(solo_path),
    )


def _require_columns(fieldnames, expected, path):
    missing = [c for c in expected if fieldnames is None or c not in fieldnames]
    if missing:
        raise ValueError(f"{path}: missing required columns {missing}")
