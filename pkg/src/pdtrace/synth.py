"""Synthetic Π-pattern drawing traces: smooth controls, slower tremulous PD traces."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ._random import stage_rng
from .data import DrawSequence
from .errors import ConfigError

EXERCISES = ("continue", "copy", "trace")


@dataclass(frozen=True)
class SynthConfig:
    samples_per_sequence: int = 1200
    length_jitter: float = 0.2
    sample_rate: float = 240.0
    amplitude: float = 20.0  # mm, height of each Π
    period: float = 20.0  # mm, horizontal advance per Π
    speed: float = 50.0  # mm/s, mean control pen speed
    speed_jitter: float = 0.1
    attenuation: float = 0.6  # PD speed / control speed
    tremor_low: float = 4.0
    tremor_high: float = 6.0
    tremor_amplitude: float = 0.5  # mm
    noise_std: float = 0.01  # mm
    sequences_per_subject: int = 3
    test_fraction: float = 0.16

    def __post_init__(self):
        if self.tremor_amplitude <= 3 * self.noise_std:
            raise ConfigError("tremor_amplitude must exceed 3x noise_std")
        if self.sample_rate <= 2 * self.tremor_high:
            raise ConfigError("sample_rate must exceed twice the highest tremor frequency")
        if not 0 < self.attenuation <= 1:
            raise ConfigError("attenuation must lie in (0, 1]")
        if self.samples_per_sequence < 2 or not 0 <= self.length_jitter < 1:
            raise ConfigError("invalid sequence length settings")
        if not 0 < self.tremor_low <= self.tremor_high:
            raise ConfigError("invalid tremor band")

    def to_dict(self):
        return asdict(self)

    def hard(self):
        """Same generator with tremor barely above the noise floor."""
        return SynthConfig(**{**asdict(self), "tremor_amplitude": 4 * self.noise_std})


def pi_pattern(s, amplitude, period):
    """Point at arc length ``s`` along a meander: up, across, down, across, repeated."""
    half = period / 2.0
    cycle = 2 * amplitude + 2 * half
    k, r = np.divmod(s, cycle)
    x = k * period
    y = np.zeros_like(s)
    up = r < amplitude
    top = (r >= amplitude) & (r < amplitude + half)
    down = (r >= amplitude + half) & (r < 2 * amplitude + half)
    bottom = r >= 2 * amplitude + half
    y[up] = r[up]
    x = x + np.where(top, r - amplitude, 0.0)
    y[top] = amplitude
    x = x + np.where(down | bottom, half, 0.0)
    y[down] = amplitude - (r[down] - amplitude - half)
    x = x + np.where(bottom, r - 2 * amplitude - half, 0.0)
    return x, y


def stroke_profile(s, amplitude, period):
    """Re-time uniform arc length so the pen eases in and out of every corner.

    Within each straight stroke of length ``D`` the travelled distance is
    ``D * (u - sin(2 pi u) / (2 pi))`` at fraction ``u`` of the stroke time:
    speed follows a raised cosine and drops to zero at the corners. The mean
    speed is unchanged.
    """
    half = period / 2.0
    bounds = np.cumsum([0.0, amplitude, half, amplitude, half])
    cycle = bounds[-1]
    k, r = np.divmod(s, cycle)
    seg = np.clip(np.searchsorted(bounds, r, side="right") - 1, 0, 3)
    start = bounds[seg]
    length = bounds[seg + 1] - start
    u = (r - start) / length
    return k * cycle + start + length * (u - np.sin(2 * math.pi * u) / (2 * math.pi))


def generate_sequence(label, config=None, seed=0, subject_id=None, sequence_id=""):
    """One synthetic drawing trace for class ``"HC"`` or ``"PD"``."""
    config = config or SynthConfig()
    label = label.upper()
    if label not in ("HC", "PD"):
        raise ValueError(f"unknown class {label!r}")
    rng = np.random.default_rng(seed)
    jitter = config.length_jitter
    n = max(2, int(round(config.samples_per_sequence * rng.uniform(1 - jitter, 1 + jitter))))
    t = np.arange(n) / config.sample_rate
    speed = config.speed * rng.uniform(1 - config.speed_jitter, 1 + config.speed_jitter)
    if label == "PD":
        speed *= config.attenuation
    arc = stroke_profile(speed * t, config.amplitude, config.period)
    x, y = pi_pattern(arc, config.amplitude, config.period)
    x = x + rng.uniform(0, 50)
    y = y + rng.uniform(0, 50)
    if label == "PD":
        freq = rng.uniform(config.tremor_low, config.tremor_high)
        phase_x, phase_y = rng.uniform(0, 2 * math.pi, size=2)
        x = x + config.tremor_amplitude * np.sin(2 * math.pi * freq * t + phase_x)
        y = y + config.tremor_amplitude * np.sin(2 * math.pi * freq * t + phase_y)
    x = x + rng.normal(0, config.noise_std, n)
    y = y + rng.normal(0, config.noise_std, n)
    drift = rng.uniform(0, 2 * math.pi, size=2)
    azimuth = 1.2 + 0.2 * np.sin(0.3 * t + drift[0]) + rng.normal(0, 0.005, n)
    altitude = 0.9 + 0.1 * np.sin(0.2 * t + drift[1]) + rng.normal(0, 0.005, n)
    pressure = np.abs(1.5 + rng.normal(0, 0.05, n))
    samples = np.column_stack([azimuth, altitude, pressure, t, x, y])
    subject_id = subject_id or f"{label}-{seed}"
    return DrawSequence(subject_id, label, samples, sequence_id)


def _n_test(n, fraction):
    return min(n - 1, max(1, int(round(n * fraction))))


def generate_corpus(n_hc=29, n_pd=20, config=None, seed=0):
    """Subject-disjoint ``(train, test)`` lists of synthetic sequences."""
    config = config or SynthConfig()
    if n_hc < 2 or n_pd < 2:
        raise ConfigError(f"need at least 2 subjects per class, got HC={n_hc}, PD={n_pd}")
    rng = stage_rng(seed, "synth")
    train, test = [], []
    for label, count in (("HC", n_hc), ("PD", n_pd)):
        is_test = np.zeros(count, dtype=bool)
        is_test[rng.choice(count, _n_test(count, config.test_fraction), replace=False)] = True
        for k in range(count):
            sid = f"{label}{k:03d}"
            for ex in range(config.sequences_per_subject):
                name = EXERCISES[ex] if ex < len(EXERCISES) else f"ex{ex}"
                seq = generate_sequence(
                    label, config, int(rng.integers(2**32)), sid, f"{sid}_{name}"
                )
                (test if is_test[k] else train).append(seq)
    return train, test
