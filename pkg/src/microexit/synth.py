"""Synthetic labelled segments for desk-scale runs.

Every class owns a disjoint frequency band and a channel offset.  The CNN
sees the frequency content (z-scoring removes the offset), while the
statistical features see the offset.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .preprocess import WHAR, DatasetProfile, ProfileKind, RawSegment, finalize


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 4
    per_class: int = 200
    channels: int = 7
    raw_length: int = 100
    band_start: float = 1.0        # cycles per raw window
    band_width: float = 1.0
    band_gap: float = 0.3
    amplitude: tuple = (0.8, 1.2)
    offset_step: float = 4.0
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1 or self.per_class < 1 or self.channels < 1:
            raise ConfigError("synthetic spec needs at least one class, segment and channel")
        if self.raw_length < 2 or self.noise < 0 or self.band_width <= 0 or self.band_gap <= 0:
            raise ConfigError("invalid synthetic signal parameters")
        top = self.band_start + self.n_classes * (self.band_width + self.band_gap)
        if top >= self.raw_length / 2:
            raise ConfigError(f"frequency bands reach {top} cycles, beyond Nyquist for "
                              f"{self.raw_length} samples")

    def band(self, cls):
        lo = self.band_start + cls * (self.band_width + self.band_gap)
        return lo, lo + self.band_width


def _profile_for(channels):
    if channels == len(WHAR.channels):
        return WHAR.channels, WHAR
    names = tuple(f"ch{i}" for i in range(channels))
    feats = (("mean", names[0]), ("min", names[-1]), ("max", names[-1]))
    return names, DatasetProfile(kind=ProfileKind.CUSTOM, channels=names, features=feats)


def raw_segment(spec: SyntheticSpec, cls, rng):
    t = np.arange(spec.raw_length) / spec.raw_length
    lo, hi = spec.band(cls)
    freq = rng.uniform(lo, hi)
    data = np.empty((spec.raw_length, spec.channels))
    for ch in range(spec.channels):
        amp = rng.uniform(*spec.amplitude)
        phase = rng.uniform(0, 2 * np.pi)
        offset = spec.offset_step * cls * (1 + 0.1 * ch)
        data[:, ch] = (offset + amp * np.sin(2 * np.pi * freq * t + phase)
                       + spec.noise * rng.standard_normal(spec.raw_length))
    return data


def generate(spec: SyntheticSpec):
    """Balanced, class-interleaved list of finalized segments; deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    names, profile = _profile_for(spec.channels)
    segments = []
    for i in range(spec.per_class):
        for cls in range(spec.n_classes):
            start = len(segments) * spec.raw_length
            raw = RawSegment(raw_segment(spec, cls, rng), start, start + spec.raw_length, cls)
            segments.append(finalize(raw, names, profile))
    return segments
