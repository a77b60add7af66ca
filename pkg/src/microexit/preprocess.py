"""Raw multichannel sensor streams to normalized 32-sample segments.

Pipeline: rate alignment -> causal moving average -> segmentation (sliding
window or stretch-derivative dynamic segmentation) -> statistical features on
the filtered full-resolution segment -> linear downsampling to 32 samples ->
per-channel z-score.
"""
from __future__ import annotations

import csv
import enum
import logging
import struct
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

SEGMENT_LENGTH = 32
SEGMENT_MAGIC = b"MXS1\n"
CONSTANT_STD = 1e-12
NO_LABEL = -1


@dataclass(frozen=True)
class Channel:
    name: str
    rate: float = 1.0
    unit: str = ""


@dataclass
class SensorStream:
    """Per-channel series; before :func:`align_rates` lengths may differ.

    ``labels`` are per-sample annotations on the fastest channel's timeline.
    """

    channels: list
    samples: list
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.samples = [np.asarray(s, dtype=float) for s in self.samples]
        if len(self.channels) != len(self.samples):
            raise DataError(f"{len(self.channels)} channel descriptors for {len(self.samples)} series")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)

    @property
    def names(self):
        return [c.name for c in self.channels]

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"channel {name!r} not in stream (have {self.names})") from None

    def column(self, name):
        return self.samples[self.index(name)]

    def __len__(self):
        return max((len(s) for s in self.samples), default=0)

    def matrix(self):
        lengths = {len(s) for s in self.samples}
        if len(lengths) != 1:
            raise DataError(f"channels have unequal lengths {sorted(lengths)}; align rates first")
        return np.stack(self.samples, axis=1)


@dataclass
class RawSegment:
    data: np.ndarray          # (L, C), filtered, full resolution
    start: int
    end: int                  # exclusive
    label: int = NO_LABEL


@dataclass
class Segment:
    data: np.ndarray          # (32, C), z-scored
    features: np.ndarray
    label: int = NO_LABEL
    span: tuple = (0, 0)
    constant_channels: tuple = ()


class ProfileKind(enum.Enum):
    OPPORTUNITY = "opportunity"
    WHAR = "whar"
    CUSTOM = "custom"


@dataclass
class DatasetProfile:
    kind: ProfileKind
    channels: tuple
    features: tuple                       # ((statistic, channel), ...)
    segmentation: str = "sliding"         # or "dynamic"
    window_len: int = 100
    overlap: float = 0.70
    stretch_channel: str | None = None
    derivative_threshold: float = 0.05
    min_seconds: float = 0.5
    max_seconds: float = 4.0
    filter_window: int = 8
    rates: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = {ProfileKind.OPPORTUNITY: 4, ProfileKind.WHAR: 6}.get(self.kind)
        if expected is not None and len(self.features) != expected:
            raise ConfigError(f"{self.kind.value} profile needs {expected} features, "
                              f"got {len(self.features)}")
        for stat, _ in self.features:
            if stat not in STATISTICS:
                raise ConfigError(f"unknown statistic {stat!r}")
        if self.segmentation not in ("sliding", "dynamic"):
            raise ConfigError(f"unknown segmentation {self.segmentation!r}")


STATISTICS = {"mean": np.mean, "min": np.min, "max": np.max}

OPPORTUNITY = DatasetProfile(
    kind=ProfileKind.OPPORTUNITY,
    channels=("accX", "accY", "accZ", "AngVelBodyFrameX", "AngVelBodyFrameY",
              "AngVelBodyFrameZ", "Compass"),
    features=(("mean", "accX"), ("mean", "accZ"),
              ("min", "AngVelBodyFrameZ"), ("max", "AngVelBodyFrameZ")),
    segmentation="sliding",
    rates={name: 30.0 for name in ("accX", "accY", "accZ", "AngVelBodyFrameX",
                                   "AngVelBodyFrameY", "AngVelBodyFrameZ", "Compass")},
)

WHAR = DatasetProfile(
    kind=ProfileKind.WHAR,
    channels=("Ax", "Ay", "Az", "Gx", "Gy", "Gz", "Stretch"),
    features=(("mean", "Ax"), ("mean", "Az"), ("min", "Gz"), ("max", "Gz"),
              ("min", "Stretch"), ("max", "Stretch")),
    segmentation="dynamic",
    stretch_channel="Stretch",
    rates={"Ax": 250.0, "Ay": 250.0, "Az": 250.0, "Gx": 250.0, "Gy": 250.0,
           "Gz": 250.0, "Stretch": 25.0},
)

PROFILES = {"opportunity": OPPORTUNITY, "whar": WHAR}


# -- filtering and alignment ----------------------------------------------


def _moving_average_1d(x, window):
    csum = np.concatenate(([0.0], np.cumsum(x)))
    idx = np.arange(len(x))
    lo = np.maximum(idx + 1 - window, 0)
    return (csum[idx + 1] - csum[lo]) / (idx + 1 - lo)


def moving_average(stream: SensorStream, window: int = 8) -> SensorStream:
    """Causal mean over the last ``min(window, i + 1)`` samples at each index."""
    if window < 1:
        raise ConfigError("moving-average window must be >= 1")
    if len(stream) == 0:
        raise DataError("cannot filter an empty stream")
    return SensorStream(stream.channels, [_moving_average_1d(s, window) for s in stream.samples],
                        stream.labels)


def align_rates(stream: SensorStream) -> SensorStream:
    """Linearly resample every channel onto the fastest channel's timeline."""
    for c in stream.channels:
        if not c.rate > 0:
            raise ConfigError(f"channel {c.name!r} has non-positive sampling rate {c.rate}")
    fastest = max(range(len(stream.channels)), key=lambda i: stream.channels[i].rate)
    rate = stream.channels[fastest].rate
    n = len(stream.samples[fastest])
    t = np.arange(n) / rate
    samples, channels = [], []
    for c, s in zip(stream.channels, stream.samples):
        if c.rate == rate and len(s) == n:
            samples.append(s)
        else:
            if len(s) == 0:
                raise DataError(f"channel {c.name!r} has no samples")
            samples.append(np.interp(t, np.arange(len(s)) / c.rate, s))
        channels.append(Channel(c.name, rate, c.unit))
    return SensorStream(channels, samples, stream.labels)


# -- segmentation ---------------------------------------------------------


def _majority(labels):
    """Most frequent label; ties go to the label seen first."""
    if labels is None or len(labels) == 0:
        return NO_LABEL
    counts = Counter(labels.tolist())
    best = max(counts.values())
    for value in labels.tolist():
        if counts[value] == best:
            return int(value)


def _raw(matrix, labels, start, end):
    lab = None if labels is None else labels[start:end]
    return RawSegment(matrix[start:end].copy(), start, end, _majority(lab))


def window_stride(window_len, overlap):
    return max(1, int(round(window_len * (1.0 - overlap))))


def sliding_window_segment(stream: SensorStream, window_len: int = 100, overlap: float = 0.70):
    if window_len < 1 or not 0 <= overlap < 1:
        raise ConfigError("need window_len >= 1 and 0 <= overlap < 1")
    matrix = stream.matrix()
    n = len(matrix)
    if n < window_len:
        warnings.warn(f"stream of {n} samples is shorter than the {window_len}-sample window; "
                      "no segments produced", stacklevel=2)
        return []
    stride = window_stride(window_len, overlap)
    return [_raw(matrix, stream.labels, s, s + window_len)
            for s in range(0, n - window_len + 1, stride)]


def five_point_derivative(x):
    """Central five-point stencil; the two samples at each edge copy the nearest
    interior value (zero for series shorter than 5)."""
    x = np.asarray(x, dtype=float)
    d = np.zeros_like(x)
    if len(x) < 5:
        return d
    d[2:-2] = (-x[4:] + 8 * x[3:-1] - 8 * x[1:-3] + x[:-4]) / 12.0
    d[:2] = d[2]
    d[-2:] = d[-3]
    return d


def _activity_boundaries(active, min_len):
    """Onsets (inactive -> active) and offsets (start of a quiet run lasting
    at least ``min_len`` samples) of the activity mask."""
    bounds = set()
    n = len(active)
    i = 0
    while i < n:
        if active[i]:
            if i > 0 and not active[i - 1]:
                bounds.add(i)
            i += 1
            continue
        j = i
        while j < n and not active[j]:
            j += 1
        if i > 0 and j - i >= min_len:
            bounds.add(i)
        i = j
    return sorted(b for b in bounds if 0 < b < n)


def _enforce_lengths(cuts, n, min_len, max_len):
    spans = [(a, b) for a, b in zip([0] + cuts, cuts + [n])]
    # short spans merge forward into the next one; a short tail merges backward
    merged = []
    carry = None
    for a, b in spans:
        if carry is not None:
            a = carry
        if b - a < min_len:
            carry = a
            continue
        carry = None
        merged.append((a, b))
    if carry is not None:
        if merged:
            merged[-1] = (merged[-1][0], n)
        else:
            merged.append((carry, n))
    out = []
    for a, b in merged:
        pieces = -(-(b - a) // max_len)
        edges = np.linspace(a, b, pieces + 1).round().astype(int)
        out.extend(zip(edges[:-1].tolist(), edges[1:].tolist()))
    return out


def dynamic_segment(stream: SensorStream, stretch_channel="Stretch", derivative_threshold=0.05,
                    min_len=125, max_len=1000):
    """Activity segmentation from the five-point derivative of the stretch signal.

    The stretch channel is z-scaled over the whole stream before
    differentiating, so ``derivative_threshold`` is in standard deviations
    per sample.  Overlong spans are split evenly into pieces of at most
    ``max_len``; spans shorter than ``min_len`` are merged into a neighbour.
    """
    if min_len < 5 or max_len < min_len:
        raise ConfigError("need 5 <= min_len <= max_len")
    if stretch_channel not in stream.names:
        raise DataError(f"stretch channel {stretch_channel!r} missing from stream")
    matrix = stream.matrix()
    s = matrix[:, stream.index(stretch_channel)]
    std = s.std()
    z = (s - s.mean()) / std if std > CONSTANT_STD else np.zeros_like(s)
    active = np.abs(five_point_derivative(z)) >= derivative_threshold
    cuts = _activity_boundaries(active, min_len)
    spans = _enforce_lengths(cuts, len(matrix), min_len, max_len)
    return [_raw(matrix, stream.labels, a, b) for a, b in spans]


# -- per-segment transforms -----------------------------------------------


def downsample(data, target: int = SEGMENT_LENGTH):
    """Linear interpolation at ``target`` equally spaced positions over [0, L-1]."""
    data = np.asarray(data, dtype=float)
    squeeze = data.ndim == 1
    if squeeze:
        data = data[:, None]
    n = data.shape[0]
    if n < 2:
        raise DataError(f"cannot downsample a segment of {n} sample(s)")
    pos = np.linspace(0.0, n - 1, target)
    xs = np.arange(n)
    out = np.stack([np.interp(pos, xs, data[:, c]) for c in range(data.shape[1])], axis=1)
    return out[:, 0] if squeeze else out


def extract_features(data, channel_names, profile: DatasetProfile):
    data = np.asarray(data, dtype=float)
    names = list(channel_names)
    out = []
    for stat, channel in profile.features:
        if channel not in names:
            raise DataError(f"feature channel {channel!r} missing (have {names})")
        out.append(STATISTICS[stat](data[:, names.index(channel)]))
    return np.array(out)


def zscore_normalize(data):
    """Per-channel population z-score.

    Returns ``(normalized, constant_channels)``; constant channels (std below
    1e-12) are zeroed and their indices reported.
    """
    data = np.asarray(data, dtype=float)
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    flat = std < CONSTANT_STD
    safe = np.where(flat, 1.0, std)
    z = (data - mean) / safe
    z[:, flat] = 0.0
    return z, tuple(int(i) for i in np.flatnonzero(flat))


def finalize(raw: RawSegment, channel_names, profile: DatasetProfile) -> Segment:
    features = extract_features(raw.data, channel_names, profile)
    z, flat = zscore_normalize(downsample(raw.data))
    return Segment(z, features, raw.label, (raw.start, raw.end), flat)


def preprocess_stream(stream: SensorStream, profile: DatasetProfile):
    """Full pipeline for one recording; segments are ordered by source span."""
    missing = [c for c in profile.channels if c not in stream.names]
    if missing:
        raise DataError(f"stream lacks profile channels {missing}")
    order = [stream.index(c) for c in profile.channels]
    stream = SensorStream([stream.channels[i] for i in order],
                          [stream.samples[i] for i in order], stream.labels)
    stream = moving_average(align_rates(stream), profile.filter_window)
    if profile.segmentation == "sliding":
        raws = sliding_window_segment(stream, profile.window_len, profile.overlap)
    else:
        rate = stream.channels[0].rate
        raws = dynamic_segment(stream, profile.stretch_channel, profile.derivative_threshold,
                               max(5, int(round(profile.min_seconds * rate))),
                               max(5, int(round(profile.max_seconds * rate))))
    return [finalize(r, stream.names, profile) for r in raws]


# -- file formats ---------------------------------------------------------


def read_csv_stream(path, profile: DatasetProfile, column_map=None, rates=None) -> SensorStream:
    """Read a one-sample-per-row CSV with a header of channel names plus ``label``.

    Slower channels may leave cells empty on rows where they have no sample.
    ``column_map`` renames vendor columns to profile channel names.
    """
    column_map = column_map or {}
    rates = {**profile.rates, **(rates or {})}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [column_map.get(h.strip(), h.strip()) for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty CSV") from None
        for name in profile.channels:
            if name not in header:
                raise DataError(f"{path}: missing channel column {name!r}")
        cols = {name: header.index(name) for name in profile.channels}
        label_col = header.index("label") if "label" in header else None
        series = {name: [] for name in profile.channels}
        labels = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                for name, i in cols.items():
                    cell = row[i].strip()
                    if cell:
                        series[name].append(float(cell))
                if label_col is not None:
                    labels.append(int(row[label_col]))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    channels = []
    for name in profile.channels:
        if name not in rates:
            raise ConfigError(f"no sampling rate configured for channel {name!r}")
        channels.append(Channel(name, float(rates[name])))
    return SensorStream(channels, [series[n] for n in profile.channels],
                        np.array(labels) if label_col is not None else None)


_SEG_HEADER = struct.Struct("<IIII")   # count, length, channels, n_features
_SEG_META = struct.Struct("<qqi")      # start, end, label


def write_segments(path, segments) -> None:
    """Binary segment file: magic, header, then per segment span, label,
    float64 features and a float32 (32 x C) block, all little-endian."""
    length = channels = n_features = 0
    if segments:
        length, channels = segments[0].data.shape
        n_features = len(segments[0].features)
    parts = [SEGMENT_MAGIC, _SEG_HEADER.pack(len(segments), length, channels, n_features)]
    for seg in segments:
        if seg.data.shape != (length, channels) or len(seg.features) != n_features:
            raise DataError("all segments in a file must share shape and feature count")
        parts.append(_SEG_META.pack(int(seg.span[0]), int(seg.span[1]), int(seg.label)))
        parts.append(np.asarray(seg.features, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(seg.data, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_segments(path):
    data = Path(path).read_bytes()
    if not data.startswith(SEGMENT_MAGIC):
        raise DataError(f"{path}: not a segment file")
    off = len(SEGMENT_MAGIC)
    try:
        count, length, channels, n_features = _SEG_HEADER.unpack_from(data, off)
        off += _SEG_HEADER.size
        out = []
        for _ in range(count):
            start, end, label = _SEG_META.unpack_from(data, off)
            off += _SEG_META.size
            feats = np.frombuffer(data, "<f8", n_features, off).astype(float)
            off += 8 * n_features
            block = np.frombuffer(data, "<f4", length * channels, off).reshape(length, channels)
            off += 4 * length * channels
            out.append(Segment(block.astype(float), feats, label, (start, end)))
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated segment file ({exc})") from None
    if off != len(data):
        raise DataError(f"{path}: {len(data) - off} trailing bytes")
    return out


def stack(segments):
    """``(data (N,32,C), features (N,F), labels (N,))`` arrays from segments."""
    if not segments:
        raise DataError("no segments")
    return (np.stack([s.data for s in segments]),
            np.stack([s.features for s in segments]),
            np.array([s.label for s in segments]))
