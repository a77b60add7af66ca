"""Two-exit 1D CNN and its binary weight archive."""
from __future__ import annotations

import copy
import enum
import hashlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import nn
from .errors import ConfigError, DataError, ShapeError

ARCHIVE_MAGIC = b"MXW1\n"
ARCHIVE_VERSION = 1
CHECKSUM_SIZE = 8


class ExitPoint(enum.IntEnum):
    """Exit labels double as the output-block-predictor classes."""

    FIRST_OUTPUT_BLOCK = 1
    BASELINE = 2


FOB = ExitPoint.FIRST_OUTPUT_BLOCK
BASELINE = ExitPoint.BASELINE


@dataclass(frozen=True)
class ModelConfig:
    """Network hyperparameters; the defaults are the 32x7 wearable layout."""

    num_classes: int = 8
    input_length: int = 32
    input_channels: int = 7
    leaky_alpha: float = nn.DEFAULT_LEAKY_ALPHA
    bn_epsilon: float = nn.DEFAULT_BN_EPSILON
    bn_momentum: float = nn.DEFAULT_BN_MOMENTUM
    conv1_filters: int = 6
    conv1_kernel: int = 5
    conv1_stride: int = 3
    pool_kernel: int = 2
    pool_stride: int = 2
    conv2_filters: int = 8
    conv2_kernel: int = 4
    conv2_stride: int = 1
    dense_units: int = 16

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(mapping) - set(known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        values = {}
        for key, raw in mapping.items():
            values[key] = float(raw) if known[key] == "float" else int(raw)
        return cls(**values)


def checksum64(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=CHECKSUM_SIZE).digest()


class MultiOutputCnn:
    """Conv block 1 feeds the first output block (FOB); conv block 2 feeds the
    baseline head.  Computing the baseline exit reuses the block-1 activations.
    """

    # layer names per block, in execution order
    BLOCKS = {
        "block1": ("conv1", "act1", "pool1", "bn1"),
        "head1": ("flat1", "dense1", "softmax1"),
        "block2": ("conv2", "act2", "bn2"),
        "head2": ("flat2", "dense2", "act3", "dense3", "softmax2"),
    }
    PATHS = {
        FOB: ("block1", "head1"),
        BASELINE: ("block1", "block2", "head2"),
    }

    def __init__(self, config: ModelConfig):
        self.config = config
        c = config
        if min(c.num_classes, c.input_length, c.input_channels) < 1:
            raise ConfigError("num_classes, input_length and input_channels must be positive")
        self.layers = {
            "conv1": nn.Conv1d(c.input_channels, c.conv1_filters, c.conv1_kernel, c.conv1_stride),
            "act1": nn.LeakyRelu(c.leaky_alpha),
            "pool1": nn.AvgPool1d(c.pool_kernel, c.pool_stride),
            "bn1": nn.BatchNorm(c.conv1_filters, c.bn_epsilon, c.bn_momentum),
            "flat1": nn.Flatten(),
            "conv2": nn.Conv1d(c.conv1_filters, c.conv2_filters, c.conv2_kernel, c.conv2_stride),
            "act2": nn.LeakyRelu(c.leaky_alpha),
            "bn2": nn.BatchNorm(c.conv2_filters, c.bn_epsilon, c.bn_momentum),
            "flat2": nn.Flatten(),
        }
        self.shapes = self._infer_shapes()
        flat1 = self.shapes["flat1"][0]
        flat2 = self.shapes["flat2"][0]
        self.layers["dense1"] = nn.Dense(flat1, c.num_classes)
        self.layers["softmax1"] = nn.Softmax()
        self.layers["dense2"] = nn.Dense(flat2, c.dense_units)
        self.layers["act3"] = nn.LeakyRelu(c.leaky_alpha)
        self.layers["dense3"] = nn.Dense(c.dense_units, c.num_classes)
        self.layers["softmax2"] = nn.Softmax()
        self.shapes.update(dense1=(c.num_classes,), softmax1=(c.num_classes,),
                           dense2=(c.dense_units,), act3=(c.dense_units,),
                           dense3=(c.num_classes,), softmax2=(c.num_classes,))
        self.input_shapes.update(dense1=self.shapes["flat1"], softmax1=(c.num_classes,),
                                 dense2=self.shapes["flat2"], act3=(c.dense_units,),
                                 dense3=(c.dense_units,), softmax2=(c.num_classes,))

    def _infer_shapes(self):
        shapes, self.input_shapes = {}, {}
        shape = (self.config.input_length, self.config.input_channels)
        for name in self.BLOCKS["block1"] + ("flat1",):
            self.input_shapes[name] = shape
            shape = self._checked_shape(name, shape)
            shapes[name] = shape
        shape = shapes["bn1"]
        for name in self.BLOCKS["block2"] + ("flat2",):
            self.input_shapes[name] = shape
            shape = self._checked_shape(name, shape)
            shapes[name] = shape
        return shapes

    def _checked_shape(self, name, shape):
        try:
            return self.layers[name].output_shape(shape)
        except ShapeError as exc:
            raise ConfigError(f"layer {name!r} cannot accept input shape {shape}: {exc}") from None

    # -- parameters -------------------------------------------------------

    @property
    def num_classes(self):
        return self.config.num_classes

    def parameters(self):
        """Trainable arrays keyed ``"layer.param"``; the arrays are live views."""
        out = {}
        for lname, layer in self.layers.items():
            for pname, arr in layer.params().items():
                out[f"{lname}.{pname}"] = arr
        return out

    def buffers(self):
        out = {}
        for lname in ("bn1", "bn2"):
            for bname, arr in self.layers[lname].buffers().items():
                out[f"{lname}.{bname}"] = arr
        return out

    def state(self):
        """All arrays that define inference, in archive order."""
        return {**self.parameters(), **self.buffers()}

    def load_state(self, state):
        own = self.state()
        if set(own) != set(state):
            raise DataError(f"state keys differ: missing {sorted(set(own) - set(state))}, "
                            f"unexpected {sorted(set(state) - set(own))}")
        for key, arr in state.items():
            if own[key].shape != np.shape(arr):
                raise ShapeError(f"{key}: expected shape {own[key].shape}, got {np.shape(arr)}")
            own[key][...] = arr

    def copy(self):
        return copy.deepcopy(self)

    def layer_param_counts(self):
        return {name: layer.param_count for name, layer in self.layers.items()}

    def param_count(self, exit=None):
        """Parameters on one exit path, or across both heads when ``exit`` is None."""
        if exit is None:
            names = [n for block in self.BLOCKS.values() for n in block]
        else:
            names = [n for block in self.PATHS[ExitPoint(exit)] for n in self.BLOCKS[block]]
        return sum(self.layers[n].param_count for n in names)

    def shape_chain(self, exit):
        return [(n, self.shapes[n]) for block in self.PATHS[ExitPoint(exit)]
                for n in self.BLOCKS[block]]

    # -- inference --------------------------------------------------------

    def _run(self, block, x, trace=None):
        for name in self.BLOCKS[block]:
            x = self.layers[name].forward(x)
            if trace is not None:
                trace.append((name, x))
        return x

    def _check_input(self, x):
        x = np.asarray(x, dtype=float)
        want = (self.config.input_length, self.config.input_channels)
        if x.shape[-2:] != want or x.ndim not in (2, 3):
            raise ShapeError(f"segment shape {x.shape} does not match expected {want}")
        return x

    def conv_block1(self, x, trace=None):
        return self._run("block1", self._check_input(x), trace)

    def first_head(self, h1, trace=None):
        return self._run("head1", h1, trace)

    def baseline_head(self, h1, trace=None):
        return self._run("head2", self._run("block2", h1, trace), trace)

    def forward(self, segment, exit=BASELINE, trace=None):
        """Class probabilities at ``exit`` for one segment or a batch.

        ``trace``, if given, is a list that receives ``(layer_name, output)``
        for every executed layer; it is per-call so inference stays re-entrant.
        """
        h1 = self.conv_block1(segment, trace)
        if ExitPoint(exit) == FOB:
            return self.first_head(h1, trace)
        return self.baseline_head(h1, trace)

    def forward_both(self, segment, trace=None):
        h1 = self.conv_block1(segment, trace)
        return self.first_head(h1, trace), self.baseline_head(h1, trace)

    def predict_class(self, segment, exit=BASELINE):
        return argmax_lowest(self.forward(segment, exit))

    # -- training ---------------------------------------------------------

    def forward_train(self, x):
        """Batch forward in training mode; returns head logits and the caches."""
        x = self._check_input(x)
        if x.ndim == 2:
            x = x[None]
        caches = {}

        def run(names, h):
            for name in names:
                h, caches[name] = self.layers[name].forward_train(h)
            return h

        h1 = run(self.BLOCKS["block1"], x)
        logits1 = run(("flat1", "dense1"), h1)
        h2 = run(self.BLOCKS["block2"], h1)
        logits2 = run(("flat2", "dense2", "act3", "dense3"), h2)
        return logits1, logits2, caches

    def backward(self, caches, d_logits1, d_logits2):
        grads = {}

        def back(names, g):
            for name in reversed(names):
                g, pgrads = self.layers[name].backward(caches[name], g)
                for pname, arr in pgrads.items():
                    grads[f"{name}.{pname}"] = arr
            return g

        g_h2 = back(("flat2", "dense2", "act3", "dense3"), d_logits2)
        g_h1 = back(self.BLOCKS["block2"], g_h2)
        g_h1 = g_h1 + back(("flat1", "dense1"), d_logits1)
        back(self.BLOCKS["block1"], g_h1)
        return grads

    # -- cost accounting --------------------------------------------------

    def flop_ledger(self, exit, convention=nn.DEFAULT_CONVENTION):
        """Per-layer ``(name, input_shape, output_shape, flops)`` rows to ``exit``."""
        rows = []
        for name, out_shape in self.shape_chain(exit):
            in_shape = self.input_shapes[name]
            rows.append((name, in_shape, out_shape,
                         nn.layer_flops(self.layers[name], in_shape, convention)))
        return rows

    def flops(self, exit, convention=nn.DEFAULT_CONVENTION):
        return sum(row[3] for row in self.flop_ledger(exit, convention))


def argmax_lowest(probabilities):
    """Argmax over the last axis; exact ties resolve to the lowest index."""
    p = np.asarray(probabilities)
    return np.argmax(p, axis=-1) if p.ndim > 1 else int(np.argmax(p))


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def build(config: ModelConfig, seed: int = 0) -> MultiOutputCnn:
    """Build a model with seeded Glorot-uniform weights, zero biases, identity BN."""
    model = MultiOutputCnn(config)
    rng = np.random.default_rng(seed)
    for name in ("conv1", "conv2", "dense1", "dense2", "dense3"):
        layer = model.layers[name]
        w = layer.weight
        if w.ndim == 3:
            out_c, in_c, k = w.shape
            fan_in, fan_out = in_c * k, out_c * k
        else:
            fan_out, fan_in = w.shape
        w[...] = _glorot(rng, w.shape, fan_in, fan_out)
    return model


# -- weight archive -------------------------------------------------------


class ArchiveError(DataError):
    pass


class ChecksumError(ArchiveError):
    pass


class VersionError(ArchiveError):
    pass


class CorruptArchiveError(ArchiveError):
    pass


def _archive_bytes(model: MultiOutputCnn) -> bytes:
    state = model.state()
    lines = [f"format_version={ARCHIVE_VERSION}", "precision=f64", "byte_order=little"]
    for key, value in asdict(model.config).items():
        lines.append(f"config.{key}={value!r}")
    for key, arr in state.items():
        lines.append(f"block={key}:{','.join(str(d) for d in arr.shape)}")
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("ascii")
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for arr in state.values())
    body = ARCHIVE_MAGIC + header + payload
    return body + checksum64(body)


def save(model: MultiOutputCnn, path) -> bytes:
    """Write ``model`` to ``path``; returns the 8-byte checksum."""
    data = _archive_bytes(model)
    Path(path).write_bytes(data)
    return data[-CHECKSUM_SIZE:]


def load(path) -> MultiOutputCnn:
    data = Path(path).read_bytes()
    if len(data) < len(ARCHIVE_MAGIC) + CHECKSUM_SIZE:
        if ARCHIVE_MAGIC.startswith(data[: len(ARCHIVE_MAGIC)]):
            raise ChecksumError(f"{path}: archive truncated ({len(data)} bytes)")
    if not data.startswith(ARCHIVE_MAGIC):
        raise CorruptArchiveError(f"{path}: not a weight archive (bad magic)")
    body, stored = data[:-CHECKSUM_SIZE], data[-CHECKSUM_SIZE:]
    if checksum64(body) != stored:
        raise ChecksumError(f"{path}: checksum mismatch (file corrupt or truncated)")

    end = body.find(b"\nend\n")
    if end < 0:
        raise CorruptArchiveError(f"{path}: header terminator missing")
    header = body[len(ARCHIVE_MAGIC):end].decode("ascii").split("\n")
    payload = body[end + len(b"\nend\n"):]
    meta, config, blocks = {}, {}, []
    for line in header:
        key, _, value = line.partition("=")
        if key.startswith("config."):
            config[key[len("config."):]] = value
        elif key == "block":
            name, _, dims = value.partition(":")
            blocks.append((name, tuple(int(d) for d in dims.split(",") if d)))
        else:
            meta[key] = value
    if meta.get("format_version") != str(ARCHIVE_VERSION):
        raise VersionError(f"{path}: unsupported archive version {meta.get('format_version')!r}")
    if meta.get("precision") != "f64":
        raise CorruptArchiveError(f"{path}: unsupported precision {meta.get('precision')!r}")

    model = MultiOutputCnn(ModelConfig.from_mapping(config))
    state, offset = {}, 0
    for name, shape in blocks:
        nbytes = 8 * int(np.prod(shape))
        if offset + nbytes > len(payload):
            raise CorruptArchiveError(f"{path}: block {name} runs past end of payload")
        state[name] = np.frombuffer(payload, dtype="<f8", count=int(np.prod(shape)),
                                    offset=offset).reshape(shape)
        offset += nbytes
    if offset != len(payload):
        raise CorruptArchiveError(f"{path}: {len(payload) - offset} trailing payload bytes")
    try:
        model.load_state(state)
    except DataError as exc:
        raise CorruptArchiveError(f"{path}: {exc}") from None
    return model


def archive_checksum(path) -> str:
    return Path(path).read_bytes()[-CHECKSUM_SIZE:].hex()

