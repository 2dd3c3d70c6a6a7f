"""Feed-forward ReLU networks: representation, evaluation, composition and I/O.

A :class:`Network` is a stack of :class:`AffineLayer` objects.  Every layer
except the last applies a ReLU; the output layer is affine only.  Arrays are
stored as read-only float64 copies so networks can be shared freely between
workers.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np


class NetworkFormatError(ValueError):
    """Raised for malformed FNN text input; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _frozen(a, ndim: int) -> np.ndarray:
    if isinstance(a, np.ndarray) and a.dtype == np.float64 and not a.flags.writeable:
        arr = a  # already read-only, sharing is safe
    else:
        arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class AffineLayer:
    weights: np.ndarray
    biases: np.ndarray
    relu: bool = True

    def __post_init__(self):
        w = _frozen(self.weights, 2)
        b = _frozen(self.biases, 1)
        if w.shape[0] != b.shape[0]:
            raise ValueError(
                f"weight rows ({w.shape[0]}) do not match bias length ({b.shape[0]})")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


class Network:
    """Layered affine + ReLU function ``R^input_dim -> R^output_dim``."""

    def __init__(self, layers: Iterable[AffineLayer]):
        layers = tuple(layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for k, layer in enumerate(layers):
            expect_relu = k < len(layers) - 1
            if layer.relu != expect_relu:
                raise ValueError(
                    f"layer {k}: hidden layers must apply ReLU and the output layer must not")
            if k and layer.in_dim != layers[k - 1].out_dim:
                raise ValueError(
                    f"layer {k} expects {layer.in_dim} inputs but layer {k - 1} "
                    f"produces {layers[k - 1].out_dim}")
        self.layers = layers
        # derived data (sign-split weights, sparsity masks) memoised by the verifier
        self._cache: dict = {}

    @classmethod
    def from_arrays(cls, weights: Sequence, biases: Sequence) -> "Network":
        n = len(weights)
        return cls(AffineLayer(w, b, relu=k < n - 1)
                   for k, (w, b) in enumerate(zip(weights, biases)))

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def widths(self) -> list[int]:
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    @property
    def activations(self) -> list[bool]:
        return [layer.relu for layer in self.layers]

    @property
    def num_relus(self) -> int:
        return sum(layer.out_dim for layer in self.layers if layer.relu)

    @property
    def weights(self) -> list[np.ndarray]:
        return [layer.weights for layer in self.layers]

    @property
    def biases(self) -> list[np.ndarray]:
        return [layer.biases for layer in self.layers]

    def __len__(self):
        return len(self.layers)

    def __repr__(self):
        return f"Network(widths={self.widths})"


def _check_input(net: Network, v) -> np.ndarray:
    x = np.asarray(v, dtype=np.float64)
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"input has length {x.shape[-1]}, network expects {net.input_dim}")
    return x


def forward(net: Network, x, return_all: bool = False):
    """Evaluate ``net`` on a single input vector.

    With ``return_all`` the list ``[z0, z1, ..., zL]`` of post-activation layer
    values is returned instead (``z0`` is the input, ``zL`` the output).
    """
    z = _check_input(net, x)
    if z.ndim != 1:
        raise ValueError("forward expects a single vector; use forward_batch for batches")
    trace = [z]
    for layer in net.layers:
        z = layer.weights @ z + layer.biases
        if layer.relu:
            z = np.maximum(z, 0.0)
        trace.append(z)
    return trace if return_all else z


def forward_batch(net: Network, xs) -> np.ndarray:
    """Evaluate ``net`` on the rows of ``xs`` (shape ``(N, input_dim)``)."""
    z = _check_input(net, xs)
    if z.ndim != 2:
        raise ValueError("forward_batch expects a 2-d array")
    for layer in net.layers:
        z = z @ layer.weights.T + layer.biases
        if layer.relu:
            np.maximum(z, 0.0, out=z)
    return z


def argmax_label(outputs) -> int:
    """Index of the largest entry; ties go to the lowest index."""
    y = np.asarray(outputs, dtype=np.float64)
    # np.argmax already returns the first maximal index
    return int(np.argmax(y))


def classify(net: Network, x) -> int:
    return argmax_label(forward(net, x))


def concatenate(prefix: Network, suffix: Network) -> Network:
    """Network computing ``suffix(prefix(v))``.

    The prefix output layer and the suffix input layer are both affine, so
    they are fused into a single layer and no ReLU is introduced in between.
    """
    if prefix.output_dim != suffix.input_dim:
        raise ValueError(
            f"cannot connect a prefix with {prefix.output_dim} outputs to a suffix "
            f"with {suffix.input_dim} inputs")
    last = prefix.layers[-1]
    first = suffix.layers[0]
    fused = AffineLayer(first.weights @ last.weights,
                        first.weights @ last.biases + first.biases,
                        relu=first.relu)
    return Network(prefix.layers[:-1] + (fused,) + suffix.layers[1:])


def identity_network(dim: int) -> Network:
    return Network([AffineLayer(np.eye(dim), np.zeros(dim), relu=False)])


def shift_network(dim: int, constant: float) -> Network:
    """Affine layer adding ``constant`` to every coordinate."""
    return Network([AffineLayer(np.eye(dim), np.full(dim, float(constant)), relu=False)])


def max_gadget_layer(r: int, d: int) -> Network:
    """ReLU network ``R^r -> R^2`` returning ``(y_d, max of the other entries)``.

    Built as a left-to-right chain of two-input gadgets
    ``max(p, q) = ReLU(p - q) + ReLU(q)``; the chain is exact only for
    non-negative inputs, so callers must shift raw logits first.
    """
    if r < 2:
        raise ValueError("the max gadget layer needs at least two classes")
    if not 0 <= d < r:
        raise ValueError(f"label {d} outside 0..{r - 1}")
    others = [k for k in range(r) if k != d]
    if r == 2:
        w = np.zeros((2, 2))
        w[0, d] = 1.0
        w[1, others[0]] = 1.0
        return Network([AffineLayer(w, np.zeros(2), relu=False)])

    # Each hidden layer carries [ReLU(M - o_k), ReLU(o_k), o_{k+1}, ..., o_last, y_d]
    # where M is the running maximum, itself a sum of the first two neurons
    # of the previous layer.
    layers = []
    n_o = len(others)
    # first hidden layer: gadget on (o_0, o_1), pass-through of the rest
    width = 2 + (n_o - 2) + 1
    w = np.zeros((width, r))
    w[0, others[0]] = 1.0
    w[0, others[1]] = -1.0
    w[1, others[1]] = 1.0
    for t, k in enumerate(others[2:]):
        w[2 + t, k] = 1.0
    w[-1, d] = 1.0
    layers.append(AffineLayer(w, np.zeros(width)))
    remaining = n_o - 2
    while remaining > 0:
        prev = width
        width = 2 + (remaining - 1) + 1
        w = np.zeros((width, prev))
        # running max M = n0 + n1 of the previous layer; next other is at index 2
        w[0, 0] = w[0, 1] = 1.0
        w[0, 2] = -1.0
        w[1, 2] = 1.0
        for t in range(remaining - 1):
            w[2 + t, 3 + t] = 1.0
        w[-1, prev - 1] = 1.0
        layers.append(AffineLayer(w, np.zeros(width)))
        remaining -= 1
    out = np.zeros((2, width))
    out[0, width - 1] = 1.0
    out[1, 0] = out[1, 1] = 1.0
    layers.append(AffineLayer(out, np.zeros(2), relu=False))
    return Network(layers)


# ----------------------------------------------------------------------------
# FNN text format

_MAGIC = "FNN"
_VERSION = "1"


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_network(net: Network, dest: IO[str] | None = None) -> str:
    """Serialise ``net``; returns the text and writes it to ``dest`` if given."""
    lines = [f"{_MAGIC} {_VERSION}", str(len(net.layers)), " ".join(map(str, net.widths))]
    for layer in net.layers:
        for row, bias in zip(layer.weights, layer.biases):
            lines.append(" ".join(_fmt(v) for v in row) + " " + _fmt(bias))
    text = "\n".join(lines) + "\n"
    if dest is not None:
        dest.write(text)
    return text


def _parse_ints(tokens, lineno, what):
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise NetworkFormatError(f"non-integer token in {what}", lineno) from None


def load_network(source) -> Network:
    """Parse the FNN text format from a path, stream, bytes, or a string holding the text.

    A string without a newline is taken to be a path.
    """
    if isinstance(source, (bytes, bytearray)):
        text = source.decode("utf-8")
    elif isinstance(source, str) and "\n" in source:
        text = source
    elif hasattr(source, "read"):
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    lines = text.splitlines()

    def line(k):
        if k >= len(lines):
            raise NetworkFormatError("unexpected end of file", k + 1)
        return lines[k].split()

    head = line(0)
    if len(head) != 2 or head[0] != _MAGIC:
        raise NetworkFormatError("expected header 'FNN 1'", 1)
    if head[1] != _VERSION:
        raise NetworkFormatError(f"unsupported format version {head[1]!r}", 1)
    count = _parse_ints(line(1), 2, "layer count")
    if len(count) != 1 or count[0] < 1:
        raise NetworkFormatError("layer count must be a single positive integer", 2)
    n_layers = count[0]
    widths = _parse_ints(line(2), 3, "layer widths")
    if len(widths) != n_layers + 1:
        raise NetworkFormatError(
            f"expected {n_layers + 1} layer widths, found {len(widths)}", 3)
    if any(wd < 1 for wd in widths):
        raise NetworkFormatError("layer widths must be positive", 3)

    k = 3
    layers = []
    for li in range(n_layers):
        n_in, n_out = widths[li], widths[li + 1]
        block = np.empty((n_out, n_in + 1))
        for r in range(n_out):
            toks = line(k)
            if len(toks) != n_in + 1:
                raise NetworkFormatError(
                    f"layer {li + 1} row {r + 1}: expected {n_in + 1} values, found {len(toks)}",
                    k + 1)
            try:
                block[r] = [float(t) for t in toks]
            except ValueError:
                raise NetworkFormatError("non-numeric token", k + 1) from None
            k += 1
        layers.append(AffineLayer(block[:, :-1], block[:, -1], relu=li < n_layers - 1))
    if any(s.strip() for s in lines[k:]):
        raise NetworkFormatError("trailing data after the last layer", k + 1)
    return Network(layers)


def network_to_bytes(net: Network) -> bytes:
    buf = io.StringIO()
    save_network(net, buf)
    return buf.getvalue().encode("utf-8")
