"""Network data model, weight-file formats, and seeded random generation.

Two interchangeable file formats are supported:

* ``json``: ``{"activation": {"alpha": A, "beta": B},
  "layers": [{"W": [[...], ...], "b": [...]}, ...]}`` with weight rows
  in row-major order.  Floats survive a round trip exactly (shortest
  repr encoding).
* ``ecl-binary``: magic bytes ``ECL1``, then little-endian
  ``u32 layer_count``, ``f64 alpha``, ``f64 beta``, and per layer
  ``u32 rows``, ``u32 cols``, ``rows*cols`` f64 weights row-major and
  ``rows`` f64 bias entries.  Bit-exact round trip.

Random networks follow a fixed protocol: entrywise standard-normal
weights, each matrix rescaled so its spectral norm equals a uniform
draw from ``norm_range``, zero biases, activation slope bounds (0, 1).
The generator is a pure function of its arguments.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import spectral
from .errors import NonFiniteError, ParseError, ShapeError

_MAGIC = b"ECL1"


@dataclass(frozen=True)
class ActivationBounds:
    """Slope bounds [alpha, beta] of the elementwise activation.

    The derived quadratic-form coefficients ``p = alpha*beta`` and
    ``m = (alpha+beta)/2`` are recomputed properties, never stored.
    """

    alpha: float
    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and math.isfinite(self.beta)):
            raise NonFiniteError("activation bounds must be finite")
        if not self.alpha < self.beta:
            raise ValueError(f"require alpha < beta, got ({self.alpha}, {self.beta})")

    @property
    def p(self) -> float:
        return self.alpha * self.beta

    @property
    def m(self) -> float:
        return (self.alpha + self.beta) / 2.0

    def is_unit_interval(self) -> bool:
        """True for the (0, 1) slope class the compositional estimators require."""
        return self.alpha == 0.0 and self.beta == 1.0


UNIT_INTERVAL = ActivationBounds(0.0, 1.0)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LayerWeights:
    """One affine layer: weight matrix W (d_out x d_in) and bias b (d_out)."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        if W.ndim != 2 or W.size == 0:
            raise ShapeError(f"weight matrix must be 2-d and nonempty, got {W.shape}")
        b = np.array(self.b, dtype=float).reshape(-1)
        if b.shape[0] != W.shape[0]:
            raise ShapeError(
                f"bias length {b.shape[0]} does not match {W.shape[0]} output rows"
            )
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("layer has non-finite entries")
        if not W.any():
            raise ValueError("weight matrix is entirely zero")
        object.__setattr__(self, "W", _readonly(W))
        object.__setattr__(self, "b", _readonly(b))

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class Network:
    """Ordered affine layers plus activation slope bounds.

    The final layer is linear (no activation); every interior layer is
    followed by the activation.  Shape chaining is validated eagerly.
    """

    layers: tuple[LayerWeights, ...]
    activation: ActivationBounds = UNIT_INTERVAL

    def __post_init__(self):
        layers = tuple(self.layers)
        if len(layers) < 1:
            raise ShapeError("a network needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i].in_dim != layers[i - 1].out_dim:
                raise ShapeError(
                    f"layer {i + 1} expects {layers[i].in_dim} inputs but layer "
                    f"{i} produces {layers[i - 1].out_dim}",
                    layer=i + 1,
                )
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dims(self) -> tuple[int, ...]:
        """(d_0, d_1, ..., d_l): input width followed by every output width."""
        return (self.layers[0].in_dim,) + tuple(la.out_dim for la in self.layers)

    def weights(self) -> list[np.ndarray]:
        return [la.W for la in self.layers]


def from_weights(Ws, bs=None, activation: ActivationBounds = UNIT_INTERVAL) -> Network:
    """Build a Network from raw weight matrices (biases default to zero)."""
    Ws = [np.asarray(W, dtype=float) for W in Ws]
    if bs is None:
        bs = [np.zeros(W.shape[0]) for W in Ws]
    return Network(tuple(LayerWeights(W, b) for W, b in zip(Ws, bs)), activation)


# ---------------------------------------------------------------------------
# Counter-based RNG ("splitmix64-polar/v1").
# ---------------------------------------------------------------------------

RNG_SCHEME = "splitmix64-polar/v1"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


class CounterRng:
    """Deterministic counter-mode RNG, identical on every platform.

    Draw ``k`` is the SplitMix64 finalizer applied to
    ``seed + (k+1)*golden`` (pure uint64 arithmetic), mapped to [0, 1)
    with 53 bits.  Standard normals use the Marsaglia polar method,
    consuming uniform pairs in counter order; the accept/reject pattern
    is a pure function of the seed, so results do not depend on internal
    block sizes.  Scheme name: ``splitmix64-polar/v1``.
    """

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._counter = 0

    def uniforms(self, n: int) -> np.ndarray:
        """Next n uniforms in [0, 1)."""
        with np.errstate(over="ignore"):
            k = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
            z = _mix64(self._seed + k * _GOLDEN)
        self._counter += n
        return (z >> np.uint64(11)).astype(float) * 2.0**-53

    def normals(self, n: int) -> np.ndarray:
        """Next n standard normals (polar method)."""
        out = np.empty(0)
        while out.size < n:
            pairs = max(64, int(1.4 * (n - out.size)) // 2 + 16)
            u = self.uniforms(2 * pairs)
            x = 2.0 * u[0::2] - 1.0
            y = 2.0 * u[1::2] - 1.0
            s = x * x + y * y
            keep = (s > 0.0) & (s < 1.0)
            f = np.sqrt(-2.0 * np.log(s[keep]) / s[keep])
            z = np.empty(2 * int(keep.sum()))
            z[0::2] = x[keep] * f
            z[1::2] = y[keep] * f
            out = np.concatenate([out, z])
        return out[:n]


def random_network(
    depth: int,
    widths,
    seed: int,
    norm_range: tuple[float, float] = (0.4, 1.8),
) -> Network:
    """Seeded random network with per-layer spectral norms in ``norm_range``.

    ``widths`` is either a single neuron count applied to every
    dimension, or a full sequence ``(d_0, ..., d_l)`` of length
    ``depth + 1``.  Weights are standard normal, rescaled per layer so
    the spectral norm equals a uniform draw from the range; biases are
    zero and the activation is fixed to (0, 1).  Pure function of its
    arguments; the pre-rescale normal variance is immaterial because of
    the rescaling.
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if isinstance(widths, (int, np.integer)):
        dims = [int(widths)] * (depth + 1)
    else:
        dims = [int(w) for w in widths]
        if len(dims) != depth + 1:
            raise ValueError(
                f"widths sequence must have depth+1 = {depth + 1} entries, got {len(dims)}"
            )
    if any(d < 1 for d in dims):
        raise ValueError(f"widths must be positive, got {dims}")
    lo, hi = float(norm_range[0]), float(norm_range[1])
    if not (0.0 < lo <= hi) or not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError(f"need 0 < lo <= hi in norm_range, got ({lo}, {hi})")

    rng = CounterRng(seed)
    targets = lo + (hi - lo) * rng.uniforms(depth)
    layers = []
    for i in range(depth):
        rows, cols = dims[i + 1], dims[i]
        W = rng.normals(rows * cols).reshape(rows, cols)
        sigma = spectral.spectral_norm(W)
        if sigma == 0.0:
            raise ValueError(f"degenerate zero draw for layer {i + 1}")
        W = W * (targets[i] / sigma)
        layers.append(LayerWeights(W, np.zeros(rows)))
    return Network(tuple(layers), UNIT_INTERVAL)


# ---------------------------------------------------------------------------
# File I/O.
# ---------------------------------------------------------------------------


def _network_from_obj(obj) -> Network:
    try:
        act = obj["activation"]
        activation = ActivationBounds(float(act["alpha"]), float(act["beta"]))
        raw_layers = obj["layers"]
        if not isinstance(raw_layers, list) or not raw_layers:
            raise ParseError("'layers' must be a nonempty list")
        layers = []
        for idx, entry in enumerate(raw_layers, start=1):
            W = np.array(entry["W"], dtype=float)
            b = np.array(entry["b"], dtype=float)
            if W.ndim != 2:
                raise ShapeError(f"layer {idx} weight matrix is not 2-d", layer=idx)
            layers.append((W, b))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"network object missing or malformed field: {exc}") from exc
    built = []
    for idx, (W, b) in enumerate(layers, start=1):
        try:
            built.append(LayerWeights(W, b))
        except ShapeError as exc:
            raise ShapeError(f"layer {idx}: {exc}", layer=idx) from exc
    return Network(tuple(built), activation)


def _load_json(path: str) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON in {path}: {exc}") from exc
    return _network_from_obj(obj)


def _load_binary(path: str) -> Network:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ParseError(f"{path} does not start with the ECL1 magic bytes")

    off = 4

    def take(n: int) -> int:
        nonlocal off
        if off + n > len(data):
            raise ParseError(f"truncated binary network file {path}")
        off += n
        return off - n

    (count,) = struct.unpack_from("<I", data, take(4))
    alpha, beta = struct.unpack_from("<dd", data, take(16))
    layers = []
    for idx in range(1, count + 1):
        rows, cols = struct.unpack_from("<II", data, take(8))
        if rows < 1 or cols < 1:
            raise ParseError(f"layer {idx} has empty shape {rows}x{cols}")
        W = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=take(8 * rows * cols))
        b = np.frombuffer(data, dtype="<f8", count=rows, offset=take(8 * rows))
        layers.append(LayerWeights(W.reshape(rows, cols).copy(), b.copy()))
    if off != len(data):
        raise ParseError(f"{len(data) - off} trailing bytes in {path}")
    return Network(tuple(layers), ActivationBounds(alpha, beta))


def load_network(path, fmt: str | None = None) -> Network:
    """Load a network file; ``fmt`` is 'json', 'ecl-binary', or None to sniff."""
    path = str(path)
    if fmt is None:
        with open(path, "rb") as fh:
            fmt = "ecl-binary" if fh.read(4) == _MAGIC else "json"
    if fmt == "json":
        return _load_json(path)
    if fmt == "ecl-binary":
        return _load_binary(path)
    raise ValueError(f"unknown format {fmt!r}")


def _validate_for_save(net: Network):
    # Re-validate defensively: frozen dataclasses cannot stop in-place
    # mutation of an extracted array reference.
    for idx, la in enumerate(net.layers, start=1):
        if not (np.all(np.isfinite(la.W)) and np.all(np.isfinite(la.b))):
            raise ValueError(f"layer {idx} has non-finite entries")
        if not la.W.any():
            raise ValueError(f"layer {idx} weight matrix is entirely zero")


def save_network(net: Network, path, fmt: str = "json") -> None:
    """Write ``net`` to ``path``; round-trips through load_network."""
    _validate_for_save(net)
    path = str(path)
    if fmt == "json":
        obj = {
            "activation": {"alpha": net.activation.alpha, "beta": net.activation.beta},
            "layers": [
                {"W": la.W.tolist(), "b": la.b.tolist()} for la in net.layers
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh)
            fh.write("\n")
    elif fmt == "ecl-binary":
        chunks = [_MAGIC, struct.pack("<I", net.depth)]
        chunks.append(struct.pack("<dd", net.activation.alpha, net.activation.beta))
        for la in net.layers:
            rows, cols = la.W.shape
            chunks.append(struct.pack("<II", rows, cols))
            chunks.append(np.ascontiguousarray(la.W, dtype="<f8").tobytes())
            chunks.append(np.ascontiguousarray(la.b, dtype="<f8").tobytes())
        with open(path, "wb") as fh:
            fh.write(b"".join(chunks))
    else:
        raise ValueError(f"unknown format {fmt!r}")


def networks_equal(a: Network, b: Network, rtol: float = 0.0) -> bool:
    """Entrywise equality of two networks (exact by default)."""
    if a.depth != b.depth or a.dims != b.dims:
        return False
    if (a.activation.alpha, a.activation.beta) != (b.activation.alpha, b.activation.beta):
        return False
    for la, lb in zip(a.layers, b.layers):
        if rtol == 0.0:
            if not (np.array_equal(la.W, lb.W) and np.array_equal(la.b, lb.b)):
                return False
        else:
            if not (
                np.allclose(la.W, lb.W, rtol=rtol, atol=0.0)
                and np.allclose(la.b, lb.b, rtol=rtol, atol=0.0)
            ):
                return False
    return True
