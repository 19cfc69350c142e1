"""Minimal tape-based reverse-mode engine for 1-D convolutional networks.

Everything runs in float64 numpy. Recording is ambient: operations executed
inside a ``with GradTape() as tape:`` block are appended to that tape, and a
single ``backward(loss, tape)`` call replays them in reverse. Outside a tape
the same functions act as plain (and cheaper) forward computations.

Only the operations needed by a multi-encoder convolutional autoencoder are
provided; this is deliberately not a general autodiff framework.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

BCE_EPS = 1e-7

_KINDS = ("conv1d", "transposed-conv1d", "pointwise-affine")
_ACTIVATIONS = ("relu", "sigmoid", "identity")


class AutodiffError(Exception):
    """Raised on contract violations inside the engine."""


class Tensor:
    """A dense float64 array plus a gradient slot filled in by backward()."""

    __slots__ = ("data", "grad")

    def __init__(self, data, copy: bool = False):
        if copy:
            arr = np.array(data, dtype=np.float64, order="C")
        else:
            arr = np.ascontiguousarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise AutodiffError("tensor contains NaN or Inf values")
        self.data = arr
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.item())

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.data.shape})"


@dataclass
class ParamLayer:
    """Parameters and geometry of one network layer.

    weights has shape [C_out, C_in, K] for every kind; bias has shape [C_out].
    Output lengths follow the usual formulas:
      conv1d:            L_out = floor((L_in + 2*padding - K) / stride) + 1
      transposed-conv1d: L_out = (L_in - 1)*stride - 2*padding + K
    pointwise-affine is a K=1, stride-1 convolution (a per-sample channel mix).
    """

    kind: str
    weights: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0
    activation: str = "identity"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise AutodiffError(f"unknown layer kind {self.kind!r}")
        if self.activation not in _ACTIVATIONS:
            raise AutodiffError(f"unknown activation {self.activation!r}")
        if self.stride < 1:
            raise AutodiffError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise AutodiffError(f"padding must be >= 0, got {self.padding}")
        if self.weights.data.ndim != 3:
            raise AutodiffError(
                f"weights must be [C_out, C_in, K], got shape {self.weights.shape}"
            )
        if self.bias.data.shape != (self.weights.shape[0],):
            raise AutodiffError(
                f"bias shape {self.bias.shape} does not match C_out="
                f"{self.weights.shape[0]}"
            )
        if self.kind == "pointwise-affine":
            if self.weights.shape[2] != 1 or self.stride != 1 or self.padding != 0:
                raise AutodiffError(
                    "pointwise-affine requires K=1, stride=1, padding=0"
                )

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]

    def parameters(self) -> list[Tensor]:
        return [self.weights, self.bias]


class GradTape:
    """Ordered record of executed operations enabling one backward pass."""

    def __init__(self):
        self._entries: list[tuple[Tensor, Callable]] = []
        self._params: dict[int, Tensor] = {}
        self._consumed = False

    def __enter__(self) -> "GradTape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPES.pop()

    def record(self, out: Tensor, backward_fn: Callable) -> None:
        """Append one op; backward_fn(grad_out, accum) scatters into inputs."""
        self._entries.append((out, backward_fn))

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            self._params[id(t)] = t

    def __len__(self) -> int:
        return len(self._entries)


_ACTIVE_TAPES: list[GradTape] = []


def _current_tape() -> GradTape | None:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class _GradStore:
    """Accumulates gradients keyed by tensor identity during backward."""

    def __init__(self):
        self._grads: dict[int, np.ndarray] = {}
        self._tensors: dict[int, Tensor] = {}

    def add(self, t: Tensor, g: np.ndarray) -> None:
        key = id(t)
        if key in self._grads:
            self._grads[key] += g
        else:
            self._grads[key] = np.array(g, dtype=np.float64)
            self._tensors[key] = t

    def get(self, t: Tensor) -> np.ndarray | None:
        return self._grads.get(id(t))

    def flush(self) -> None:
        for key, t in self._tensors.items():
            t.grad = self._grads[key]


def backward(loss: Tensor, tape: GradTape,
             parameters: Iterable[Tensor] | None = None) -> None:
    """Populate .grad for every tensor reachable from loss under this tape.

    Tensors listed in `parameters` (or watched by the tape) that the loss does
    not reach receive zero gradients of their own shape. Calling backward a
    second time on the same tape is an error: saved activations belong to one
    forward pass only.
    """
    if tape._consumed:
        raise AutodiffError(
            "backward called twice on the same tape; run a new forward pass"
        )
    tape._consumed = True
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise AutodiffError(f"loss must be scalar, got shape {loss.shape}")

    store = _GradStore()
    store.add(loss, np.ones_like(loss.data))
    for out, backward_fn in reversed(tape._entries):
        g = store.get(out)
        if g is None:
            continue  # branch not reachable from the loss
        backward_fn(g, store)
    store.flush()

    watched: dict[int, Tensor] = dict(tape._params)
    if parameters is not None:
        for t in parameters:
            watched[id(t)] = t
    for t in watched.values():
        if store.get(t) is None:
            t.grad = np.zeros_like(t.data)


# ---------------------------------------------------------------------------
# elementwise ops


def _apply_activation(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(pre, 0.0)
    if activation == "sigmoid":
        return _sigmoid_np(pre)
    return pre


def _activation_grad(g: np.ndarray, out: np.ndarray, activation: str) -> np.ndarray:
    # Both relu and sigmoid backward need only the activation output.
    if activation == "relu":
        return g * (out > 0.0)
    if activation == "sigmoid":
        return g * out * (1.0 - out)
    return g


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # Split by sign to avoid overflow in exp for large |x|.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    """Elementwise logistic function, outputs in (0, 1)."""
    out = Tensor(_sigmoid_np(x.data))
    tape = _current_tape()
    if tape is not None:
        o = out.data

        def bwd(g, store):
            store.add(x, g * o * (1.0 - o))

        tape.record(out, bwd)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    tape = _current_tape()
    if tape is not None:
        o = out.data

        def bwd(g, store):
            store.add(x, g * (o > 0.0))

        tape.record(out, bwd)
    return out


def bce(prediction: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy, predictions clamped to [eps, 1-eps].

    Gradients flow to the prediction only; the target is treated as data.
    """
    if prediction.shape != target.shape:
        raise AutodiffError(
            f"bce shape mismatch: prediction {prediction.shape} vs "
            f"target {target.shape}"
        )
    p = np.clip(prediction.data, BCE_EPS, 1.0 - BCE_EPS)
    t = target.data
    val = -np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    out = Tensor(val)
    tape = _current_tape()
    if tape is not None:
        inside = (prediction.data > BCE_EPS) & (prediction.data < 1.0 - BCE_EPS)
        n = p.size

        def bwd(g, store):
            gp = g * inside * (p - t) / (p * (1.0 - p) * n)
            store.add(prediction, gp)

        tape.record(out, bwd)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise AutodiffError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    tape = _current_tape()
    if tape is not None:

        def bwd(g, store):
            store.add(a, g)
            store.add(b, g)

        tape.record(out, bwd)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * c)
    tape = _current_tape()
    if tape is not None:

        def bwd(g, store):
            store.add(x, g * c)

        tape.record(out, bwd)
    return out


def sum_squares(x: Tensor) -> Tensor:
    """Sum of squared entries, as a scalar node."""
    out = Tensor(np.sum(x.data * x.data))
    tape = _current_tape()
    if tape is not None:
        xd = x.data

        def bwd(g, store):
            store.add(x, 2.0 * g * xd)

        tape.record(out, bwd)
    return out


def masked_l1(x: Tensor, mask: np.ndarray) -> Tensor:
    """Sum of |x| over entries where mask is nonzero (mask is constant)."""
    if mask.shape != x.data.shape:
        raise AutodiffError(f"mask shape {mask.shape} != tensor shape {x.shape}")
    out = Tensor(np.sum(np.abs(x.data) * mask))
    tape = _current_tape()
    if tape is not None:
        sgn = np.sign(x.data) * mask

        def bwd(g, store):
            store.add(x, g * sgn)

        tape.record(out, bwd)
    return out


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate [B, C_i, L] tensors along the channel axis, in order."""
    if not parts:
        raise AutodiffError("concat_channels needs at least one tensor")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    tape = _current_tape()
    if tape is not None:
        sizes = [p.data.shape[1] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def bwd(g, store):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                store.add(p, g[:, lo:hi, :])

        tape.record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# convolution ops


def _check_signal(x: Tensor, layer: ParamLayer, op: str) -> None:
    if x.data.ndim != 3:
        raise AutodiffError(f"{op} expects input [B, C, L], got shape {x.shape}")
    if x.data.shape[1] != layer.in_channels:
        raise AutodiffError(
            f"{op} channel mismatch: input shape {x.shape} vs weights "
            f"shape {layer.weights.shape}"
        )


def _window_matrix(xpad: np.ndarray, kernel: int, stride: int,
                   l_out: int) -> np.ndarray:
    """Materialized im2col matrix [B, L_out, C, K] (contiguous)."""
    b, c, _ = xpad.shape
    s0, s1, s2 = xpad.strides
    view = np.lib.stride_tricks.as_strided(
        xpad, (b, l_out, c, kernel), (s0, s2 * stride, s1, s2),
        writeable=False)
    return np.ascontiguousarray(view)


def _conv_forward(x: Tensor, layer: ParamLayer) -> Tensor:
    b, c_in, l_in = x.data.shape
    k, stride, pad = layer.kernel_size, layer.stride, layer.padding
    c_out = layer.out_channels
    if l_in + 2 * pad < k:
        raise AutodiffError(
            f"input length {l_in} with padding {pad} shorter than kernel {k}"
        )
    l_out = (l_in + 2 * pad - k) // stride + 1
    xpad = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
    cols = _window_matrix(xpad, k, stride, l_out).reshape(b * l_out, c_in * k)
    w2 = layer.weights.data.reshape(c_out, c_in * k)
    pre = (cols @ w2.T).reshape(b, l_out, c_out)
    pre = np.ascontiguousarray(pre.transpose(0, 2, 1))
    pre += layer.bias.data[None, :, None]
    out = Tensor(_apply_activation(pre, layer.activation))
    tape = _current_tape()
    if tape is not None:
        tape.watch(layer.weights, layer.bias)
        act, o = layer.activation, out.data
        lp = xpad.shape[2]

        def bwd(g, store):
            gpre = _activation_grad(g, o, act)
            store.add(layer.bias, gpre.sum(axis=(0, 2)))
            g2 = np.ascontiguousarray(gpre.transpose(0, 2, 1)) \
                .reshape(b * l_out, c_out)
            store.add(layer.weights, (g2.T @ cols).reshape(c_out, c_in, k))
            # scatter grads back onto the (padded) input, [B, L, C] layout
            t = (g2 @ w2).reshape(b, l_out, c_in, k)
            gx_t = np.zeros((b, lp, c_in))
            for kk in range(k):
                gx_t[:, kk:kk + stride * l_out:stride, :] += t[:, :, :, kk]
            gx = np.ascontiguousarray(gx_t.transpose(0, 2, 1))
            if pad:
                gx = gx[:, :, pad:-pad]
            store.add(x, gx)

        tape.record(out, bwd)
    return out


def conv1d(x: Tensor, layer: ParamLayer) -> Tensor:
    """Strided cross-correlation plus bias, then the layer's activation."""
    if layer.kind != "conv1d":
        raise AutodiffError(f"conv1d called with layer kind {layer.kind!r}")
    _check_signal(x, layer, "conv1d")
    return _conv_forward(x, layer)


def pointwise_affine(x: Tensor, layer: ParamLayer) -> Tensor:
    """Per-sample channel mixing (a kernel-1 convolution)."""
    if layer.kind != "pointwise-affine":
        raise AutodiffError(
            f"pointwise_affine called with layer kind {layer.kind!r}"
        )
    _check_signal(x, layer, "pointwise_affine")
    return _conv_forward(x, layer)


def transposed_conv1d(x: Tensor, layer: ParamLayer) -> Tensor:
    """Gradient-of-conv1d upsampling with output length (L-1)*s - 2p + K."""
    if layer.kind != "transposed-conv1d":
        raise AutodiffError(
            f"transposed_conv1d called with layer kind {layer.kind!r}"
        )
    _check_signal(x, layer, "transposed_conv1d")
    b, c_in, l_in = x.data.shape
    k, stride, pad = layer.kernel_size, layer.stride, layer.padding
    c_out = layer.out_channels
    l_full = (l_in - 1) * stride + k
    l_out = l_full - 2 * pad
    if l_out <= 0:
        raise AutodiffError(
            f"transposed conv output length {l_out} <= 0 for input {x.shape}"
        )
    x2 = np.ascontiguousarray(x.data.transpose(0, 2, 1)).reshape(b * l_in, c_in)
    w2 = np.ascontiguousarray(
        layer.weights.data.transpose(1, 0, 2)).reshape(c_in, c_out * k)
    t = (x2 @ w2).reshape(b, l_in, c_out, k)
    # accumulate in [B, L, C] layout so every scatter slice is regular
    full_t = np.zeros((b, l_full, c_out))
    for kk in range(k):
        full_t[:, kk:kk + stride * l_in:stride, :] += t[:, :, :, kk]
    pre = full_t[:, pad:l_full - pad, :] if pad else full_t
    pre = np.ascontiguousarray(pre.transpose(0, 2, 1))
    pre += layer.bias.data[None, :, None]
    out = Tensor(_apply_activation(pre, layer.activation))
    tape = _current_tape()
    if tape is not None:
        tape.watch(layer.weights, layer.bias)
        act, o = layer.activation, out.data

        def bwd(g, store):
            gpre = _activation_grad(g, o, act)
            store.add(layer.bias, gpre.sum(axis=(0, 2)))
            gfull = np.zeros((b, c_out, l_full))
            gfull[:, :, pad:l_full - pad] = gpre
            # one materialized window matrix serves both contractions
            gcols = _window_matrix(gfull, k, stride, l_in) \
                .reshape(b * l_in, c_out * k)
            gx = (gcols @ w2.T).reshape(b, l_in, c_in)
            store.add(x, np.ascontiguousarray(gx.transpose(0, 2, 1)))
            gw = (gcols.T @ x2).reshape(c_out, k, c_in)
            store.add(layer.weights,
                      np.ascontiguousarray(gw.transpose(0, 2, 1)))

        tape.record(out, bwd)
    return out


def apply_layer(x: Tensor, layer: ParamLayer) -> Tensor:
    if layer.kind == "conv1d":
        return conv1d(x, layer)
    if layer.kind == "transposed-conv1d":
        return transposed_conv1d(x, layer)
    return pointwise_affine(x, layer)


def conv_output_length(l_in: int, kernel: int, stride: int, padding: int) -> int:
    return (l_in + 2 * padding - kernel) // stride + 1


def transposed_conv_output_length(l_in: int, kernel: int, stride: int,
                                  padding: int) -> int:
    return (l_in - 1) * stride - 2 * padding + kernel
