"""Multi-encoder convolutional autoencoder with a block-partitioned decoder.

N encoders with identical architecture (independent parameters) each map the
input signal to a latent encoding; the encodings are concatenated along the
channel axis and decoded back to the input by a single decoder whose hidden
layers admit an N x N block structure over channel groups. Masking all but
one encoding at decode time yields that encoder's source estimate.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    AutodiffError,
    ParamLayer,
    Tensor,
    apply_layer,
    concat_channels,
    conv1d,
)

CHECKPOINT_MAGIC = b"MEAE"
CHECKPOINT_VERSION = 1


class ModelError(Exception):
    """Raised on architecture or checkpoint contract violations."""


@dataclass(frozen=True)
class MEAEConfig:
    """Architecture hyperparameters; every length derives from these."""

    num_encoders: int = 8
    input_length: int = 6144
    encoder_channels: tuple[int, ...] = (16, 32)
    encoding_channels: int = 4
    decoder_group_width: int = 8
    encoder_kernel: int = 15
    decoder_kernel: int = 16
    stride: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_encoders < 1:
            raise ModelError("num_encoders must be >= 1")
        if self.encoder_kernel % 2 == 0:
            raise ModelError("encoder_kernel must be odd for exact downsampling")
        if (self.decoder_kernel - self.stride) % 2 != 0 or \
                self.decoder_kernel < self.stride:
            raise ModelError(
                "decoder_kernel must satisfy decoder_kernel >= stride and "
                "decoder_kernel == stride (mod 2) for exact upsampling"
            )
        total = self.stride ** self.depth
        if self.input_length % total != 0:
            raise ModelError(
                f"input_length {self.input_length} not divisible by total "
                f"stride {total}"
            )

    @property
    def depth(self) -> int:
        return len(self.encoder_channels) + 1

    @property
    def total_stride(self) -> int:
        return self.stride ** self.depth

    @property
    def encoding_length(self) -> int:
        return self.input_length // self.total_stride

    @property
    def decoder_hidden_channels(self) -> int:
        return self.num_encoders * self.decoder_group_width

    @property
    def concat_channels(self) -> int:
        return self.num_encoders * self.encoding_channels

    @property
    def elements_per_encoding(self) -> int:
        return self.encoding_channels * self.encoding_length

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["encoder_channels"] = list(d["encoder_channels"])
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "MEAEConfig":
        d = json.loads(text)
        d["encoder_channels"] = tuple(d["encoder_channels"])
        return cls(**d)


@dataclass
class MEAEParams:
    """N encoder layer stacks plus the shared decoder stack."""

    encoders: list[list[ParamLayer]]
    decoder: list[ParamLayer]

    @property
    def num_encoders(self) -> int:
        return len(self.encoders)

    def parameters(self) -> list[Tensor]:
        out = []
        for stack in self.encoders:
            for layer in stack:
                out.extend(layer.parameters())
        for layer in self.decoder:
            out.extend(layer.parameters())
        return out

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        """Stable (name, tensor) ordering shared by checkpoints and tests."""
        out = []
        for n, stack in enumerate(self.encoders):
            for i, layer in enumerate(stack):
                out.append((f"encoder{n}.layer{i}.weights", layer.weights))
                out.append((f"encoder{n}.layer{i}.bias", layer.bias))
        for i, layer in enumerate(self.decoder):
            out.append((f"decoder.layer{i}.weights", layer.weights))
            out.append((f"decoder.layer{i}.bias", layer.bias))
        return out


@dataclass
class Encodings:
    """Per-encoder latents plus their channel-wise concatenation."""

    per_encoder: list[Tensor]
    concatenated: Tensor


def _uniform_layer(rng, kind, c_out, c_in, k, stride, padding, activation):
    bound = np.sqrt(1.0 / (c_in * k))
    w = rng.uniform(-bound, bound, size=(c_out, c_in, k))
    b = rng.uniform(-bound, bound, size=c_out)
    return ParamLayer(kind, Tensor(w), Tensor(b), stride, padding, activation)


def init_params(config: MEAEConfig) -> MEAEParams:
    """Seeded fan-in uniform initialization of all encoders and the decoder."""
    rng = np.random.default_rng(config.seed)
    ek, dk, s = config.encoder_kernel, config.decoder_kernel, config.stride
    enc_pad = (ek - 1) // 2
    dec_pad = (dk - s) // 2
    enc_channels = (1, *config.encoder_channels, config.encoding_channels)

    encoders = []
    for _ in range(config.num_encoders):
        stack = []
        for i in range(config.depth):
            act = "identity" if i == config.depth - 1 else "relu"
            stack.append(_uniform_layer(rng, "conv1d", enc_channels[i + 1],
                                        enc_channels[i], ek, s, enc_pad, act))
        encoders.append(stack)

    hidden = config.decoder_hidden_channels
    decoder = []
    c_in = config.concat_channels
    for _ in range(config.depth):
        decoder.append(_uniform_layer(rng, "transposed-conv1d", hidden, c_in,
                                      dk, s, dec_pad, "relu"))
        c_in = hidden
    decoder.append(_uniform_layer(rng, "pointwise-affine", 1, hidden, 1, 1, 0,
                                  "sigmoid"))
    return MEAEParams(encoders, decoder)


def _check_input(config: MEAEConfig, x: Tensor) -> None:
    if x.data.ndim != 3 or x.data.shape[1] != 1:
        raise ModelError(f"expected input [B, 1, L], got shape {x.shape}")
    if x.data.shape[2] != config.input_length:
        raise ModelError(
            f"input length {x.data.shape[2]} != configured "
            f"{config.input_length}"
        )
    lo, hi = float(x.data.min()), float(x.data.max())
    if lo < 0.0 or hi > 1.0:
        raise ModelError(f"input values must lie in [0, 1], got [{lo}, {hi}]")


def _run_encoder(stack: list[ParamLayer], x: Tensor) -> Tensor:
    h = x
    for layer in stack:
        h = conv1d(h, layer)
    return h


def encode_all(params: MEAEParams, config: MEAEConfig, x: Tensor) -> Encodings:
    """Run every encoder on the same input and concatenate the latents."""
    _check_input(config, x)
    per = [_run_encoder(stack, x) for stack in params.encoders]
    return Encodings(per, concat_channels(per))


def decode(params: MEAEParams, config: MEAEConfig, z: Tensor) -> Tensor:
    """Decode a concatenated encoding to a (0, 1) signal of input length."""
    if z.data.ndim != 3 or z.data.shape[1] != config.concat_channels:
        raise ModelError(
            f"decoder expects {config.concat_channels} channels, got shape "
            f"{z.shape}"
        )
    if z.data.shape[2] != config.encoding_length:
        raise ModelError(
            f"encoding length {z.data.shape[2]} != configured "
            f"{config.encoding_length}"
        )
    h = z
    for layer in params.decoder:
        h = apply_layer(h, layer)
    return h


def reconstruct(params: MEAEParams, config: MEAEConfig,
                x: Tensor) -> tuple[Tensor, Encodings]:
    encodings = encode_all(params, config, x)
    return decode(params, config, encodings.concatenated), encodings


def zero_encodings(config: MEAEConfig, batch: int = 1) -> Tensor:
    """The all-zero concatenated encoding (decoder input for masking)."""
    return Tensor(np.zeros((batch, config.concat_channels,
                            config.encoding_length)))


def infer_source(params: MEAEParams, config: MEAEConfig, x: Tensor,
                 n: int) -> Tensor:
    """Decode with every encoding except encoder n's masked to zeros.

    Masked encoders are never evaluated; their output is zero by definition,
    so their parameters cannot influence (or receive gradients from) the
    source estimate.
    """
    if not 0 <= n < params.num_encoders:
        raise ModelError(
            f"encoder index {n} out of range [0, {params.num_encoders})"
        )
    _check_input(config, x)
    active = _run_encoder(params.encoders[n], x)
    batch = x.data.shape[0]
    zero_shape = (batch, config.encoding_channels, config.encoding_length)
    parts = [
        active if i == n else Tensor(np.zeros(zero_shape))
        for i in range(params.num_encoders)
    ]
    return decode(params, config, concat_channels(parts))


def block_view(layer: ParamLayer, n: int) -> list[list[np.ndarray]]:
    """N x N views of a layer's weights: slice (i, j) = out-group i, in-group j.

    The slices tile the weight tensor exactly once; they are views, not
    copies, so they stay live against parameter updates.
    """
    c_out, c_in, _ = layer.weights.shape
    if c_out % n != 0 or c_in % n != 0:
        raise ModelError(
            f"layer channels ({c_out}, {c_in}) not divisible into {n} groups"
        )
    go, gi = c_out // n, c_in // n
    w = layer.weights.data
    return [
        [w[i * go:(i + 1) * go, j * gi:(j + 1) * gi, :] for j in range(n)]
        for i in range(n)
    ]


def offdiagonal_mask(layer: ParamLayer, n: int) -> np.ndarray:
    """1.0 on every off-diagonal block of the N x N partition, 0.0 elsewhere."""
    c_out, c_in, k = layer.weights.shape
    if c_out % n != 0 or c_in % n != 0:
        raise ModelError(
            f"layer channels ({c_out}, {c_in}) not divisible into {n} groups"
        )
    go, gi = c_out // n, c_in // n
    mask = np.ones((c_out, c_in, k))
    for i in range(n):
        mask[i * go:(i + 1) * go, i * gi:(i + 1) * gi, :] = 0.0
    return mask


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, config JSON, named float32 records


def _write_record(fh, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise ModelError("truncated checkpoint file")
    return data


def _read_record(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
    name = _read_exact(fh, name_len).decode("utf-8")
    (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").reshape(shape)
    return name, arr


def save_checkpoint(params: MEAEParams, config: MEAEConfig, path) -> None:
    """Write parameters at 32-bit storage precision; round-trip is bit-exact."""
    records = params.named_tensors()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        cfg = config.to_json().encode("utf-8")
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        fh.write(struct.pack("<I", len(records)))
        for name, tensor in records:
            _write_record(fh, name, tensor.data)


def load_checkpoint(path) -> tuple[MEAEParams, MEAEConfig]:
    """Rebuild params from a checkpoint; values carry float32 rounding."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != CHECKPOINT_MAGIC:
            raise ModelError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CHECKPOINT_VERSION:
            raise ModelError(
                f"unsupported checkpoint version {version} "
                f"(expected {CHECKPOINT_VERSION})"
            )
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4))
        config = MEAEConfig.from_json(_read_exact(fh, cfg_len).decode("utf-8"))
        (n_records,) = struct.unpack("<I", _read_exact(fh, 4))
        loaded = {}
        for _ in range(n_records):
            name, arr = _read_record(fh)
            loaded[name] = arr

    params = init_params(config)
    expected = params.named_tensors()
    if len(expected) != len(loaded):
        raise ModelError(
            f"checkpoint has {len(loaded)} records, expected {len(expected)}"
        )
    for name, tensor in expected:
        if name not in loaded:
            raise ModelError(f"checkpoint missing parameter {name!r}")
        arr = loaded[name]
        if arr.shape != tensor.data.shape:
            raise ModelError(
                f"checkpoint parameter {name!r} has shape {arr.shape}, "
                f"expected {tensor.data.shape}"
            )
        tensor.data[...] = arr.astype(np.float64)
    return params, config
