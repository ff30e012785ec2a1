"""Conv-LSTM cell, stacked encoder, and composite dual-decoder model.

The cell uses convolutional input-to-state and state-to-state transforms,
elementwise peephole weights on the cell state, and gate order
input/forget/candidate/output:

    i = sigmoid(w_xi * x + w_hi * h + w_ci . c_prev + b_i)
    f = sigmoid(w_xf * x + w_hf * h + w_cf . c_prev + b_f)
    c = f . c_prev + i . tanh(w_xc * x + w_hc * h + b_c)
    o = sigmoid(w_xo * x + w_ho * h + w_co . c + b_o)
    h = o . tanh(c)

(`*` is same-padding cross-correlation, `.` Hadamard.) The composite model
encodes a patchified input window, reconstructs it with a past decoder and
extrapolates it with a future decoder; each decoder merges the per-layer
hidden states through a 1x1 convolution followed by the configured output
nonlinearity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError
from .tensor import Tensor

CHECKPOINT_MAGIC = "CONVLSTM-CKPT v1"

_NONLINEARITIES = {"sigmoid": T.sigmoid, "relu": T.relu}

DECODE_MODES = ("past", "future_unconditioned", "future_conditioned")


@dataclass
class NetworkConfig:
    """Architecture description; see README for full-scale values."""

    frame_size: int = 64
    input_len: int = 5
    output_len: int = 5
    patch_factor: int = 4
    filter_size: int = 5
    layer_channels: tuple[int, ...] = (32, 16, 16)
    conditioned: bool = False
    composite: bool = True
    output_nonlinearity: str = "sigmoid"

    def __post_init__(self):
        self.layer_channels = tuple(int(c) for c in self.layer_channels)
        if self.frame_size < 1 or self.patch_factor < 1:
            raise ConfigError("frame_size and patch_factor must be positive")
        if self.frame_size % self.patch_factor:
            raise ConfigError(
                f"frame size {self.frame_size} not divisible by "
                f"patch factor {self.patch_factor}"
            )
        if self.filter_size < 1 or self.filter_size % 2 == 0:
            raise ConfigError("filter_size must be odd and positive")
        if not self.layer_channels or any(c < 1 for c in self.layer_channels):
            raise ConfigError("layer_channels must be a non-empty list of counts")
        if self.input_len < 1 or self.output_len < 1:
            raise ConfigError("input_len and output_len must be >= 1")
        if self.output_nonlinearity not in _NONLINEARITIES:
            raise ConfigError(
                f"unknown output nonlinearity {self.output_nonlinearity!r}"
            )

    @property
    def patch_channels(self) -> int:
        return self.patch_factor * self.patch_factor

    @property
    def patch_side(self) -> int:
        return self.frame_size // self.patch_factor

    @property
    def window_len(self) -> int:
        return self.input_len + self.output_len

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "layer_channels":
                v = ", ".join(str(c) for c in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            d[f.name] = str(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            raw = d[f.name]
            if f.name == "layer_channels":
                kwargs[f.name] = tuple(int(x) for x in str(raw).replace(",", " ").split())
            elif f.name in ("conditioned", "composite"):
                kwargs[f.name] = str(raw).strip().lower() in ("true", "1", "yes")
            elif f.name == "output_nonlinearity":
                kwargs[f.name] = str(raw).strip()
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)


@dataclass
class ConvLSTMCellParams:
    """Weights of one Conv-LSTM layer."""

    w_xi: Tensor
    w_hi: Tensor
    w_xf: Tensor
    w_hf: Tensor
    w_xc: Tensor
    w_hc: Tensor
    w_xo: Tensor
    w_ho: Tensor
    w_ci: Tensor
    w_cf: Tensor
    w_co: Tensor
    b_i: Tensor
    b_f: Tensor
    b_c: Tensor
    b_o: Tensor

    def tensors(self) -> list[tuple[str, Tensor]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    @property
    def hidden_channels(self) -> int:
        return self.w_xi.shape[0]


@dataclass
class CellState:
    h: Tensor
    c: Tensor


@dataclass
class DecoderParams:
    """Decoder cell stack plus its 1x1 output aggregation."""

    cells: list[ConvLSTMCellParams]
    agg_kernel: Tensor  # [patch_channels, sum(layer_channels), 1, 1]
    agg_bias: Tensor  # [patch_channels]


@dataclass
class CompositeModel:
    config: NetworkConfig
    encoder: list[ConvLSTMCellParams]
    future: DecoderParams
    past: DecoderParams | None = None

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, cell in enumerate(self.encoder):
            out += [(f"encoder.{i}.{n}", t) for n, t in cell.tensors()]
        groups = [("future", self.future)]
        if self.past is not None:
            groups.append(("past", self.past))
        for prefix, dec in groups:
            for i, cell in enumerate(dec.cells):
                out += [(f"{prefix}.{i}.{n}", t) for n, t in cell.tensors()]
            out.append((f"{prefix}.agg.kernel", dec.agg_kernel))
            out.append((f"{prefix}.agg.bias", dec.agg_bias))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


def init_cell(
    in_channels: int,
    hidden_channels: int,
    filter_size: int,
    spatial: tuple[int, int],
    rng: np.random.Generator,
) -> ConvLSTMCellParams:
    """Xavier kernels; zero biases and peepholes."""
    f = filter_size
    kx = (hidden_channels, in_channels, f, f)
    kh = (hidden_channels, hidden_channels, f, f)
    fan_x_in, fan_x_out = in_channels * f * f, hidden_channels * f * f
    fan_h = hidden_channels * f * f

    def xk():
        return T.xavier_init(kx, fan_x_in, fan_x_out, rng)

    def hk():
        return T.xavier_init(kh, fan_h, fan_h, rng)

    state_shape = (hidden_channels,) + spatial
    return ConvLSTMCellParams(
        w_xi=xk(), w_hi=hk(),
        w_xf=xk(), w_hf=hk(),
        w_xc=xk(), w_hc=hk(),
        w_xo=xk(), w_ho=hk(),
        w_ci=T.zeros(state_shape, requires_grad=True),
        w_cf=T.zeros(state_shape, requires_grad=True),
        w_co=T.zeros(state_shape, requires_grad=True),
        b_i=T.zeros(hidden_channels, requires_grad=True),
        b_f=T.zeros(hidden_channels, requires_grad=True),
        b_c=T.zeros(hidden_channels, requires_grad=True),
        b_o=T.zeros(hidden_channels, requires_grad=True),
    )


def _init_decoder(config: NetworkConfig, rng: np.random.Generator) -> DecoderParams:
    spatial = (config.patch_side, config.patch_side)
    cells = []
    in_ch = config.patch_channels
    for hid in config.layer_channels:
        cells.append(init_cell(in_ch, hid, config.filter_size, spatial, rng))
        in_ch = hid
    total = sum(config.layer_channels)
    agg_kernel = T.xavier_init(
        (config.patch_channels, total, 1, 1), total, config.patch_channels, rng
    )
    agg_bias = T.zeros(config.patch_channels, requires_grad=True)
    return DecoderParams(cells=cells, agg_kernel=agg_kernel, agg_bias=agg_bias)


def init_model(config: NetworkConfig, seed_or_rng) -> CompositeModel:
    """Build a freshly initialized model; creation order is fixed so a
    given seed always yields identical parameters."""
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else np.random.default_rng(seed_or_rng)
    )
    spatial = (config.patch_side, config.patch_side)
    encoder = []
    in_ch = config.patch_channels
    for hid in config.layer_channels:
        encoder.append(init_cell(in_ch, hid, config.filter_size, spatial, rng))
        in_ch = hid
    future = _init_decoder(config, rng)
    past = _init_decoder(config, rng) if config.composite else None
    return CompositeModel(config=config, encoder=encoder, future=future, past=past)


# ---------------------------------------------------------------------------
# forward operations


def patchify(frame, patch_factor: int) -> Tensor:
    """[1, S, S] frame -> [k*k, S/k, S/k] stack of non-overlapping patches."""
    t = frame if isinstance(frame, Tensor) else Tensor(frame)
    if t.data.ndim != 3 or t.data.shape[0] != 1:
        raise ConfigError(f"patchify expects a [1, S, S] frame, got {t.shape}")
    return T.space_to_depth(t, patch_factor)


def unpatchify(patches, patch_factor: int) -> Tensor:
    t = patches if isinstance(patches, Tensor) else Tensor(patches)
    out = T.depth_to_space(t, patch_factor)
    if out.data.shape[0] != 1:
        raise ConfigError(
            f"unpatchify: channel count {t.shape[0]} is not {patch_factor}**2"
        )
    return out


def zero_state(channels: int, spatial: tuple[int, int]) -> CellState:
    shape = (channels,) + tuple(spatial)
    return CellState(h=T.zeros(shape), c=T.zeros(shape))


def cell_step(params: ConvLSTMCellParams, x, prev: CellState) -> CellState:
    """One Conv-LSTM timestep. The two four-gate convolutions share their
    patch matrices (see tensor.conv2d_multi)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.shape[1:] != prev.h.data.shape[1:]:
        raise ConfigError(
            f"input spatial {x.data.shape[1:]} does not match state "
            f"{prev.h.data.shape[1:]}"
        )
    xi, xf, xc, xo = T.conv2d_multi(
        x,
        [params.w_xi, params.w_xf, params.w_xc, params.w_xo],
        [params.b_i, params.b_f, params.b_c, params.b_o],
    )
    hi, hf, hc, ho = T.conv2d_multi(
        prev.h,
        [params.w_hi, params.w_hf, params.w_hc, params.w_ho],
        [None, None, None, None],
    )
    i = T.sigmoid(xi + hi + params.w_ci * prev.c)
    f = T.sigmoid(xf + hf + params.w_cf * prev.c)
    c = f * prev.c + i * T.tanh(xc + hc)
    o = T.sigmoid(xo + ho + params.w_co * c)
    h = o * T.tanh(c)
    return CellState(h=h, c=c)


def encode(cells: list[ConvLSTMCellParams], inputs: list[Tensor]) -> list[CellState]:
    """Run the encoder stack over a patchified frame sequence.

    Layer l consumes layer l-1's hidden sequence (layer 0 the frames);
    initial states are zero; returns each layer's final state.
    """
    if not inputs:
        raise ConfigError("encode requires a non-empty input sequence")
    spatial = inputs[0].data.shape[1:]
    finals = []
    seq = inputs
    for cell in cells:
        state = zero_state(cell.hidden_channels, spatial)
        outs = []
        for x in seq:
            state = cell_step(cell, x, state)
            outs.append(state.h)
        finals.append(state)
        seq = outs
    return finals


def decode(
    decoder: DecoderParams,
    encoding: list[CellState],
    mode: str,
    steps: int,
    patch_factor: int,
    output_nonlinearity: str = "sigmoid",
) -> list[Tensor]:
    """Roll a decoder out for `steps` timesteps; returns frames [1, S, S]
    in chronological order.

    Each decoder layer starts from the matching encoder layer's final
    state. Per step the layer hidden states are channel-concatenated and
    reduced by the 1x1 aggregation, then the output nonlinearity. The
    past decoder and the unconditioned future decoder receive a zero
    first-layer input every step; the conditioned future decoder feeds
    back its previous patch-space output (zeros at the first step). The
    past decoder emits frames in reverse chronological order, which is
    flipped before returning.
    """
    if mode not in DECODE_MODES:
        raise ConfigError(f"unknown decode mode {mode!r}")
    if steps < 1:
        raise ConfigError("decode requires steps >= 1")
    if len(encoding) != len(decoder.cells):
        raise ConfigError(
            f"encoding has {len(encoding)} layers, decoder {len(decoder.cells)}"
        )
    nonlin = _NONLINEARITIES[output_nonlinearity]
    spatial = encoding[0].h.data.shape[1:]
    in_channels = decoder.cells[0].w_xi.shape[1]
    zero_in = T.zeros((in_channels,) + spatial)

    states = [CellState(h=e.h, c=e.c) for e in encoding]
    frames = []
    prev_patch = None
    for step in range(steps):
        if mode == "future_conditioned" and prev_patch is not None:
            x = prev_patch
        else:
            x = zero_in
        hs = []
        for layer, cell in enumerate(decoder.cells):
            states[layer] = cell_step(cell, x, states[layer])
            x = states[layer].h
            hs.append(x)
        merged = T.conv2d_same(T.concat(hs), decoder.agg_kernel, decoder.agg_bias)
        patch_out = nonlin(merged)
        prev_patch = patch_out
        frames.append(unpatchify(patch_out, patch_factor))
    if mode == "past":
        frames.reverse()
    return frames


@dataclass
class ForwardResult:
    reconstruction: list[Tensor] | None
    prediction: list[Tensor]
    loss: Tensor
    reconstruction_loss: Tensor | None = None
    prediction_loss: Tensor | None = None


def _coerce_frames(frames, expected: int, side: int, what: str) -> list[Tensor]:
    out = [f if isinstance(f, Tensor) else Tensor(f) for f in frames]
    if len(out) != expected:
        raise ConfigError(f"{what}: expected {expected} frames, got {len(out)}")
    for f in out:
        if f.data.shape != (1, side, side):
            raise ConfigError(
                f"{what}: frame shape {f.data.shape} != (1, {side}, {side})"
            )
    return out


def forward_composite(model: CompositeModel, input_seq, target_future) -> ForwardResult:
    """Encode an input window, reconstruct it, predict the future, and
    score both against their targets with one MSE over all frames."""
    cfg = model.config
    inputs = _coerce_frames(input_seq, cfg.input_len, cfg.frame_size, "input_seq")
    targets = _coerce_frames(
        target_future, cfg.output_len, cfg.frame_size, "target_future"
    )
    patches = [patchify(f, cfg.patch_factor) for f in inputs]
    encoding = encode(model.encoder, patches)

    future_mode = "future_conditioned" if cfg.conditioned else "future_unconditioned"
    prediction = decode(
        model.future, encoding, future_mode, cfg.output_len,
        cfg.patch_factor, cfg.output_nonlinearity,
    )
    pred_loss = T.mse(T.stack(prediction), T.stack(targets))

    if model.past is None:
        return ForwardResult(
            reconstruction=None,
            prediction=prediction,
            loss=pred_loss,
            prediction_loss=pred_loss,
        )

    reconstruction = decode(
        model.past, encoding, "past", cfg.input_len,
        cfg.patch_factor, cfg.output_nonlinearity,
    )
    recon_loss = T.mse(T.stack(reconstruction), T.stack(inputs))
    loss = T.mse(
        T.stack(reconstruction + prediction), T.stack(inputs + targets)
    )
    return ForwardResult(
        reconstruction=reconstruction,
        prediction=prediction,
        loss=loss,
        reconstruction_loss=recon_loss,
        prediction_loss=pred_loss,
    )


# ---------------------------------------------------------------------------
# checkpoint format
#
# Header line "CONVLSTM-CKPT v1\n", then "key = value\n" config lines ended
# by one blank line, then per tensor: u32 name length, UTF-8 name, u32 rank,
# u32 dims, raw little-endian float32 data. Round-trips are byte-exact.


def save_checkpoint(path, model: CompositeModel) -> None:
    with open(path, "wb") as fh:
        fh.write((CHECKPOINT_MAGIC + "\n").encode("utf-8"))
        for key, value in model.config.to_dict().items():
            fh.write(f"{key} = {value}\n".encode("utf-8"))
        fh.write(b"\n")
        for name, t in model.named_parameters():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            dims = t.data.shape
            fh.write(struct.pack("<I", len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
            fh.write(t.data.astype("<f4").tobytes())


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError("truncated checkpoint file")
    return buf


def load_checkpoint(path) -> CompositeModel:
    with open(path, "rb") as fh:
        magic = fh.readline().decode("utf-8", errors="replace").rstrip("\n")
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"not a checkpoint file (header {magic!r})")
        config_kv = {}
        while True:
            line = fh.readline().decode("utf-8")
            if line == "\n":
                break
            if not line or "=" not in line:
                raise DataError("malformed checkpoint config preamble")
            key, _, value = line.partition("=")
            config_kv[key.strip()] = value.strip()
        config = NetworkConfig.from_dict(config_kv)

        loaded: dict[str, np.ndarray] = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise DataError("truncated checkpoint file")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            count = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4")
            loaded[name] = data.astype(np.float64).reshape(dims)

    model = init_model(config, seed_or_rng=0)
    expected = dict(model.named_parameters())
    if set(expected) != set(loaded):
        missing = sorted(set(expected) - set(loaded))
        extra = sorted(set(loaded) - set(expected))
        raise DataError(
            f"checkpoint tensors do not match architecture "
            f"(missing {missing[:3]}, unexpected {extra[:3]})"
        )
    for name, tensor in expected.items():
        if tensor.data.shape != loaded[name].shape:
            raise DataError(
                f"checkpoint tensor {name} has shape {loaded[name].shape}, "
                f"expected {tensor.data.shape}"
            )
        tensor.data = loaded[name]
    return model
