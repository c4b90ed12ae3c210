"""The spiking Q-network: windowed forward pass and hand-derived
backpropagation through time with surrogate gradients.

Forward semantics: for t = 1..T each hidden layer charges
(m = v + W s_prev + b), fires, and resets; the readout layer is non-spiking
and accumulates its linear map over all T steps, adding its bias every step
(so the bias contributes T*b in total). Q-values are reals, not spikes.

The implementation runs layer-major instead of time-major: a layer's affine
transform is applied to all T timesteps in one matrix product, then the
cheap elementwise membrane recurrence walks the window sequentially. Because
layers are strictly feedforward this is step-for-step identical to the
time-major loop while keeping the heavy arithmetic in large GEMMs.

Backward treats the |s| reset gate as a constant mask (no gradient through
the spike indicator); credit flows through the spike path via the surrogate
kernel and through the membrane carry v(t) = beta*m(t)*(1-|s(t)|).

A network built with smooth_spec set replaces fire() with the kernel's exact
antiderivative and drops the reset gate (pure decay carry v = beta*m), making
the whole unrolled computation differentiable: in that regime backward() is
exact and can be checked against finite differences. Training always uses the
hard spiking mode.

Minibatches prepend a batch axis; the tape stores per-item state. Tensors are
float32 by default (float64 is supported for gradient checks).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import neuron
from .neuron import NeuronModelKind, NeuronParams, SurrogateSpec
from .tensor import (
    FLOAT,
    DimensionError,
    Rng,
    Tensor,
    conv_output_size,
    extract_patches,
    scatter_patches,
)

CONV = "conv"
DENSE = "dense"
READOUT = "readout"


@dataclass(frozen=True)
class LayerSpec:
    """Geometry of one layer: conv (units = out channels) or dense/readout."""

    kind: str
    units: int
    kernel: int = 0
    stride: int = 1


def conv_spec(out_channels: int, kernel: int, stride: int) -> LayerSpec:
    return LayerSpec(CONV, out_channels, kernel, stride)


def dense_spec(units: int) -> LayerSpec:
    return LayerSpec(DENSE, units)


def readout_spec(n_actions: int) -> LayerSpec:
    return LayerSpec(READOUT, n_actions)


def atari_layer_specs(n_actions: int) -> list[LayerSpec]:
    """Conv 32@8x8/4 -> 64@4x4/2 -> 64@3x3/1 -> dense 512 -> readout."""
    return [
        conv_spec(32, 8, 4),
        conv_spec(64, 4, 2),
        conv_spec(64, 3, 1),
        dense_spec(512),
        readout_spec(n_actions),
    ]


def desk_layer_specs(n_actions: int) -> list[LayerSpec]:
    """Scaled-down stack for small (24x24 / 8x8) pixel grids."""
    return [
        conv_spec(16, 4, 2),
        conv_spec(32, 3, 1),
        dense_spec(128),
        readout_spec(n_actions),
    ]


ARCHITECTURES = {"atari": atari_layer_specs, "desk": desk_layer_specs}


@dataclass
class Layer:
    spec: LayerSpec
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    W: Tensor
    b: Tensor
    # spiking layers only; v_th_n aliases v_th_p (same array) when symmetric
    kind: NeuronModelKind | None = None
    beta: float = 0.9
    v_reset: float = 0.0
    v_th_p: Tensor | None = None
    v_th_n: Tensor | None = None

    @property
    def is_spiking(self) -> bool:
        return self.kind is not None

    def neuron_params(self) -> NeuronParams:
        return NeuronParams(
            beta=self.beta,
            v_reset=self.v_reset,
            v_th_p=float(self.v_th_p),
            v_th_n=float(self.v_th_n),
        )

    @property
    def fan_in(self) -> int:
        if self.spec.kind == CONV:
            return self.in_shape[0] * self.spec.kernel * self.spec.kernel
        return int(np.prod(self.in_shape))


@dataclass
class SpikingNetwork:
    input_shape: tuple[int, ...]
    layers: list[Layer]
    model: NeuronModelKind
    dtype: np.dtype = FLOAT
    # set only for the differentiable gradient-check regime
    smooth_spec: SurrogateSpec | None = None
    version: int = 0

    @property
    def n_actions(self) -> int:
        return self.layers[-1].spec.units

    def bump_version(self) -> None:
        """Call after any in-place parameter update; invalidates old tapes."""
        self.version += 1


def build_network(
    input_shape: tuple[int, ...],
    specs: list[LayerSpec],
    model: NeuronModelKind,
    beta: float = 0.9,
    v_reset: float = 0.0,
    v_th_p: float = 1.0,
    v_th_n_init: float = 2.0,
    dtype=FLOAT,
    smooth_spec: SurrogateSpec | None = None,
) -> SpikingNetwork:
    """Allocate a network (weights zero until init_params) with chained shapes."""
    if specs[-1].kind != READOUT:
        raise ValueError("final layer must be a readout")
    if any(s.kind == READOUT for s in specs[:-1]):
        raise ValueError("readout must be the final layer only")
    layers: list[Layer] = []
    shape = tuple(input_shape)
    for spec in specs:
        if spec.kind == CONV:
            c, h, w = shape
            if h < spec.kernel or w < spec.kernel:
                raise DimensionError(
                    f"conv kernel {spec.kernel} exceeds input {shape}"
                )
            out_shape = (
                spec.units,
                conv_output_size(h, spec.kernel, spec.stride),
                conv_output_size(w, spec.kernel, spec.stride),
            )
            W = np.zeros((spec.units, c, spec.kernel, spec.kernel), dtype=dtype)
        else:
            out_shape = (spec.units,)
            W = np.zeros((spec.units, int(np.prod(shape))), dtype=dtype)
        b = np.zeros(spec.units, dtype=dtype)
        layer = Layer(spec=spec, in_shape=shape, out_shape=out_shape, W=W, b=b)
        if spec.kind != READOUT:
            layer.kind = model
            layer.beta = beta
            layer.v_reset = v_reset
            layer.v_th_p = np.asarray(v_th_p, dtype=dtype)
            if model.family == neuron.TERNARY_ASYMMETRIC:
                layer.v_th_n = np.asarray(v_th_n_init, dtype=dtype)
            else:
                layer.v_th_n = layer.v_th_p  # shared (symmetric) or unused (binary)
        layers.append(layer)
        shape = out_shape
    return SpikingNetwork(
        input_shape=tuple(input_shape),
        layers=layers,
        model=model,
        dtype=np.dtype(dtype),
        smooth_spec=smooth_spec,
    )


def init_params(net: SpikingNetwork, rng: Rng) -> SpikingNetwork:
    """Fan-in-scaled uniform weights U(-1/sqrt(fan_in), +1/sqrt(fan_in)),
    zero biases; thresholds reset to their configured initial values."""
    for layer in net.layers:
        bound = 1.0 / np.sqrt(layer.fan_in)
        layer.W[...] = rng.gen.uniform(-bound, bound, size=layer.W.shape).astype(
            net.dtype
        )
        layer.b[...] = 0.0
    net.bump_version()
    return net


def _threshold_entries(i: int, layer: Layer) -> list[tuple[str, Tensor, bool]]:
    """(name, array, trainable) for each distinct threshold parameter."""
    kind = layer.kind
    if kind is None:
        return []
    if kind.is_symmetric:
        return [(f"layers.{i}.v_th", layer.v_th_p, kind.threshold_trainable_pos)]
    entries = [(f"layers.{i}.v_th_p", layer.v_th_p, kind.threshold_trainable_pos)]
    if kind.family == neuron.TERNARY_ASYMMETRIC:
        entries.append((f"layers.{i}.v_th_n", layer.v_th_n, kind.threshold_trainable_neg))
    return entries


def all_params(net: SpikingNetwork) -> dict[str, Tensor]:
    """Every parameter tensor, trainable or not (checkpoint order)."""
    out: dict[str, Tensor] = {}
    for i, layer in enumerate(net.layers):
        out[f"layers.{i}.W"] = layer.W
        out[f"layers.{i}.b"] = layer.b
        for name, arr, _ in _threshold_entries(i, layer):
            out[name] = arr
    return out


def trainable_params(net: SpikingNetwork) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for i, layer in enumerate(net.layers):
        out[f"layers.{i}.W"] = layer.W
        out[f"layers.{i}.b"] = layer.b
        for name, arr, trainable in _threshold_entries(i, layer):
            if trainable:
                out[name] = arr
    return out


def clamp_thresholds(net: SpikingNetwork) -> None:
    """Enforce the positive-threshold floor after an optimizer step."""
    for layer in net.layers:
        if layer.is_spiking:
            for arr in (layer.v_th_p, layer.v_th_n):
                if float(arr) < neuron.THRESHOLD_FLOOR:
                    arr[...] = neuron.THRESHOLD_FLOOR


def sync_params(dst: SpikingNetwork, src: SpikingNetwork) -> None:
    """Bit-copy every parameter from src into dst (target-network sync)."""
    src_params = all_params(src)
    for name, arr in all_params(dst).items():
        arr[...] = src_params[name]
    dst.bump_version()


def copy_network(net: SpikingNetwork) -> SpikingNetwork:
    clone = build_network(
        net.input_shape,
        [layer.spec for layer in net.layers],
        net.model,
        beta=net.layers[0].beta if net.layers[0].is_spiking else 0.9,
        v_reset=net.layers[0].v_reset if net.layers[0].is_spiking else 0.0,
        dtype=net.dtype,
        smooth_spec=net.smooth_spec,
    )
    sync_params(clone, net)
    return clone


@dataclass
class LayerRecord:
    m: Tensor  # [B, T, *units] membrane before spike
    s: Tensor  # [B, T, *units] emitted spikes
    patches: Tensor | None  # conv input patches [B*T, P, C*k*k]


@dataclass
class NetworkTape:
    """Per-timestep, per-layer state retained for BPTT; one forward pass each."""

    net: SpikingNetwork
    version: int
    inputs: Tensor  # [B, T, *input_shape] encoder spikes
    records: list[LayerRecord] = field(default_factory=list)

    @property
    def batch_size(self) -> int:
        return self.inputs.shape[0]

    @property
    def window(self) -> int:
        return self.inputs.shape[1]


def _affine(layer: Layer, x: Tensor, keep_patches: bool):
    """Per-timestep linear map over a [B, T, ...] input block."""
    b, t = x.shape[:2]
    if layer.spec.kind == CONV:
        k, stride = layer.spec.kernel, layer.spec.stride
        patches = extract_patches(x.reshape(b * t, *layer.in_shape), k, stride)
        out = layer.W.reshape(layer.spec.units, -1) @ patches  # [BT, C_out, P]
        out = out.reshape(b, t, *layer.out_shape)
        out += layer.b[:, None, None]
        return out, (patches if keep_patches else None)
    flat = x.reshape(b, t, -1)
    return flat @ layer.W.T + layer.b, None


def _lif_scan(a: Tensor, layer: Layer, smooth_spec: SurrogateSpec | None):
    """Run the membrane recurrence over the window; returns (m_seq, s_seq)."""
    params = layer.neuron_params()
    steps = a.shape[1]
    m_seq = np.empty_like(a)
    s_seq = np.empty_like(a)
    v = np.zeros_like(a[:, 0])
    for t in range(steps):
        m = v + a[:, t]
        if smooth_spec is None:
            s = neuron.fire(m, params, layer.kind)
            gate = np.abs(s)
            v = params.beta * m * (1.0 - gate) + params.v_reset * gate
        else:
            s = neuron.smooth_activation(m, params, layer.kind, smooth_spec)
            v = params.beta * m  # pure decay carry in the differentiable regime
        m_seq[:, t] = m
        s_seq[:, t] = s
    return m_seq, s_seq


def forward_batch(
    spikes: Tensor, net: SpikingNetwork, record: bool = True
) -> tuple[Tensor, NetworkTape]:
    """Forward a [B, T, *input_shape] spike block; Q is [B, n_actions]."""
    if spikes.shape[2:] != net.input_shape:
        raise DimensionError(
            f"forward: encoder output {spikes.shape[2:]} does not match "
            f"network input {net.input_shape}"
        )
    x = spikes.astype(net.dtype, copy=False)
    tape = NetworkTape(net=net, version=net.version, inputs=x)
    for layer in net.layers[:-1]:
        a, patches = _affine(layer, x, keep_patches=record)
        m_seq, s_seq = _lif_scan(a, layer, net.smooth_spec)
        if record:
            tape.records.append(LayerRecord(m=m_seq, s=s_seq, patches=patches))
        x = s_seq
    readout = net.layers[-1]
    b, t = x.shape[:2]
    flat = x.reshape(b, t, -1)
    q = np.zeros((b, readout.spec.units), dtype=net.dtype)
    for ti in range(t):  # sequential accumulation: bias contributes T*b exactly
        q = q + (flat[:, ti] @ readout.W.T + readout.b)
    return q, tape


def forward(
    spikes: Tensor, net: SpikingNetwork, record: bool = True
) -> tuple[Tensor, NetworkTape]:
    """Single-observation forward: spikes [T, *input_shape] -> Q [n_actions]."""
    q, tape = forward_batch(spikes[None], net, record=record)
    return q[0], tape


class StaleTapeError(RuntimeError):
    """The tape does not correspond to the network's current parameters."""


ParamGrads = dict


def backward(tape: NetworkTape, dL_dq: Tensor, spec: SurrogateSpec) -> ParamGrads:
    """Reverse-time unroll producing gradients for every trainable parameter.

    dL_dq is [n_actions] or [B, n_actions]. Keys of the result match
    trainable_params(). Credit flows through the spike path (surrogate
    kernel) and the membrane carry; the reset indicator |s| is a constant
    mask. In smooth mode the carry is pure decay and the same kernels are
    the exact derivatives of the forward activation.
    """
    net = tape.net
    if len(net.layers) > 1 and not tape.records:
        raise StaleTapeError("tape has no recorded layer state; run forward with record=True")
    if tape.version != net.version:
        raise StaleTapeError(
            f"tape built at parameter version {tape.version}, network now at {net.version}"
        )
    if net.smooth_spec is not None and spec != net.smooth_spec:
        raise ValueError("backward surrogate spec must match the network's smooth_spec")
    if dL_dq.ndim == 1:
        dL_dq = dL_dq[None]
    bsz, window = tape.batch_size, tape.window
    grads: ParamGrads = {}

    # readout: Q = sum_t (W s_t + b)
    ro_index = len(net.layers) - 1
    readout = net.layers[-1]
    top_s = tape.records[-1].s if tape.records else tape.inputs
    top_flat = top_s.reshape(bsz, window, -1)
    grads[f"layers.{ro_index}.W"] = (dL_dq.T @ top_flat.sum(axis=1)).astype(net.dtype)
    grads[f"layers.{ro_index}.b"] = (window * dL_dq.sum(axis=0)).astype(net.dtype)
    if len(net.layers) == 1:
        return grads
    g_const = dL_dq @ readout.W  # identical for every timestep
    g_s = np.broadcast_to(
        g_const[:, None], (bsz, window, g_const.shape[1])
    ).reshape(bsz, window, *net.layers[-2].out_shape)

    for li in range(len(net.layers) - 2, -1, -1):
        layer = net.layers[li]
        rec = tape.records[li]
        params = layer.neuron_params()
        smooth = net.smooth_spec is not None
        want_pos = layer.kind.threshold_trainable_pos
        want_neg = layer.kind.is_ternary and layer.kind.threshold_trainable_neg
        spike_path = neuron.surrogate_grad_m(rec.m, params, layer.kind, spec)
        carry = (
            params.beta
            if smooth
            else params.beta * (1.0 - np.abs(rec.s))
        )
        g_a = np.empty_like(rec.m)
        g_v = np.zeros_like(rec.m[:, 0])
        for ti in range(window - 1, -1, -1):
            gm = g_s[:, ti] * spike_path[:, ti]
            gm += g_v * (carry if smooth else carry[:, ti])
            g_a[:, ti] = gm
            g_v = gm
        if want_pos or want_neg:
            dpos, dneg = neuron.surrogate_grad_threshold(rec.m, params, layer.kind, spec)
            dvp = float(np.sum(g_s * dpos, dtype=np.float64))
            dvn = float(np.sum(g_s * dneg, dtype=np.float64))
            if layer.kind.is_symmetric:
                grads[f"layers.{li}.v_th"] = np.asarray(dvp + dvn, dtype=net.dtype)
            else:
                if want_pos:
                    grads[f"layers.{li}.v_th_p"] = np.asarray(dvp, dtype=net.dtype)
                if want_neg:
                    grads[f"layers.{li}.v_th_n"] = np.asarray(dvn, dtype=net.dtype)

        if layer.spec.kind == CONV:
            c_out = layer.spec.units
            n_pos = g_a.shape[-2] * g_a.shape[-1]
            g3 = g_a.reshape(bsz * window, c_out, n_pos)
            # batched GEMM with transposed B; BLAS handles the view directly
            grads[f"layers.{li}.W"] = (
                np.matmul(g3, rec.patches.transpose(0, 2, 1)).sum(axis=0)
            ).reshape(layer.W.shape)
            grads[f"layers.{li}.b"] = g_a.sum(axis=(0, 1, 3, 4))
            if li > 0:  # nothing consumes the gradient w.r.t. encoder spikes
                g_patches = layer.W.reshape(c_out, -1).T @ g3  # [BT, C*k*k, P]
                g_x = scatter_patches(
                    g_patches,
                    (bsz * window, *layer.in_shape),
                    layer.spec.kernel,
                    layer.spec.stride,
                ).reshape(bsz, window, *layer.in_shape)
        else:
            x_in = tape.records[li - 1].s if li > 0 else tape.inputs
            x2 = x_in.reshape(bsz * window, -1)
            g2 = g_a.reshape(bsz * window, -1)
            grads[f"layers.{li}.W"] = g2.T @ x2
            grads[f"layers.{li}.b"] = g2.sum(axis=0)
            if li > 0:
                g_x = (g2 @ layer.W).reshape(bsz, window, *layer.in_shape)
        if li > 0:
            g_s = g_x
    return grads


def gradient_norm(grads: ParamGrads) -> float:
    """Global L2 norm over all parameter gradients."""
    total = 0.0
    for g in grads.values():
        total += float(np.vdot(g, g))
    return float(np.sqrt(total))


# --- checkpoint format -----------------------------------------------------
#
# A checkpoint is a single file: a utf-8 key-value manifest (layer specs,
# scalar hyperparameters, and one entry per tensor giving name/shape/dtype)
# followed by a blob marker and the raw little-endian tensor bytes in
# manifest order. Round-trips are bit-exact.

_CKPT_MAGIC = "spikeq-checkpoint-v1"
_BLOB_MARKER = b"\n@@blob@@\n"


def save_checkpoint(net: SpikingNetwork, path) -> None:
    lines = [f"format = {_CKPT_MAGIC}"]
    lines.append(f"input_shape = {','.join(map(str, net.input_shape))}")
    lines.append(f"dtype = {net.dtype.name}")
    lines.append(f"model.family = {net.model.family}")
    lines.append(f"model.trainable_pos = {int(net.model.threshold_trainable_pos)}")
    lines.append(f"model.trainable_neg = {int(net.model.threshold_trainable_neg)}")
    lines.append(f"layers.count = {len(net.layers)}")
    for i, layer in enumerate(net.layers):
        lines.append(f"layer.{i}.kind = {layer.spec.kind}")
        lines.append(f"layer.{i}.units = {layer.spec.units}")
        lines.append(f"layer.{i}.kernel = {layer.spec.kernel}")
        lines.append(f"layer.{i}.stride = {layer.spec.stride}")
        if layer.is_spiking:
            lines.append(f"layer.{i}.beta = {layer.beta!r}")
            lines.append(f"layer.{i}.v_reset = {layer.v_reset!r}")
    params = all_params(net)
    lines.append(f"tensors.count = {len(params)}")
    blob = bytearray()
    for j, (name, arr) in enumerate(params.items()):
        lines.append(f"tensor.{j}.name = {name}")
        lines.append(f"tensor.{j}.shape = {','.join(map(str, arr.shape))}")
        lines.append(f"tensor.{j}.dtype = {arr.dtype.name}")
        blob += np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
    with open(path, "wb") as fh:
        fh.write("\n".join(lines).encode("utf-8"))
        fh.write(_BLOB_MARKER)
        fh.write(bytes(blob))


def _parse_manifest(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_checkpoint(path) -> SpikingNetwork:
    with open(path, "rb") as fh:
        raw = fh.read()
    head, sep, blob = raw.partition(_BLOB_MARKER)
    if not sep:
        raise ValueError(f"{path}: not a checkpoint (blob marker missing)")
    kv = _parse_manifest(head.decode("utf-8"))
    if kv.get("format") != _CKPT_MAGIC:
        raise ValueError(f"{path}: unsupported checkpoint format {kv.get('format')!r}")
    model = NeuronModelKind(
        kv["model.family"],
        bool(int(kv["model.trainable_pos"])),
        bool(int(kv["model.trainable_neg"])),
    )
    n_layers = int(kv["layers.count"])
    specs = [
        LayerSpec(
            kv[f"layer.{i}.kind"],
            int(kv[f"layer.{i}.units"]),
            int(kv[f"layer.{i}.kernel"]),
            int(kv[f"layer.{i}.stride"]),
        )
        for i in range(n_layers)
    ]
    input_shape = tuple(int(x) for x in kv["input_shape"].split(","))
    net = build_network(
        input_shape,
        specs,
        model,
        beta=float(kv.get("layer.0.beta", 0.9)),
        v_reset=float(kv.get("layer.0.v_reset", 0.0)),
        dtype=np.dtype(kv["dtype"]),
    )
    for i, layer in enumerate(net.layers):
        if layer.is_spiking:
            layer.beta = float(kv[f"layer.{i}.beta"])
            layer.v_reset = float(kv[f"layer.{i}.v_reset"])
    params = all_params(net)
    offset = 0
    for j in range(int(kv["tensors.count"])):
        name = kv[f"tensor.{j}.name"]
        shape_text = kv[f"tensor.{j}.shape"]
        shape = tuple(int(x) for x in shape_text.split(",")) if shape_text else ()
        dtype = np.dtype(kv[f"tensor.{j}.dtype"]).newbyteorder("<")
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype=dtype).reshape(shape)
        params[name][...] = arr
        offset += nbytes
    return net
