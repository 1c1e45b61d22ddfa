"""Pyramidal dense attention network: configuration, layer graph and forward pass.

The network is held as an explicit list of nodes (a small SSA-style graph) so
that the same structure can be executed on tensors by :func:`forward` and walked
symbolically by :mod:`pdan.cost`.
"""

from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Iterable

import numpy as np

from . import ops
from .ops import BatchNormState, ConvSpec
from .tensor import NonFiniteError, Tensor

ATTENTION_KINDS = ("none", "se", "cbam", "joint")
UPSAMPLE_STAGES = {2: (2,), 3: (3,), 4: (2, 2)}


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------------
# growth arithmetic

@dataclass(frozen=True)
class DenseLayerPlan:
    index: int
    in_channels: int
    out_channels: int
    groups: int


@dataclass(frozen=True)
class GrowthSchedule:
    """Pyramidal growth: layer j emits ``g0 + g*(j-1)`` channels and the
    3x3 conv of layer i uses ``i + 1`` groups."""

    c0: int = 16
    g0: int = 32
    g: int = 16
    layers: int = 4

    def out_channels(self, j: int) -> int:
        return self.g0 + self.g * (j - 1)

    def in_channels(self, i: int) -> int:
        # closed form of c0 + sum_{j<i} out_channels(j)
        return self.c0 + (i - 1) * self.g0 + self.g * (i - 1) * (i - 2) // 2

    @staticmethod
    def groups(i: int) -> int:
        return i + 1

    @property
    def concat_width(self) -> int:
        return self.in_channels(self.layers + 1)

    def table(self) -> list[DenseLayerPlan]:
        if min(self.c0, self.g0, self.layers) < 1 or self.g < 0:
            raise ConfigError(f"invalid growth schedule {self}")
        plans = []
        for i in range(1, self.layers + 1):
            out, groups = self.out_channels(i), self.groups(i)
            if out % groups:
                raise ConfigError(
                    f"dense layer {i}: {out} output channels not divisible by {groups} groups")
            plans.append(DenseLayerPlan(i, self.in_channels(i), out, groups))
        return plans


def growth_schedule(c0: int, g0: int, g: int, layers: int) -> list[DenseLayerPlan]:
    return GrowthSchedule(c0, g0, g, layers).table()


def fixed_growth_in_channels(c0: int, g0: int, i: int) -> int:
    """Input width of layer i under conventional dense growth (constant rate g0)."""
    return c0 + (i - 1) * g0


# ----------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class NetworkConfig:
    scale: int = 4
    num_blocks: int = 16
    trunk_channels: int = 64
    growth: GrowthSchedule = field(default_factory=GrowthSchedule)
    attention: str = "joint"
    reduction: int = 16
    cbam_kernel: int = 7
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    global_skip: bool = False
    seed: int = 0

    def validate(self) -> "NetworkConfig":
        if self.scale not in UPSAMPLE_STAGES:
            raise ConfigError(f"scale must be one of {sorted(UPSAMPLE_STAGES)}, got {self.scale}")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"attention must be one of {ATTENTION_KINDS}, got {self.attention!r}")
        if self.num_blocks < 0 or self.trunk_channels < 1 or self.reduction < 1:
            raise ConfigError("num_blocks, trunk_channels and reduction must be positive")
        self.growth.table()
        width = self.growth.concat_width
        if self.attention != "none" and width % self.reduction:
            raise ConfigError(f"attention width {width} not divisible by reduction {self.reduction}")
        return self

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "NetworkConfig":
        d = dict(d)
        growth = GrowthSchedule(**d.pop("growth", {}))
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(growth=growth, **d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def with_(self, **changes) -> "NetworkConfig":
        return replace(self, **changes)


# ----------------------------------------------------------------------------
# graph

@dataclass(frozen=True)
class Node:
    name: str
    op: str
    inputs: tuple[str, ...] = ()
    attrs: dict = field(default_factory=dict, compare=False)


class _Builder:
    def __init__(self):
        self.nodes: list[Node] = []
        self.param_shapes: OrderedDict[str, tuple[int, ...]] = OrderedDict()
        self.bn_channels: OrderedDict[str, int] = OrderedDict()

    def add(self, name: str, op: str, inputs: Iterable[str] = (), **attrs) -> str:
        self.nodes.append(Node(name, op, tuple(inputs), attrs))
        return name

    def conv(self, name: str, x: str, cin: int, cout: int, k: int, groups: int = 1,
             dilation: int = 1, bias: bool = True, share: str | None = None) -> str:
        spec = ConvSpec(cin, cout, k, groups, dilation)
        pname = share or name
        if share is None:
            self.param_shapes[f"{pname}.weight"] = spec.weight_shape
            if bias:
                self.param_shapes[f"{pname}.bias"] = (cout,)
        return self.add(name, "conv", [x], spec=spec, weight=f"{pname}.weight",
                        bias=f"{pname}.bias" if bias else None)

    def bn(self, name: str, x: str, channels: int) -> str:
        self.param_shapes[f"{name}.gamma"] = (channels,)
        self.param_shapes[f"{name}.beta"] = (channels,)
        self.bn_channels[name] = channels
        return self.add(name, "bn", [x], state=name)


def _channel_arm(b: _Builder, p: str, x: str, c: int, r: int, with_max: bool) -> str:
    """Squeeze-excitation style channel weights (N,C,1,1); bias-free MLP."""
    def mlp(tag: str, pooled: str, share: bool) -> str:
        h = b.conv(f"{p}.fc1{tag}", pooled, c, c // r, 1, bias=False,
                   share=f"{p}.fc1" if share else None)
        h = b.add(f"{p}.relu{tag}", "relu", [h])
        return b.conv(f"{p}.fc2{tag}", h, c // r, c, 1, bias=False,
                      share=f"{p}.fc2" if share else None)

    logits = mlp("", b.add(f"{p}.gap", "gap", [x]), False)
    if with_max:
        logits_max = mlp("_max", b.add(f"{p}.gmp", "gmp", [x]), True)
        logits = b.add(f"{p}.sum", "add", [logits, logits_max])
    return b.add(f"{p}.sigmoid", "sigmoid", [logits])


def _spatial_arm(b: _Builder, p: str, x: str, k: int, dilation: int, bn: bool) -> str:
    """Channel-pool, 2->1 conv, optional BN, sigmoid: weights (N,1,H,W)."""
    pooled = b.add(f"{p}.pool", "channel_pool", [x])
    y = b.conv(f"{p}.conv", pooled, 2, 1, k, dilation=dilation, bias=not bn)
    if bn:
        y = b.bn(f"{p}.bn", y, 1)
    return b.add(f"{p}.sigmoid", "sigmoid", [y])


def _attention(b: _Builder, p: str, x: str, c: int, cfg: NetworkConfig) -> str:
    kind, r = cfg.attention, cfg.reduction
    if kind == "none":
        return x
    if kind == "se":
        w = _channel_arm(b, f"{p}.ca", x, c, r, with_max=False)
        return b.add(f"{p}.out", "mul", [x, w])
    if kind == "cbam":
        w = _channel_arm(b, f"{p}.ca", x, c, r, with_max=True)
        xc = b.add(f"{p}.ca.out", "mul", [x, w])
        ws = _spatial_arm(b, f"{p}.sa", xc, cfg.cbam_kernel, 1, bn=False)
        return b.add(f"{p}.out", "mul", [xc, ws])

    # joint attention: channel, spatial and two cross-dimension branches
    w = _channel_arm(b, f"{p}.ca", x, c, r, with_max=False)
    xc = b.add(f"{p}.ca.out", "mul", [x, w])
    ws = _spatial_arm(b, f"{p}.hw", x, 3, 3, bn=True)
    xs = b.add(f"{p}.hw.out", "mul", [x, ws])
    branches = [xc, xs]
    for tag, perm in (("hc", (0, 2, 1, 3)), ("cw", (0, 3, 2, 1))):
        xp = b.add(f"{p}.{tag}.perm", "permute", [x], perm=perm)
        wp = _spatial_arm(b, f"{p}.{tag}", xp, 3, 3, bn=True)
        yp = b.add(f"{p}.{tag}.scaled", "mul", [xp, wp])
        # both permutations are involutions
        branches.append(b.add(f"{p}.{tag}.out", "permute", [yp], perm=perm))
    return b.add(f"{p}.out", "mean", branches)


def _pdab(b: _Builder, p: str, x: str, cfg: NetworkConfig) -> str:
    gs = cfg.growth
    feats = [b.conv(f"{p}.reduce", x, cfg.trunk_channels, gs.c0, 1)]
    for plan in gs.table():
        i = plan.index
        inp = feats[0] if len(feats) == 1 else b.add(f"{p}.dense{i}.cat", "concat", feats)
        h = b.conv(f"{p}.dense{i}.compress", inp, plan.in_channels, plan.out_channels, 1)
        h = b.add(f"{p}.dense{i}.relu1", "relu", [h])
        h = b.conv(f"{p}.dense{i}.gconv", h, plan.out_channels, plan.out_channels, 3,
                   groups=plan.groups)
        feats.append(b.add(f"{p}.dense{i}.relu2", "relu", [h]))
    cat = b.add(f"{p}.cat", "concat", feats)
    att = _attention(b, f"{p}.attn", cat, gs.concat_width, cfg)
    fused = b.conv(f"{p}.fuse", att, gs.concat_width, cfg.trunk_channels, 1)
    return b.add(f"{p}.residual", "add", [x, fused])


def build_graph(cfg: NetworkConfig) -> _Builder:
    cfg.validate()
    n = cfg.trunk_channels
    b = _Builder()
    x = b.add("input", "input")
    head = b.conv("head", x, 3, n, 3)
    h = head
    for d in range(1, cfg.num_blocks + 1):
        h = _pdab(b, f"block{d:02d}", h, cfg)
    h = b.conv("body", h, n, n, 3)
    if cfg.global_skip:
        h = b.add("global_skip", "add", [head, h])
    for k, s in enumerate(UPSAMPLE_STAGES[cfg.scale], start=1):
        h = b.conv(f"up{k}.conv", h, n, n * s * s, 3)
        h = b.add(f"up{k}.shuffle", "pixel_shuffle", [h], factor=s)
    b.conv("tail", h, n, 3, 3)
    return b


class ModelGraph:
    """Instantiated network: node list, named parameters, batch-norm states."""

    def __init__(self, config: NetworkConfig, dtype=np.float32):
        self.config = config
        b = build_graph(config)
        self.nodes: list[Node] = b.nodes
        self.output = b.nodes[-1].name
        self.params: OrderedDict[str, Tensor] = OrderedDict(
            (name, Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, name=name))
            for name, shape in b.param_shapes.items())
        self.bn: OrderedDict[str, BatchNormState] = OrderedDict()
        for name, c in b.bn_channels.items():
            self.params[f"{name}.gamma"].data[...] = 1
            self.bn[name] = BatchNormState(
                gamma=self.params[f"{name}.gamma"], beta=self.params[f"{name}.beta"],
                running_mean=np.zeros(c, dtype=dtype), running_var=np.ones(c, dtype=dtype),
                momentum=config.bn_momentum, eps=config.bn_eps)
        self.training = True

    # bookkeeping ----------------------------------------------------------
    def node(self, name: str) -> Node:
        for nd in self.nodes:
            if nd.name == name:
                return nd
        raise KeyError(name)

    def edges(self) -> list[tuple[str, str]]:
        return [(src, nd.name) for nd in self.nodes for src in nd.inputs]

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def buffers(self) -> OrderedDict[str, np.ndarray]:
        out = OrderedDict()
        for name, st in self.bn.items():
            out[f"{name}.running_mean"] = st.running_mean
            out[f"{name}.running_var"] = st.running_var
        return out

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        bn_name, _, field_name = name.rpartition(".")
        setattr(self.bn[bn_name], field_name, value)

    def train(self, mode: bool = True) -> "ModelGraph":
        self.training = mode
        for st in self.bn.values():
            st.training = mode
        return self

    def eval(self) -> "ModelGraph":
        return self.train(False)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def astype(self, dtype) -> "ModelGraph":
        for t in self.params.values():
            t.data = t.data.astype(dtype)
        for st in self.bn.values():
            st.running_mean = st.running_mean.astype(dtype)
            st.running_var = st.running_var.astype(dtype)
        return self

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, t in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        for name, arr in self.buffers().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def infer_shapes(self, channels: int, height: int, width: int) -> dict[str, tuple[int, int, int]]:
        return infer_shapes(self.nodes, (channels, height, width))


def infer_shapes(nodes: list[Node], input_shape: tuple[int, int, int]) -> dict[str, tuple[int, int, int]]:
    """Per-node (C, H, W) output shapes for a single image, without computing."""
    shapes: dict[str, tuple[int, int, int]] = {}
    for nd in nodes:
        shapes[nd.name] = _infer(nd, [shapes[i] for i in nd.inputs], input_shape)
    return shapes


def _infer(nd: Node, ins: list[tuple[int, int, int]], input_shape) -> tuple[int, int, int]:
    op = nd.op
    if op == "input":
        return input_shape
    if op == "conv":
        spec: ConvSpec = nd.attrs["spec"]
        c, h, w = ins[0]
        if c != spec.in_channels:
            raise ConfigError(f"{nd.name}: expects {spec.in_channels} channels, gets {c}")
        return (spec.out_channels, h, w)
    if op in ("relu", "sigmoid", "bn"):
        return ins[0]
    if op in ("gap", "gmp"):
        return (ins[0][0], 1, 1)
    if op == "channel_pool":
        return (2,) + ins[0][1:]
    if op == "permute":
        # drop the batch axis from the permutation
        perm = [a - 1 for a in nd.attrs["perm"][1:]]
        return tuple(ins[0][a] for a in perm)
    if op == "pixel_shuffle":
        s = nd.attrs["factor"]
        c, h, w = ins[0]
        return (c // (s * s), h * s, w * s)
    if op == "concat":
        return (sum(s[0] for s in ins),) + ins[0][1:]
    if op in ("add", "mean", "mul"):
        return ins[0]
    raise ConfigError(f"unknown op {op!r}")


def build_network(config: NetworkConfig, seed: int | None = None, dtype=np.float32) -> ModelGraph:
    model = ModelGraph(config, dtype=dtype)
    return init_weights(model, config.seed if seed is None else seed)


def init_weights(model: ModelGraph, seed: int) -> ModelGraph:
    """Uniform(+-1/sqrt(fan_in)) conv weights, zero biases, BN gamma=1 beta=0,
    running statistics (0, 1).  Draws happen in parameter order."""
    rng = np.random.default_rng(seed)
    for name, t in model.params.items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(t.shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            t.data[...] = rng.uniform(-bound, bound, size=t.shape)
        elif name.endswith(".gamma"):
            t.data[...] = 1
        else:
            t.data[...] = 0
    for st in model.bn.values():
        st.running_mean[...] = 0
        st.running_var[...] = 1
    return model


# ----------------------------------------------------------------------------
# execution

def _as_batch(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    if t.ndim == 3:
        t = Tensor(t.data[None])
    if t.ndim != 4:
        raise ops.ShapeError(f"expected (C,H,W) or (N,C,H,W) input, got {t.shape}")
    return t


def run_node(model: ModelGraph, nd: Node, args: list[Tensor]) -> Tensor:
    op, a = nd.op, nd.attrs
    if op == "conv":
        bias = model.params[a["bias"]] if a["bias"] else None
        return ops.conv2d(args[0], model.params[a["weight"]], bias, a["spec"])
    if op == "relu":
        return ops.relu(args[0])
    if op == "sigmoid":
        return ops.sigmoid(args[0])
    if op == "bn":
        return ops.batchnorm2d(args[0], model.bn[a["state"]])
    if op == "gap":
        return ops.gap(args[0])
    if op == "gmp":
        return ops.gmp(args[0])
    if op == "channel_pool":
        return ops.channel_pool(args[0])
    if op == "permute":
        return ops.permute(args[0], a["perm"])
    if op == "pixel_shuffle":
        return ops.pixel_shuffle(args[0], a["factor"])
    if op == "concat":
        return ops.concat(args)
    if op == "add":
        return ops.add(*args)
    if op == "mul":
        return ops.mul_broadcast(*args)
    if op == "mean":
        return ops.mean(args)
    raise ConfigError(f"unknown op {op!r}")


def forward(model: ModelGraph, lr_image, capture: Iterable[str] = ()) -> Tensor:
    """Run the network on a (3,h,w) or (N,3,h,w) image; returns (N,3,s*h,s*w).

    Intermediate activations named in ``capture`` are stored on
    ``model.captured``.
    """
    x = _as_batch(lr_image)
    if x.shape[1] != 3:
        raise ops.ShapeError(f"expected 3 input channels, got {x.shape[1]}")
    capture = set(capture)
    model.captured = {}
    values: dict[str, Tensor] = {}
    remaining: dict[str, int] = {}
    for nd in model.nodes:
        for i in nd.inputs:
            remaining[i] = remaining.get(i, 0) + 1
    for nd in model.nodes:
        if nd.op == "input":
            values[nd.name] = x
            continue
        try:
            out = run_node(model, nd, [values[i] for i in nd.inputs])
        except NonFiniteError as exc:
            raise NonFiniteError(f"non-finite activation at node {nd.name!r}: {exc}") from None
        values[nd.name] = out
        if nd.name in capture:
            model.captured[nd.name] = out
        for i in nd.inputs:
            remaining[i] -= 1
            if remaining[i] == 0 and i != model.output:
                del values[i]
    return values[model.output]


def joint_attention_forward(x, model: ModelGraph, block: int = 1) -> Tensor:
    """Run one block's attention module on ``x`` (C,H,W) or (N,C,H,W)."""
    if model.config.attention == "none":
        raise ConfigError("model has no attention module")
    prefix = f"block{block:02d}.attn"
    x = _as_batch(x)
    c = model.config.growth.concat_width
    if x.shape[1] != c:
        raise ops.ShapeError(f"attention expects {c} channels, got {x.shape[1]}")
    values = {f"block{block:02d}.cat": x}
    out = None
    for nd in model.nodes:
        if nd.name.startswith(prefix + "."):
            out = run_node(model, nd, [values[i] for i in nd.inputs])
            values[nd.name] = out
    if out is None or out.shape != x.shape:
        raise ops.ShapeError("attention changed the feature shape")
    return out
