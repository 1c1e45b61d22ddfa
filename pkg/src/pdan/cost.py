"""Analytic parameter and FLOP accounting.

FLOP convention: one multiply-accumulate counts as one FLOP.  Bias additions
are counted once per output position, and global/channel pooling counts one
touch per reduced element (channel pooling computes two statistics, so two
touches).  Activations, normalisation and elementwise products are free.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .arch import ModelGraph, NetworkConfig, build_graph, infer_shapes
from .ops import ConvSpec

POOL_TOUCHES = {"gap": 1, "gmp": 1, "channel_pool": 2}


@dataclass(frozen=True)
class LayerCost:
    node: str
    weights: int = 0
    biases: int = 0
    macs: int = 0
    bias_adds: int = 0
    aux: int = 0
    resolution: tuple[int, int] = (0, 0)

    @property
    def params(self) -> int:
        return self.weights + self.biases

    @property
    def flops(self) -> int:
        return self.macs + self.bias_adds + self.aux


@dataclass
class CostReport:
    layers: list[LayerCost] = field(default_factory=list)
    hr_size: int = 0
    lr_size: int = 0

    @property
    def params(self) -> int:
        return sum(c.params for c in self.layers)

    @property
    def weights(self) -> int:
        return sum(c.weights for c in self.layers)

    @property
    def macs(self) -> int:
        return sum(c.macs for c in self.layers)

    @property
    def aux(self) -> int:
        return sum(c.aux for c in self.layers)

    @property
    def flops(self) -> int:
        return sum(c.flops for c in self.layers)

    @property
    def gflops(self) -> float:
        return self.flops / 1e9

    @property
    def params_k(self) -> int:
        return round(self.params / 1000)

    def summary(self) -> str:
        return f"params: {self.params_k}K ({self.params}), flops: ~{self.gflops:.2f} G"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "params_w", "params_b", "macs", "resolution"])
        for c in self.layers:
            w.writerow([c.node, c.weights, c.biases, c.macs, f"{c.resolution[0]}x{c.resolution[1]}"])
        return buf.getvalue()

    def to_table(self) -> str:
        head = f"{'node':<34}{'weights':>10}{'biases':>8}{'MACs':>16}  res"
        lines = [head, "-" * len(head)]
        for c in self.layers:
            lines.append(f"{c.node:<34}{c.weights:>10}{c.biases:>8}{c.macs:>16}  "
                         f"{c.resolution[0]}x{c.resolution[1]}")
        lines.append("-" * len(head))
        lines.append(f"HR {self.hr_size}x{self.hr_size} (LR {self.lr_size}x{self.lr_size}); "
                     f"MACs {self.macs / 1e9:.3f} G, pooling {self.aux / 1e9:.3f} G")
        return "\n".join(lines)


def conv_cost(spec: ConvSpec, out_h: int, out_w: int, name: str = "conv",
              bias: bool = True) -> LayerCost:
    """Grouped conv: ``C_out * (C_in / G) * K * K`` weights, one MAC per weight per output pixel."""
    weights = spec.out_channels * (spec.in_channels // spec.groups) * spec.kernel_size ** 2
    biases = spec.out_channels if bias else 0
    positions = out_h * out_w
    return LayerCost(name, weights, biases, weights * positions, biases * positions, 0,
                     (out_h, out_w))


def network_cost(config: NetworkConfig, hr_size: int = 512) -> CostReport:
    if hr_size % config.scale:
        raise ValueError(f"hr_size {hr_size} not divisible by scale {config.scale}")
    lr = hr_size // config.scale
    b = build_graph(config)
    shapes = infer_shapes(b.nodes, (3, lr, lr))
    owned: set[str] = set()
    report = CostReport(hr_size=hr_size, lr_size=lr)
    for nd in b.nodes:
        c, h, w = shapes[nd.name]
        if nd.op == "conv":
            spec, has_bias = nd.attrs["spec"], nd.attrs["bias"] is not None
            full = conv_cost(spec, h, w, nd.name, has_bias)
            # shared weights are counted once, compute every time
            first = nd.attrs["weight"] not in owned
            owned.add(nd.attrs["weight"])
            report.layers.append(LayerCost(
                nd.name, full.weights if first else 0, full.biases if first else 0,
                full.macs, full.bias_adds, 0, (h, w)))
        elif nd.op in POOL_TOUCHES:
            ic, ih, iw = shapes[nd.inputs[0]]
            touches = POOL_TOUCHES[nd.op] * ic * ih * iw
            report.layers.append(LayerCost(nd.name, aux=touches, resolution=(ih, iw)))
        elif nd.op == "bn":
            report.layers.append(LayerCost(nd.name, weights=2 * c, resolution=(h, w)))
    return report


@dataclass
class CountVerdict:
    ok: bool
    analytic: int
    enumerated: int
    mismatches: list[tuple[str, int, int]] = field(default_factory=list)

    def __str__(self) -> str:
        if self.ok:
            return f"parameter counts agree: {self.enumerated}"
        first = self.mismatches[0] if self.mismatches else None
        return (f"parameter count mismatch: analytic {self.analytic} vs enumerated "
                f"{self.enumerated}; first divergent node {first}")


def _owner(param_name: str) -> str:
    return param_name.rsplit(".", 1)[0]


def verify_counts(model: ModelGraph, report: CostReport) -> CountVerdict:
    """Compare the instantiated parameter store with the analytic report node by node."""
    enumerated: dict[str, int] = {}
    for name, t in model.params.items():
        owner = _owner(name)
        enumerated[owner] = enumerated.get(owner, 0) + t.data.size
    analytic = {c.node: c.params for c in report.layers if c.params}
    mismatches = []
    for node in list(analytic) + [n for n in enumerated if n not in analytic]:
        a, e = analytic.get(node, 0), enumerated.get(node, 0)
        if a != e:
            mismatches.append((node, a, e))
    total_e = sum(enumerated.values())
    return CountVerdict(not mismatches and total_e == report.params, report.params, total_e,
                        mismatches)
