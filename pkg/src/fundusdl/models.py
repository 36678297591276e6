"""Miniature DenseNet / ResNet builders and flat binary serialization.

Both families share the classification head: global average pooling,
dropout, a 5-way dense layer, softmax.  Model files start with the magic
"FDL1", a JSON header (architecture, block spec, shapes), then every
parameter array and batchnorm running moment as little-endian float64 in
registry order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .layers import (
    AvgPool2x2,
    BatchNorm2D,
    Conv2D,
    Dense,
    Dropout,
    GlobalAvgPool,
    Layer,
    Param,
    ReLU,
    Softmax,
)
from .tensor_ops import add, concat_channels

MAGIC = b"FDL1"
ARCHITECTURES = ("densenet-mini", "resnet-mini")
SCALES = ("tiny", "small")
MIN_SIDE = 8


@dataclass(frozen=True)
class DenseNetSpec:
    stem_channels: int
    num_blocks: int
    layers_per_block: int
    growth: int


@dataclass(frozen=True)
class ResNetSpec:
    stem_channels: int
    stage_widths: tuple[int, ...]
    blocks_per_stage: int


PRESETS = {
    "densenet-mini": {
        "tiny": DenseNetSpec(stem_channels=8, num_blocks=2, layers_per_block=2, growth=4),
        "small": DenseNetSpec(stem_channels=16, num_blocks=3, layers_per_block=4, growth=8),
    },
    "resnet-mini": {
        "tiny": ResNetSpec(stem_channels=8, stage_widths=(8, 16), blocks_per_stage=2),
        "small": ResNetSpec(stem_channels=16, stage_widths=(16, 32, 64), blocks_per_stage=2),
    },
}


class _Composite(Layer):
    """A layer made of sublayers; forward order is defined by the subclass."""

    def __init__(self, name: str):
        super().__init__(name)
        self.sub: list[Layer] = []

    def params(self):
        return [p for layer in self.sub for p in layer.params()]

    def buffers(self):
        return [b for layer in self.sub for b in layer.buffers()]

    def leaves(self):
        return [leaf for layer in self.sub for leaf in layer.leaves()]

    def init_params(self, rng):
        for layer in self.sub:
            layer.init_params(rng)


class DenseUnit(_Composite):
    """One inner dense layer: concat(x, conv3x3(relu(bn(x)))) with k new channels."""

    def __init__(self, name: str, c_in: int, growth: int):
        super().__init__(name)
        self.c_in = c_in
        self.bn = BatchNorm2D(f"{name}.bn", c_in)
        self.act = ReLU(f"{name}.relu")
        self.conv = Conv2D(f"{name}.conv", c_in, growth, kernel=3, stride=1, padding=1)
        self.sub = [self.bn, self.act, self.conv]

    def forward(self, x, training=False, rng=None):
        f = self.conv.forward(
            self.act.forward(self.bn.forward(x, training), training), training
        )
        return concat_channels(x, f)

    def backward(self, grad):
        gx = grad[:, : self.c_in]
        gf = grad[:, self.c_in :]
        return gx + self.bn.backward(self.act.backward(self.conv.backward(gf)))


class DenseBlock(_Composite):
    def __init__(self, name: str, c_in: int, num_layers: int, growth: int):
        super().__init__(name)
        c = c_in
        for i in range(num_layers):
            unit = DenseUnit(f"{name}.unit{i + 1}", c, growth)
            self.sub.append(unit)
            c += growth
            assert c == c_in + (i + 1) * growth  # channel recurrence c_{i+1} = c_i + k
        self.c_out = c

    def forward(self, x, training=False, rng=None):
        for unit in self.sub:
            x = unit.forward(x, training, rng)
        return x

    def backward(self, grad):
        for unit in reversed(self.sub):
            grad = unit.backward(grad)
        return grad


class Transition(_Composite):
    """Between dense blocks: bn -> relu -> 1x1 conv halving channels -> 2x2 avg pool."""

    def __init__(self, name: str, c_in: int):
        super().__init__(name)
        self.c_out = c_in // 2
        if self.c_out < 1:
            raise ValueError(f"cannot halve {c_in} channels")
        self.bn = BatchNorm2D(f"{name}.bn", c_in)
        self.act = ReLU(f"{name}.relu")
        self.conv = Conv2D(f"{name}.conv", c_in, self.c_out, kernel=1, stride=1, padding=0)
        self.pool = AvgPool2x2(f"{name}.pool")
        self.sub = [self.bn, self.act, self.conv, self.pool]

    def forward(self, x, training=False, rng=None):
        for layer in self.sub:
            x = layer.forward(x, training, rng)
        return x

    def backward(self, grad):
        for layer in reversed(self.sub):
            grad = layer.backward(grad)
        return grad


class ResidualBlock(_Composite):
    """Basic two-conv residual block: relu(main(x) + shortcut(x)).

    With project=True the shortcut is a strided 1x1 conv + batchnorm
    (the convolution block); otherwise it is the identity and requires
    stride 1 and matching channels.
    """

    def __init__(self, name: str, c_in: int, c_out: int, stride: int, project: bool):
        super().__init__(name)
        if not project and (stride != 1 or c_in != c_out):
            raise ValueError("identity shortcut needs stride 1 and equal channels")
        self.project = project
        self.conv1 = Conv2D(f"{name}.conv1", c_in, c_out, kernel=3, stride=stride, padding=1)
        self.bn1 = BatchNorm2D(f"{name}.bn1", c_out)
        self.act1 = ReLU(f"{name}.relu1")
        self.conv2 = Conv2D(f"{name}.conv2", c_out, c_out, kernel=3, stride=1, padding=1)
        self.bn2 = BatchNorm2D(f"{name}.bn2", c_out)
        self.sub = [self.conv1, self.bn1, self.act1, self.conv2, self.bn2]
        if project:
            self.proj = Conv2D(f"{name}.proj", c_in, c_out, kernel=1, stride=stride, padding=0)
            self.proj_bn = BatchNorm2D(f"{name}.proj_bn", c_out)
            self.sub += [self.proj, self.proj_bn]
        self.act_out = ReLU(f"{name}.relu_out")
        self.sub.append(self.act_out)

    def forward(self, x, training=False, rng=None):
        main = self.bn2.forward(
            self.conv2.forward(
                self.act1.forward(
                    self.bn1.forward(self.conv1.forward(x, training), training), training
                ),
                training,
            ),
            training,
        )
        if self.project:
            shortcut = self.proj_bn.forward(self.proj.forward(x, training), training)
        else:
            shortcut = x
        if main.shape != shortcut.shape:
            raise ValueError(
                f"branch shapes differ before add: {main.shape} vs {shortcut.shape}"
            )
        return self.act_out.forward(add(main, shortcut), training)

    def backward(self, grad):
        g = self.act_out.backward(grad)
        gm = self.conv1.backward(
            self.bn1.backward(self.act1.backward(self.conv2.backward(self.bn2.backward(g))))
        )
        if self.project:
            gs = self.proj.backward(self.proj_bn.backward(g))
        else:
            gs = g
        return gm + gs


class ModelGraph:
    """An ordered stack of layers ending in softmax class probabilities."""

    def __init__(
        self,
        arch: str,
        spec,
        input_shape: tuple[int, int, int],
        classes: int,
        dropout_rate: float,
        layers_: list[Layer],
        scale: str | None = None,
    ):
        self.arch = arch
        self.spec = spec
        self.scale = scale
        self.input_shape = tuple(input_shape)
        self.classes = classes
        self.dropout_rate = dropout_rate
        self.layers = layers_

    def forward(self, x, training: bool = False, rng=None) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training, rng)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def params(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.params()]

    def buffers(self) -> list[Param]:
        return [b for layer in self.layers for b in layer.buffers()]

    def leaves(self) -> list[Layer]:
        return [leaf for layer in self.layers for leaf in layer.leaves()]

    def init_params(self, rng: np.random.Generator) -> None:
        """Seed-deterministic init: He-uniform weights, zero biases, bn at identity."""
        for layer in self.layers:
            layer.init_params(rng)

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params())

    def summary(self) -> str:
        """One row per layer: name, output shape, trainable parameter count."""
        width = max(len(leaf.name) for leaf in self.leaves()) + 2
        lines = [f"{'layer':<{width}}{'output':<18}params"]
        lines.append("-" * (width + 24))
        total = 0
        for leaf in self.leaves():
            shape = "x".join(str(d) for d in leaf.out_shape) if leaf.out_shape else "?"
            count = leaf.param_count()
            total += count
            lines.append(f"{leaf.name:<{width}}{shape:<18}{count}")
        lines.append("-" * (width + 24))
        lines.append(f"total params: {total}")
        return "\n".join(lines)


def _spatial(h: int, w: int) -> tuple[int, int]:
    # 2x2 stride-2 pooling with edge replication on odd extents
    return (h + 1) // 2, (w + 1) // 2


def _validate_input(input_shape: tuple[int, int, int]) -> tuple[int, int, int]:
    c, h, w = input_shape
    if c != 3:
        raise ValueError(f"expected 3 input channels, got {c}")
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ValueError(f"input plane {h}x{w} is below the {MIN_SIDE}px minimum")
    return c, h, w


def _head(layers_: list[Layer], c: int, classes: int, dropout_rate: float) -> None:
    gap = GlobalAvgPool("head.gap")
    gap.out_shape = (c,)
    drop = Dropout("head.dropout", dropout_rate)
    drop.out_shape = (c,)
    fc = Dense("head.fc", c, classes)
    fc.out_shape = (classes,)
    sm = Softmax("head.softmax")
    sm.out_shape = (classes,)
    layers_ += [gap, drop, fc, sm]


def build_densenet_mini(
    spec: DenseNetSpec,
    input_shape: tuple[int, int, int] = (3, 224, 224),
    classes: int = 5,
    dropout_rate: float = 0.5,
    scale: str | None = None,
) -> ModelGraph:
    _, h, w = _validate_input(input_shape)
    layers_: list[Layer] = []
    stem = Conv2D("stem.conv", 3, spec.stem_channels, kernel=3, stride=1, padding=1)
    stem.out_shape = (spec.stem_channels, h, w)
    layers_.append(stem)
    c = spec.stem_channels
    for b in range(spec.num_blocks):
        block = DenseBlock(f"block{b + 1}", c, spec.layers_per_block, spec.growth)
        c_expected = c + spec.layers_per_block * spec.growth
        assert block.c_out == c_expected
        c = block.c_out
        for i, unit in enumerate(block.sub):
            for leaf, ch in zip(unit.sub, (unit.c_in, unit.c_in, spec.growth)):
                leaf.out_shape = (ch, h, w)
            unit.out_shape = (unit.c_in + spec.growth, h, w)
        block.out_shape = (c, h, w)
        layers_.append(block)
        if b < spec.num_blocks - 1:
            tr = Transition(f"transition{b + 1}", c)
            tr.bn.out_shape = tr.act.out_shape = (c, h, w)
            c = tr.c_out
            tr.conv.out_shape = (c, h, w)
            h, w = _spatial(h, w)
            tr.pool.out_shape = tr.out_shape = (c, h, w)
            layers_.append(tr)
    bn = BatchNorm2D("final.bn", c)
    act = ReLU("final.relu")
    bn.out_shape = act.out_shape = (c, h, w)
    layers_ += [bn, act]
    _head(layers_, c, classes, dropout_rate)
    return ModelGraph("densenet-mini", spec, input_shape, classes, dropout_rate, layers_, scale)


def build_resnet_mini(
    spec: ResNetSpec,
    input_shape: tuple[int, int, int] = (3, 224, 224),
    classes: int = 5,
    dropout_rate: float = 0.5,
    scale: str | None = None,
) -> ModelGraph:
    from .tensor_ops import out_size

    _, h, w = _validate_input(input_shape)
    layers_: list[Layer] = []
    stem_conv = Conv2D("stem.conv", 3, spec.stem_channels, kernel=3, stride=1, padding=1)
    stem_bn = BatchNorm2D("stem.bn", spec.stem_channels)
    stem_act = ReLU("stem.relu")
    for leaf in (stem_conv, stem_bn, stem_act):
        leaf.out_shape = (spec.stem_channels, h, w)
    layers_ += [stem_conv, stem_bn, stem_act]
    c = spec.stem_channels
    for si, width in enumerate(spec.stage_widths):
        for bi in range(spec.blocks_per_stage):
            first = bi == 0
            stride = 2 if (first and si > 0) else 1
            if stride == 2:
                h = out_size(h, 3, 1, 2)
                w = out_size(w, 3, 1, 2)
            block = ResidualBlock(
                f"stage{si + 1}.block{bi + 1}", c, width, stride, project=first
            )
            for leaf in block.leaves():
                leaf.out_shape = (width, h, w)
            block.out_shape = (width, h, w)
            layers_.append(block)
            c = width
    _head(layers_, c, classes, dropout_rate)
    return ModelGraph("resnet-mini", spec, input_shape, classes, dropout_rate, layers_, scale)


def build_model(
    arch: str,
    scale: str | None = None,
    spec=None,
    input_shape: tuple[int, int, int] = (3, 224, 224),
    classes: int = 5,
    dropout_rate: float = 0.5,
) -> ModelGraph:
    """Build by architecture name, either from a scale preset or an explicit spec."""
    if arch not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {arch!r}; choose from {', '.join(ARCHITECTURES)}")
    if spec is None:
        if scale not in SCALES:
            raise ValueError(f"unknown scale {scale!r}; choose from {', '.join(SCALES)}")
        spec = PRESETS[arch][scale]
    builder = build_densenet_mini if arch == "densenet-mini" else build_resnet_mini
    return builder(spec, input_shape, classes, dropout_rate, scale=scale)


def save_model(model: ModelGraph, path) -> None:
    header = {
        "arch": model.arch,
        "scale": model.scale,
        "spec": asdict(model.spec),
        "input_shape": list(model.input_shape),
        "classes": model.classes,
        "dropout_rate": model.dropout_rate,
        "params": [{"name": p.name, "shape": list(p.data.shape)} for p in model.params()],
        "buffers": [{"name": b.name, "shape": list(b.data.shape)} for b in model.buffers()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for p in model.params() + model.buffers():
            f.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_model(path) -> ModelGraph:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"not a model file: bad magic {magic!r}")
        (blob_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(blob_len).decode("utf-8"))
        arch = header["arch"]
        spec_cls = DenseNetSpec if arch == "densenet-mini" else ResNetSpec
        spec_kwargs = dict(header["spec"])
        if "stage_widths" in spec_kwargs:
            spec_kwargs["stage_widths"] = tuple(spec_kwargs["stage_widths"])
        model = build_model(
            arch,
            scale=header.get("scale"),
            spec=spec_cls(**spec_kwargs),
            input_shape=tuple(header["input_shape"]),
            classes=header["classes"],
            dropout_rate=header["dropout_rate"],
        )
        stored = header["params"] + header["buffers"]
        arrays = model.params() + model.buffers()
        if len(stored) != len(arrays):
            raise ValueError("model file lists a different number of arrays")
        for meta, param in zip(stored, arrays):
            if meta["name"] != param.name or tuple(meta["shape"]) != param.data.shape:
                raise ValueError(
                    f"array mismatch: file has {meta['name']} {meta['shape']}, "
                    f"model expects {param.name} {list(param.data.shape)}"
                )
            count = int(np.prod(meta["shape"])) if meta["shape"] else 1
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError(f"truncated model file while reading {param.name}")
            param.data = np.frombuffer(raw, dtype="<f8").reshape(param.data.shape).copy()
        extra = f.read(1)
        if extra:
            raise ValueError("trailing bytes after the last parameter array")
    return model
