"""Architecture definitions and end-to-end forward passes.

Two architectures are shipped, both consuming 96x64 log-mel patches with a
single input channel:

  aug_vggish   six 3x3 convolutions (64-128-256-256-512-512), each followed
               by batch norm + ReLU, four 2x2 max pools, global average
               pooling, one 256-unit FC + ReLU, and a dense classifier.
               4,647,346 trainable parameters at 50 classes.

  fcn_vggish   the same six-conv stack, a fifth max pool, two further 3x3
               convolutions at 1024 channels (eight feature convolutions in
               total), a 1x1 convolutional classifier, and global average
               pooling. No dense layers. 18,716,338 parameters at 50 classes.

Global pooling makes both networks tolerant of input height/width variation;
fcn_vggish accepts any patch with at least 32 frames.

The embedding (penultimate representation) is the 256-unit FC output for
aug_vggish and the globally pooled 1024-channel feature map for fcn_vggish.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .errors import ConfigError, StructureError, ValidationError
from .frontend import PREPROC_TAG, LogMelPatch

ARCH_AUG_VGGISH = "aug_vggish"
ARCH_FCN_VGGISH = "fcn_vggish"
DEFAULT_EPSILON = 1e-5


@dataclass(frozen=True)
class LayerDef:
    """One layer descriptor; size fields are used per kind, others are None."""

    name: str
    kind: str  # conv | batchnorm | maxpool | global_avg_pool | dense
    relu: bool = False
    in_ch: int | None = None
    out_ch: int | None = None
    kernel: int | None = None
    channels: int | None = None
    in_units: int | None = None
    out_units: int | None = None


@dataclass(frozen=True)
class ModelSpec:
    """Ordered layer list plus the metadata needed to run and persist it."""

    arch_id: str
    num_classes: int
    layers: tuple[LayerDef, ...]
    embedding_layer: str
    embedding_dim: int


@dataclass(frozen=True)
class Embedding:
    """Penultimate representation of one patch."""

    values: np.ndarray


def _conv(name: str, in_ch: int, out_ch: int, kernel: int = 3, relu: bool = False) -> LayerDef:
    return LayerDef(name=name, kind="conv", in_ch=in_ch, out_ch=out_ch, kernel=kernel, relu=relu)


def _bn(name: str, channels: int) -> LayerDef:
    return LayerDef(name=name, kind="batchnorm", channels=channels, relu=True)


def _conv_stack() -> list[LayerDef]:
    """The shared six-convolution feature stack (through its fourth pool)."""
    return [
        _conv("conv1", 1, 64), _bn("bn1", 64),
        LayerDef("pool1", "maxpool"),
        _conv("conv2", 64, 128), _bn("bn2", 128),
        LayerDef("pool2", "maxpool"),
        _conv("conv3", 128, 256), _bn("bn3", 256),
        _conv("conv4", 256, 256), _bn("bn4", 256),
        LayerDef("pool3", "maxpool"),
        _conv("conv5", 256, 512), _bn("bn5", 512),
        _conv("conv6", 512, 512), _bn("bn6", 512),
        LayerDef("pool4", "maxpool"),
    ]


def build_aug_vggish(num_classes: int) -> ModelSpec:
    """Batch-normed VGGish variant with global pooling and a 256-unit FC."""
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    layers = _conv_stack() + [
        LayerDef("gap", "global_avg_pool"),
        LayerDef("fc1", "dense", in_units=512, out_units=256, relu=True),
        LayerDef("head", "dense", in_units=256, out_units=num_classes),
    ]
    return ModelSpec(
        arch_id=ARCH_AUG_VGGISH,
        num_classes=num_classes,
        layers=tuple(layers),
        embedding_layer="fc1",
        embedding_dim=256,
    )


def build_fcn_vggish(num_classes: int) -> ModelSpec:
    """Fully convolutional variant: eight feature convs, 1x1 classifier, no FC."""
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    layers = _conv_stack() + [
        LayerDef("pool5", "maxpool"),
        _conv("conv7", 512, 1024), _bn("bn7", 1024),
        _conv("conv8", 1024, 1024), _bn("bn8", 1024),
        _conv("clf", 1024, num_classes, kernel=1),
        LayerDef("gap", "global_avg_pool"),
    ]
    return ModelSpec(
        arch_id=ARCH_FCN_VGGISH,
        num_classes=num_classes,
        layers=tuple(layers),
        embedding_layer="bn8",
        embedding_dim=1024,
    )


_BUILDERS = {ARCH_AUG_VGGISH: build_aug_vggish, ARCH_FCN_VGGISH: build_fcn_vggish}


def build_arch(arch_id: str, num_classes: int) -> ModelSpec:
    if arch_id not in _BUILDERS:
        raise ConfigError(f"unknown arch_id {arch_id!r}; expected one of {sorted(_BUILDERS)}")
    return _BUILDERS[arch_id](num_classes)


def count_params(spec: ModelSpec) -> int:
    """Trainable parameter count; batch-norm running statistics excluded."""
    total = 0
    for layer in spec.layers:
        if layer.kind == "conv":
            total += layer.out_ch * layer.in_ch * layer.kernel**2 + layer.out_ch
        elif layer.kind == "batchnorm":
            total += 2 * layer.channels
        elif layer.kind == "dense":
            total += layer.out_units * layer.in_units + layer.out_units
    return total


def param_shapes(layer: LayerDef) -> dict[str, tuple[int, ...]]:
    """Required parameter tensors (key suffix -> shape) for one layer."""
    if layer.kind == "conv":
        return {
            "kernels": (layer.out_ch, layer.in_ch, layer.kernel, layer.kernel),
            "bias": (layer.out_ch,),
        }
    if layer.kind == "batchnorm":
        c = (layer.channels,)
        return {"gamma": c, "beta": c, "mean": c, "var": c}
    if layer.kind == "dense":
        return {"weights": (layer.out_units, layer.in_units), "bias": (layer.out_units,)}
    return {}


def _validate_chain(spec: ModelSpec) -> None:
    """Check that layer shapes chain from [1, H, W] input to [num_classes]."""
    if spec.arch_id not in _BUILDERS:
        raise ValidationError(f"unknown arch_id {spec.arch_id!r}")
    channels: int | None = 1  # spatial channel count, None once flattened
    width: int | None = None  # vector length once flattened
    for layer in spec.layers:
        spatial = channels is not None
        if layer.kind == "conv":
            if not spatial or layer.in_ch != channels:
                raise ValidationError(f"layer {layer.name}: expects {layer.in_ch} channels")
            channels = layer.out_ch
        elif layer.kind == "batchnorm":
            if not spatial or layer.channels != channels:
                raise ValidationError(f"layer {layer.name}: channel mismatch")
        elif layer.kind == "maxpool":
            if not spatial:
                raise ValidationError(f"layer {layer.name}: maxpool after flattening")
        elif layer.kind == "global_avg_pool":
            if not spatial:
                raise ValidationError(f"layer {layer.name}: repeated flattening")
            width, channels = channels, None
        elif layer.kind == "dense":
            if spatial or layer.in_units != width:
                raise ValidationError(f"layer {layer.name}: expects a [{layer.in_units}] vector")
            width = layer.out_units
        else:
            raise ValidationError(f"layer {layer.name}: unknown kind {layer.kind!r}")
    final = width if channels is None else channels
    if final != spec.num_classes:
        raise ValidationError(f"network ends at width {final}, not {spec.num_classes} classes")
    if not any(l.name == spec.embedding_layer for l in spec.layers):
        raise ValidationError(f"embedding layer {spec.embedding_layer!r} not in layer list")


@dataclass
class WeightBundle:
    """A ModelSpec plus its named parameter tensors; immutable once validated.

    `params` maps "<layer>/<tensor>" to arrays, e.g. "conv1/kernels",
    "bn1/gamma", "fc1/weights". `epsilon` is shared by every batch-norm
    layer; `preproc_tag` records the frontend convention the weights expect.
    """

    spec: ModelSpec
    params: dict[str, np.ndarray]
    preproc_tag: str = PREPROC_TAG
    epsilon: float = DEFAULT_EPSILON
    _objs: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Check params against the layer list and build the operator cache."""
        _validate_chain(self.spec)
        objs: dict[str, object] = {}
        expected: set[str] = set()
        for layer in self.spec.layers:
            shapes = param_shapes(layer)
            tensors = {}
            for suffix, shape in shapes.items():
                key = f"{layer.name}/{suffix}"
                expected.add(key)
                if key not in self.params:
                    raise ValidationError(f"missing parameter tensor {key!r}")
                arr = np.asarray(self.params[key])
                if arr.shape != shape:
                    raise ValidationError(
                        f"tensor {key!r} has shape {arr.shape}, expected {shape}"
                    )
                tensors[suffix] = arr
            try:
                if layer.kind == "conv":
                    objs[layer.name] = nn.ConvParams(tensors["kernels"], tensors["bias"])
                elif layer.kind == "batchnorm":
                    objs[layer.name] = nn.BatchNormParams(
                        tensors["gamma"], tensors["beta"], tensors["mean"], tensors["var"],
                        epsilon=self.epsilon,
                    )
                elif layer.kind == "dense":
                    objs[layer.name] = nn.DenseParams(tensors["weights"], tensors["bias"])
            except nn.ShapeError as e:
                raise ValidationError(f"layer {layer.name}: {e}") from e
        extra = set(self.params) - expected
        if extra:
            raise ValidationError(f"unreferenced parameter tensors: {sorted(extra)}")
        self._objs = objs

    @property
    def folded(self) -> bool:
        return not any(l.kind == "batchnorm" for l in self.spec.layers)


def init_bundle(
    spec: ModelSpec,
    init: str = "zeros",
    seed: int | None = None,
    preproc_tag: str = PREPROC_TAG,
    epsilon: float = DEFAULT_EPSILON,
) -> WeightBundle:
    """Fresh bundle for a spec: all-zero weights or seeded He-scaled noise.

    Batch-norm statistics start at identity (gamma 1, beta 0, mean 0, var 1)
    either way.
    """
    if init not in ("zeros", "random"):
        raise ConfigError(f"init must be 'zeros' or 'random', got {init!r}")
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for layer in spec.layers:
        for suffix, shape in param_shapes(layer).items():
            key = f"{layer.name}/{suffix}"
            if layer.kind == "batchnorm":
                fill = 1.0 if suffix in ("gamma", "var") else 0.0
                params[key] = np.full(shape, fill, dtype=np.float32)
            elif suffix in ("kernels", "weights") and init == "random":
                fan_in = int(np.prod(shape[1:]))
                params[key] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape).astype(np.float32)
            else:
                params[key] = np.zeros(shape, dtype=np.float32)
    return WeightBundle(spec=spec, params=params, preproc_tag=preproc_tag, epsilon=epsilon)


def run_layers(bundle: WeightBundle, x: np.ndarray, stop_after: str | None = None) -> np.ndarray:
    """Execute the layer list on a [C, H, W] input, optionally stopping early.

    `stop_after` names a layer; its output (after any ReLU it owns) is
    returned and the remaining layers are skipped.
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValidationError(f"network input must be [C, H, W], got shape {x.shape}")
    for layer in bundle.spec.layers:
        if layer.kind == "conv":
            x = nn.conv2d_same(x, bundle._objs[layer.name])
        elif layer.kind == "batchnorm":
            x = nn.batchnorm_infer(x, bundle._objs[layer.name])
        elif layer.kind == "maxpool":
            x = nn.maxpool_2x2(x)
        elif layer.kind == "global_avg_pool":
            x = nn.global_avg_pool(x)
        elif layer.kind == "dense":
            x = nn.dense(x, bundle._objs[layer.name])
        if layer.relu:
            x = nn.relu(x)
        if layer.name == stop_after:
            return x
    if stop_after is not None:
        raise ValidationError(f"no layer named {stop_after!r}")
    return x


def forward_logits(bundle: WeightBundle, patch: LogMelPatch) -> np.ndarray:
    return run_layers(bundle, patch.values[None, :, :])


def forward_probs(bundle: WeightBundle, patch: LogMelPatch) -> np.ndarray:
    """Class probabilities for one patch (softmax over the final logits)."""
    return nn.softmax(forward_logits(bundle, patch))


def forward_embedding(bundle: WeightBundle, patch: LogMelPatch) -> Embedding:
    """Penultimate representation; spatial outputs are globally averaged."""
    out = run_layers(bundle, patch.values[None, :, :], stop_after=bundle.spec.embedding_layer)
    if out.ndim == 3:
        out = nn.global_avg_pool(out)
    if out.shape != (bundle.spec.embedding_dim,):
        raise ValidationError(
            f"embedding has shape {out.shape}, expected ({bundle.spec.embedding_dim},)"
        )
    return Embedding(values=out)


def fold_spec(spec: ModelSpec) -> ModelSpec:
    """Structural half of batch-norm folding: drop BN layers, keep their ReLU."""
    layers: list[LayerDef] = []
    embedding_layer = spec.embedding_layer
    for layer in spec.layers:
        if layer.kind != "batchnorm":
            layers.append(layer)
            continue
        if not layers or layers[-1].kind != "conv":
            raise StructureError(f"batch norm {layer.name} does not follow a convolution")
        if layers[-1].out_ch != layer.channels:
            raise StructureError(f"batch norm {layer.name} channel count mismatch")
        layers[-1] = replace(layers[-1], relu=layer.relu or layers[-1].relu)
        if embedding_layer == layer.name:
            embedding_layer = layers[-1].name
    return replace(spec, layers=tuple(layers), embedding_layer=embedding_layer)


def fold_batchnorm(bundle: WeightBundle) -> WeightBundle:
    """Absorb every conv+BN pair into a single convolution.

    kernel' = kernel * gamma / sqrt(var + eps) per output channel and
    bias' = (bias - mean) * gamma / sqrt(var + eps) + beta, so the folded
    forward matches the two-step computation up to rounding.
    """
    folded_spec = fold_spec(bundle.spec)
    params: dict[str, np.ndarray] = {}
    prev_conv: str | None = None
    for layer in bundle.spec.layers:
        if layer.kind == "conv":
            prev_conv = layer.name
            params[f"{layer.name}/kernels"] = np.asarray(bundle.params[f"{layer.name}/kernels"])
            params[f"{layer.name}/bias"] = np.asarray(bundle.params[f"{layer.name}/bias"])
        elif layer.kind == "batchnorm":
            n = layer.name
            scale = bundle.params[f"{n}/gamma"].astype(np.float64) / np.sqrt(
                bundle.params[f"{n}/var"].astype(np.float64) + bundle.epsilon
            )
            kernels = params[f"{prev_conv}/kernels"]
            bias = params[f"{prev_conv}/bias"]
            params[f"{prev_conv}/kernels"] = (
                kernels.astype(np.float64) * scale[:, None, None, None]
            ).astype(kernels.dtype)
            params[f"{prev_conv}/bias"] = (
                (bias.astype(np.float64) - bundle.params[f"{n}/mean"].astype(np.float64)) * scale
                + bundle.params[f"{n}/beta"].astype(np.float64)
            ).astype(bias.dtype)
        elif layer.kind == "dense":
            params[f"{layer.name}/weights"] = np.asarray(bundle.params[f"{layer.name}/weights"])
            params[f"{layer.name}/bias"] = np.asarray(bundle.params[f"{layer.name}/bias"])
    return WeightBundle(
        spec=folded_spec, params=params, preproc_tag=bundle.preproc_tag, epsilon=bundle.epsilon
    )
