"""Conditional deconvolution generator.

The latent code and the condition label are concatenated, projected by a
dense layer to a ``base_feat x 4 x 4`` map, then doubled in resolution by a
stack of stride-2 transposed convolutions (kernel 4, padding 1). Hidden
layers use ReLU, the output uses tanh so patches live in (-1, 1).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx

SUPPORTED_SIZES = (8, 16, 32, 64)
KERNEL = 4
STRIDE = 2
PADDING = 1
DCGAN_STD = 0.02
INIT_SCHEMES = ("he", "dcgan")


@dataclass(frozen=True)
class GeneratorConfig:
    d: int = 128
    m: int = 1
    output_size: int = 64
    channels: int = 3
    base_feat: int = 64
    seed: int = 0
    init: str = "he"

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"latent dimension d must be >= 1, got {self.d}")
        if self.m != 1:
            raise ValueError(f"condition dimension m must be 1, got {self.m}")
        if self.output_size not in SUPPORTED_SIZES:
            raise ValueError(f"output_size must be one of {SUPPORTED_SIZES}, got {self.output_size}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if self.base_feat < 2 ** (self.n_layers - 1):
            raise ValueError(
                f"base_feat={self.base_feat} too small for {self.n_layers} upsampling layers "
                f"(need >= {2 ** (self.n_layers - 1)})")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"init must be one of {INIT_SCHEMES}, got {self.init!r}")

    @property
    def n_layers(self) -> int:
        return int(math.log2(self.output_size // 4))

    @property
    def widths(self) -> list[int]:
        """Channel count entering each transposed conv, plus the output channels."""
        hidden = [self.base_feat // 2 ** i for i in range(self.n_layers)]
        return hidden + [self.channels]

    @property
    def patch_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.output_size, self.output_size)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {
            "project.weight": (self.base_feat * 16, self.d + self.m),
            "project.bias": (self.base_feat * 16,),
        }
        w = self.widths
        for i in range(self.n_layers):
            shapes[f"deconv{i}.weight"] = (w[i], w[i + 1], KERNEL, KERNEL)
            shapes[f"deconv{i}.bias"] = (w[i + 1],)
        return shapes

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GeneratorParams:
    """Named parameter tensors in layer order, tied to the config that shaped them."""

    config: GeneratorConfig
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = self.config.param_shapes()
        if list(self.tensors) != list(expected):
            raise ValueError(f"parameter names {list(self.tensors)} do not match {list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape}, expected {shape}")

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def copy(self) -> "GeneratorParams":
        return GeneratorParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors.values())


def fan_in(name: str, shape) -> int:
    """Inputs feeding one output unit; a stride-2, 4x4 transposed conv sees Cin x 2 x 2 of them."""
    if name == "project.weight":
        return shape[1]
    return shape[0] * (KERNEL // STRIDE) ** 2


def init_std(config: GeneratorConfig, name: str, shape) -> float:
    if config.init == "dcgan":
        return DCGAN_STD
    return float(np.sqrt(2.0 / fan_in(name, shape)))


def init_params(config: GeneratorConfig) -> GeneratorParams:
    """Zero biases, zero-mean normal weights.

    ``init="he"`` scales each weight tensor by sqrt(2 / fan_in); without
    normalization layers the DCGAN constant 0.02 (``init="dcgan"``) shrinks
    activations layer by layer and plain gradient descent stalls.
    """
    rng = np.random.default_rng(config.seed)
    tensors = {}
    for name, shape in config.param_shapes().items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=nx.DTYPE)
        else:
            tensors[name] = rng.normal(0.0, init_std(config, name, shape), size=shape)
    return GeneratorParams(config, tensors)


def zero_params(config: GeneratorConfig) -> GeneratorParams:
    return GeneratorParams(config, {k: np.zeros(s) for k, s in config.param_shapes().items()})


def check_condition(c) -> float:
    c = float(c)
    if c not in (0.0, 1.0):
        raise ValueError(f"condition label must be 0 or 1, got {c}")
    return c


def build_graph(config: GeneratorConfig, weights: dict, z, c) -> nx.Var:
    """Wire the generator over graph nodes. ``weights`` maps names to vars or arrays."""
    z = z if isinstance(z, nx.Var) else nx.Var(z)
    if z.shape != (config.d,):
        raise ValueError(f"latent code has shape {z.shape}, generator expects ({config.d},)")
    h = nx.concat([z, np.array([check_condition(c)])])
    h = nx.dense(h, weights["project.weight"], weights["project.bias"])
    h = nx.reshape(h, (config.base_feat, 4, 4))
    for i in range(config.n_layers):
        h = nx.relu(h)
        h = nx.conv_transpose2d(h, weights[f"deconv{i}.weight"], weights[f"deconv{i}.bias"],
                                stride=STRIDE, padding=PADDING)
    return nx.tanh(h)


def forward(params: GeneratorParams, z, c) -> np.ndarray:
    """Generate one patch ``channels x size x size`` from code ``z`` and label ``c``."""
    return build_graph(params.config, params.tensors, np.asarray(z, dtype=nx.DTYPE), c).value


def forward_batch(params: GeneratorParams, latents, conditions) -> list[np.ndarray]:
    latents, conditions = list(latents), list(conditions)
    if len(latents) != len(conditions):
        raise ValueError(f"{len(latents)} latents but {len(conditions)} conditions")
    return [forward(params, z, c) for z, c in zip(latents, conditions)]
