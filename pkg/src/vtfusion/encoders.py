"""Modality encoders: a three-conv backbone ending in spatial soft-argmax.

The default "paper" profile uses 64x64x3 vision and 32x32x3 tactile inputs
and emits 128-d embeddings (64 keypoint channels x 2 coordinates). A reduced
"desk" profile exists for fast CPU runs; both left and right tactile fields
normally share one encoder so their embeddings live in one feature space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module


@dataclass(frozen=True)
class EncoderProfile:
    """Input sizes and conv stack for one build profile."""

    name: str
    vision_hw: int
    tactile_hw: int
    channels: tuple
    vision_kernels: tuple  # ((kernel, stride), ...) per conv layer
    tactile_kernels: tuple

    @property
    def embed_dim(self) -> int:
        return 2 * self.channels[-1]


PROFILES = {
    "paper": EncoderProfile(
        name="paper",
        vision_hw=64,
        tactile_hw=32,
        channels=(32, 64, 64),
        vision_kernels=((8, 2), (4, 1), (3, 1)),
        tactile_kernels=((8, 2), (4, 1), (3, 1)),
    ),
    # fits CI / laptop budgets; geometry shrunk so every conv stays valid
    "desk": EncoderProfile(
        name="desk",
        vision_hw=32,
        tactile_hw=16,
        channels=(16, 32, 32),
        vision_kernels=((8, 2), (4, 1), (3, 1)),
        tactile_kernels=((4, 2), (3, 1), (3, 1)),
    ),
}


def get_profile(name: str) -> EncoderProfile:
    if name not in PROFILES:
        raise ValueError(f"unknown encoder profile {name!r}, expected one of {sorted(PROFILES)}")
    return PROFILES[name]


class ConvEncoder(Module):
    """Conv1-3 + spatial soft-argmax; embeds (B, C_in, H, H) into (B, 2*channels[-1])."""

    def __init__(self, input_hw: int, channels, kernels, rng: np.random.Generator,
                 in_channels: int = 3, temperature: float = 1.0):
        self.convs = []
        shapes = []
        c, hw = in_channels, input_hw
        for c_out, (k, s) in zip(channels, kernels):
            self.convs.append(Conv2d(c, c_out, k, s, rng))
            hw = (hw - k) // s + 1
            if hw < 1:
                raise ValueError(
                    f"conv stack collapses {input_hw}x{input_hw} input below 1x1 "
                    f"(kernel {k}, stride {s})"
                )
            shapes.append((c_out, hw, hw))
            c = c_out
        self.input_hw = input_hw
        self.in_channels = in_channels
        self.temperature = temperature
        self._shapes = tuple(shapes)
        self.embed_dim = 2 * channels[-1]

    def intermediate_shapes(self):
        """Per-conv output shapes as (channels, H, W), batch dim omitted."""
        return self._shapes

    def forward(self, x):
        if not isinstance(x, T.Tensor):
            x = T.Tensor(x)
        expected = (self.in_channels, self.input_hw, self.input_hw)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ValueError(f"encoder expects (B, {expected[0]}, {expected[1]}, {expected[2]}), got {x.shape}")
        for conv in self.convs:
            x = T.elu(conv(x))
        return T.spatial_soft_argmax(x, temperature=self.temperature)


class VisionEncoder(ConvEncoder):
    """Wrist-camera backbone; paper profile maps (B,3,64,64) -> (B,128)."""

    def __init__(self, rng: np.random.Generator, profile: EncoderProfile = PROFILES["paper"],
                 temperature: float = 1.0):
        super().__init__(profile.vision_hw, profile.channels, profile.vision_kernels, rng,
                         temperature=temperature)


class TactileEncoder(ConvEncoder):
    """Finger force-field backbone; paper profile maps (B,3,32,32) -> (B,128).

    One instance is shared by the left, right, and flipped-right encodings so
    the bilateral embedding comparison measures force asymmetry rather than
    weight differences.
    """

    def __init__(self, rng: np.random.Generator, profile: EncoderProfile = PROFILES["paper"],
                 temperature: float = 1.0):
        super().__init__(profile.tactile_hw, profile.channels, profile.tactile_kernels, rng,
                         temperature=temperature)


def encode_vision(encoder: VisionEncoder, image) -> T.Tensor:
    return encoder(image)


def encode_tactile(encoder: TactileEncoder, field) -> T.Tensor:
    return encoder(field)
