"""Try-on fidelity metric over synthetic scenes.

Four derived representations, two perceptual distances, one score:
strip the clothing region from the person and from the generated image
and compare the remainders (human preservation), warp the garment onto
the region and compare with the generated clothing (garment fidelity).
Feature extractors are pluggable; seeded random convolutional features
stand in for a pretrained perceptual backbone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .grids import BinaryMask, Grid, GridError, bilinear_warp, grid_read, grid_write
from .kernels import avg_pool2, correlate3x3_multi, softplus
from .rng import RandomStream

__all__ = [
    "SceneImage",
    "FeatureExtractor",
    "VtidReport",
    "VtidError",
    "extract_agnostic",
    "extract_clothing",
    "warp_scene",
    "perceptual_l2",
    "vtid_score",
    "pixel_extractor",
    "random_feature_extractor",
    "scene_write",
    "scene_read",
]


class VtidError(ValueError):
    """Invalid metric input."""


class SceneImage:
    """Three equally shaped channel grids (R, G, B), values in [0, 1].

    Out-of-range inputs are clamped on construction, so arbitrary latents
    can be viewed as images.
    """

    __slots__ = ("r", "g", "b")

    def __init__(self, r: Grid, g: Grid, b: Grid):
        if r.shape != g.shape or r.shape != b.shape:
            raise VtidError(
                f"channel shapes differ: {r.shape}, {g.shape}, {b.shape}"
            )
        for name, ch in (("r", r), ("g", g), ("b", b)):
            a = ch.a
            if a.min() < 0.0 or a.max() > 1.0:
                ch = Grid(np.clip(a, 0.0, 1.0), _checked=True)
            object.__setattr__(self, name, ch)

    def __setattr__(self, name, value):
        raise AttributeError("SceneImage is immutable")

    @property
    def shape(self) -> tuple[int, int]:
        return self.r.shape

    @property
    def height(self) -> int:
        return self.r.height

    @property
    def width(self) -> int:
        return self.r.width

    def channels(self) -> tuple[Grid, Grid, Grid]:
        return (self.r, self.g, self.b)

    def stack(self) -> np.ndarray:
        """(3, h, w) view of the channels."""
        return np.stack([self.r.a, self.g.a, self.b.a])

    @classmethod
    def from_stack(cls, a: np.ndarray) -> "SceneImage":
        if a.ndim != 3 or a.shape[0] != 3:
            raise VtidError(f"expected (3, h, w) stack, got {a.shape}")
        return cls(Grid(a[0]), Grid(a[1]), Grid(a[2]))

    @classmethod
    def gray(cls, grid: Grid) -> "SceneImage":
        """Replicate one grid over all channels (clamped to [0, 1])."""
        return cls(grid, grid, grid)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SceneImage)
            and self.r == other.r
            and self.g == other.g
            and self.b == other.b
        )

    def __repr__(self) -> str:
        return f"SceneImage({self.height}x{self.width})"


class FeatureExtractor(Protocol):
    def features(self, image: SceneImage) -> list[Grid]: ...


@dataclass(frozen=True)
class VtidReport:
    """human_dist preserves the person, clothing_dist the garment; the
    score is their sum, so a perfect try-on scores 0."""

    human_dist: float
    clothing_dist: float

    @property
    def vtid(self) -> float:
        return self.human_dist + self.clothing_dist


def _mask_scene(image: SceneImage, weights: np.ndarray) -> SceneImage:
    return SceneImage(
        Grid(image.r.a * weights, _checked=True),
        Grid(image.g.a * weights, _checked=True),
        Grid(image.b.a * weights, _checked=True),
    )


def extract_agnostic(image: SceneImage, clothing_mask: BinaryMask) -> SceneImage:
    """Person with the clothing region blacked out: channels times (1 - M)."""
    if clothing_mask.shape != image.shape:
        raise VtidError(f"mask shape {clothing_mask.shape} != image shape {image.shape}")
    return _mask_scene(image, 1.0 - clothing_mask.a)


def extract_clothing(image: SceneImage, clothing_mask: BinaryMask) -> SceneImage:
    """Clothing region only: channels times M (complement of extract_agnostic)."""
    if clothing_mask.shape != image.shape:
        raise VtidError(f"mask shape {clothing_mask.shape} != image shape {image.shape}")
    return _mask_scene(image, clothing_mask.a)


def warp_scene(image: SceneImage, flow_x: Grid, flow_y: Grid) -> SceneImage:
    """Channelwise bilinear warp by the (flow_x, flow_y) field."""
    return SceneImage(
        bilinear_warp(image.r, flow_x, flow_y),
        bilinear_warp(image.g, flow_x, flow_y),
        bilinear_warp(image.b, flow_x, flow_y),
    )


def perceptual_l2(a: SceneImage, b: SceneImage, fx: FeatureExtractor) -> float:
    """sqrt of the mean over feature maps of the per-element MSE.

    Symmetric, non-negative, and exactly 0 on identical inputs.
    """
    if a.shape != b.shape:
        raise VtidError(f"image shapes differ: {a.shape} vs {b.shape}")
    fa = fx.features(a)
    fb = fx.features(b)
    if len(fa) != len(fb):
        raise VtidError("extractor returned differing feature counts")
    total = 0.0
    for ma, mb in zip(fa, fb):
        if ma.shape != mb.shape:
            raise VtidError("extractor returned differing feature shapes")
        d = ma.a - mb.a
        total += float((d * d).mean())
    return math.sqrt(total / len(fa))


def vtid_score(
    person: SceneImage,
    garment: SceneImage,
    flow_x: Grid,
    flow_y: Grid,
    generated: SceneImage,
    clothing_mask: BinaryMask,
    gen_clothing_mask: BinaryMask,
    fx: FeatureExtractor,
) -> VtidReport:
    """Score a generated try-on against its person and garment inputs.

    human_dist compares the two agnostics (each image minus its own
    clothing region); clothing_dist compares the warped garment with the
    generated clothing region, both masked by the generated image's mask
    for a like-for-like comparison.
    """
    if garment.shape != person.shape or generated.shape != person.shape:
        raise VtidError(
            f"image shapes differ: person {person.shape}, garment {garment.shape}, "
            f"generated {generated.shape}"
        )
    human = perceptual_l2(
        extract_agnostic(person, clothing_mask),
        extract_agnostic(generated, gen_clothing_mask),
        fx,
    )
    warped = warp_scene(garment, flow_x, flow_y)
    clothing = perceptual_l2(
        extract_clothing(warped, gen_clothing_mask),
        extract_clothing(generated, gen_clothing_mask),
        fx,
    )
    return VtidReport(human_dist=human, clothing_dist=clothing)


class _PixelExtractor:
    """Identity features: the three channel grids themselves, one scale."""

    def features(self, image: SceneImage) -> list[Grid]:
        return list(image.channels())


class _RandomFeatureExtractor:
    """Seeded random conv features at n_scales dyadic scales.

    Scale s: 2x average-pool the channel stack s-1 times (odd trailing
    rows/columns are cropped), correlate with a fixed seeded 3-channel
    kernel bank, softplus. Same seed, same features.
    """

    def __init__(self, seed: int, n_scales: int, channels: int):
        if n_scales < 1:
            raise VtidError("n_scales must be >= 1")
        if channels < 1:
            raise VtidError("channels must be >= 1")
        self.seed = seed
        self.n_scales = n_scales
        self.channels = channels
        root = RandomStream(seed).child("vtid-features")
        self._banks = [
            root.child(f"scale-{s}").normals(channels * 3 * 9).reshape(channels, 3, 3, 3)
            / 3.0
            for s in range(1, n_scales + 1)
        ]

    @staticmethod
    def _pool(stack: np.ndarray) -> np.ndarray:
        h = stack.shape[1] - stack.shape[1] % 2
        w = stack.shape[2] - stack.shape[2] % 2
        return avg_pool2(stack[:, :h, :w])

    def features(self, image: SceneImage) -> list[Grid]:
        stack = image.stack()
        out: list[Grid] = []
        for s, bank in enumerate(self._banks):
            if s > 0:
                if stack.shape[1] < 2 or stack.shape[2] < 2:
                    raise VtidError(
                        f"image {image.shape} too small for {self.n_scales} scales"
                    )
                stack = self._pool(stack)
            maps = softplus(correlate3x3_multi(stack, bank))
            out.extend(Grid(m, _checked=True) for m in maps)
        return out


def pixel_extractor() -> FeatureExtractor:
    """Identity extractor; perceptual_l2 degenerates to plain RMS distance."""
    return _PixelExtractor()


def random_feature_extractor(seed: int, n_scales: int, channels: int) -> FeatureExtractor:
    return _RandomFeatureExtractor(seed, n_scales, channels)


def scene_write(path, scene: SceneImage) -> None:
    """Store a scene as one grid file with the channels stacked vertically."""
    grid_write(path, Grid(np.concatenate(scene.stack(), axis=0), _checked=True))


def scene_read(path) -> SceneImage:
    grid = grid_read(path)
    if grid.height % 3:
        raise GridError(f"{path}: stacked scene height {grid.height} not divisible by 3")
    h = grid.height // 3
    a = grid.a
    return SceneImage(
        Grid(a[:h], _checked=True),
        Grid(a[h : 2 * h], _checked=True),
        Grid(a[2 * h :], _checked=True),
    )
