"""Semantics-preserving image augmentation: horizontal flip and clockwise
quarter turn.  Both are pixel permutations, so per-channel histograms and
the source byte structure survive intact; augmented images inherit their
source's oracle label and never trigger additional queries.
"""

from __future__ import annotations

import enum

import numpy as np

from .corpus import Label
from .render import ImageRepr


class EmptyInputError(ValueError):
    """Augmentation over an empty image list."""


class AugmentArm(enum.Enum):
    FLIP = "flip"
    ROTATE = "rotate"
    FLIP_ROTATE = "flip-rotate"


def flip(image: ImageRepr) -> ImageRepr:
    """Horizontal mirror: column x -> side-1-x."""
    return ImageRepr(
        image.side,
        np.ascontiguousarray(image.pixels[:, ::-1, :]),
        f"{image.source_id}#flip",
        image.mode,
    )


def rotate90(image: ImageRepr) -> ImageRepr:
    """Clockwise quarter turn: (x, y) -> (side-1-y, x)."""
    return ImageRepr(
        image.side,
        np.ascontiguousarray(np.rot90(image.pixels, k=-1)),
        f"{image.source_id}#rot90",
        image.mode,
    )


_ARM_TRANSFORMS = {
    AugmentArm.FLIP: (flip,),
    AugmentArm.ROTATE: (rotate90,),
    AugmentArm.FLIP_ROTATE: (flip, rotate90),
}


def augment_threefold(
    images: list[tuple[ImageRepr, Label]],
    modes: set[AugmentArm] | AugmentArm,
) -> list[tuple[ImageRepr, Label]]:
    """Originals plus the transforms the selected arm(s) contribute.

    Flip and Rotate each double the set; FlipRotate (flip and rotation
    variants together) triples it.  Overlapping arms deduplicate, so the
    output never exceeds 3x the input.  Labels are copied from the source.
    """
    if not images:
        raise EmptyInputError("no images to augment")
    if isinstance(modes, AugmentArm):
        modes = {modes}
    transforms: list = []
    for arm in _ARM_TRANSFORMS:  # fixed order keeps output deterministic
        if arm in modes:
            for t in _ARM_TRANSFORMS[arm]:
                if t not in transforms:
                    transforms.append(t)
    out = list(images)
    for transform in transforms:
        out.extend((transform(img), label) for img, label in images)
    return out
