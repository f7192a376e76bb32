# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

"""Record types shared by the feature, tracklet and tracking modules."""

from typing import NamedTuple, Optional

import numpy as np

from msdoas.exceptions import DimensionMismatchError, NonFiniteValueError

DEFAULT_DIMENSION = 1000


class ObservationMeta(NamedTuple):
    """Who was observed, and when.

    Args:
        identity (int): The non-negative person identifier.
        frame (int): The non-negative frame index of the observation.
        sequence (str): The tag of the sequence the observation comes from.
    """
    identity: int
    frame: int
    sequence: str = ''


class Observation(NamedTuple):
    """A pooled appearance feature together with its metadata."""
    meta: ObservationMeta
    feature: np.ndarray

    @property
    def identity(self):
        return self.meta.identity

    @property
    def frame(self):
        return self.meta.frame


class BBox(NamedTuple):
    """An image-space box in MOTChallenge convention (left, top, width, height) in pixels."""
    left: float
    top: float
    width: float
    height: float

    @property
    def right(self):
        return self.left + self.width

    @property
    def bottom(self):
        return self.top + self.height

    @property
    def area(self):
        return self.width * self.height

    def translated(self, dx, dy):
        return BBox(self.left + dx, self.top + dy, self.width, self.height)


def as_feature(values, dimension: Optional[int] = None) -> np.ndarray:
    """Coerces ``values`` into a one dimensional float64 feature vector.

    Args:
        values (Sequence[float] | numpy.ndarray): The raw coordinates.
        dimension (Optional[int]): The expected feature dimension, if known.

    Returns:
        numpy.ndarray: The validated feature vector.

    Raises:
        DimensionMismatchError: If the vector is not one dimensional or has the wrong length.
        NonFiniteValueError: If any coordinate is NaN or infinite.
    """
    feature = np.asarray(values, dtype=np.float64)
    if feature.ndim != 1:
        raise DimensionMismatchError(f'Expected a one dimensional feature, got shape {feature.shape}')
    if dimension is not None and feature.shape[0] != dimension:
        raise DimensionMismatchError(f'Expected a feature of dimension {dimension}, got {feature.shape[0]}')
    if not np.all(np.isfinite(feature)):
        raise NonFiniteValueError('Feature contains a non-finite value')
    return feature
