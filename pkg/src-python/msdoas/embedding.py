# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

"""The appearance feature space.

Features are produced offline by a VGG11-style embedder. This module does not run that network; it
validates the layer arithmetic of the embedder, supplies two interchangeable feature sources (a
seeded synthetic world and a feature file loader) and the single-shot Euclidean baseline.
"""

from enum import IntEnum
from functools import lru_cache
from typing import Iterable, List, NamedTuple, Optional, Sequence

import numpy as np
from loguru import logger
from scipy.spatial.distance import cdist

from msdoas.core import DEFAULT_DIMENSION, Observation, ObservationMeta, as_feature
from msdoas.exceptions import (ConfigValidationError, DataFormatError, DimensionMismatchError,
                               EmptyHistoryError, NonFiniteValueError, ShapePlanError,
                               UnknownIdentityError)

# Five 2x2 poolings with stride 2.
_SPATIAL_DIVISOR = 32


class LayerKind(IntEnum):
    """Enumeration of the VGG11 layer kinds."""
    CONV = 0
    POOL = 1
    FULLY_CONNECTED = 2


class ShapeSpec(NamedTuple):
    """A rows x cols x channels activation shape."""
    rows: int
    cols: int
    channels: int

    def __str__(self):
        return f'{self.rows} x {self.cols} x {self.channels}'


class KernelSpec(NamedTuple):
    """The kernel column of a layer.

    Args:
        kind (LayerKind): The layer kind.
        rows (int): Kernel rows (conv and pool layers).
        cols (int): Kernel columns (conv and pool layers).
        depth (int): Kernel depth, which is the number of input channels.
        stride (Optional[int]): The stride of pool layers.
        outputs (Optional[int]): The output count of fully connected layers.
    """
    kind: LayerKind
    rows: int = 0
    cols: int = 0
    depth: int = 0
    stride: Optional[int] = None
    outputs: Optional[int] = None

    def __str__(self):
        if self.kind is LayerKind.FULLY_CONNECTED:
            return str(self.outputs)
        text = f'{self.rows} x {self.cols} x {self.depth}'
        if self.stride is not None:
            text += f', {self.stride}'
        return text


class LayerPlan(NamedTuple):
    """One row of the VGG11 layer plan."""
    name: str
    kind: LayerKind
    input: ShapeSpec
    output: ShapeSpec
    kernel: KernelSpec


# (name, kind, filters or outputs); the final SoftMax of VGG11 is removed so FC-8 is the feature.
_VGG11_LAYERS = (
    ('Conv-1-1', LayerKind.CONV, 64),
    ('Pool-1', LayerKind.POOL, None),
    ('Conv-2-1', LayerKind.CONV, 128),
    ('Pool-2', LayerKind.POOL, None),
    ('Conv-3-1', LayerKind.CONV, 256),
    ('Conv-3-2', LayerKind.CONV, 256),
    ('Pool-3', LayerKind.POOL, None),
    ('Conv-4-1', LayerKind.CONV, 512),
    ('Conv-4-2', LayerKind.CONV, 512),
    ('Pool-4', LayerKind.POOL, None),
    ('Conv-5-1', LayerKind.CONV, 512),
    ('Conv-5-2', LayerKind.CONV, 512),
    ('Pool-5', LayerKind.POOL, None),
    ('FC-6', LayerKind.FULLY_CONNECTED, 4096),
    ('FC-7', LayerKind.FULLY_CONNECTED, 4096),
    ('FC-8', LayerKind.FULLY_CONNECTED, DEFAULT_DIMENSION),
)


def vgg11_shape_plan(input_shape: ShapeSpec) -> List[LayerPlan]:
    """Computes the layer-by-layer shape progression of the VGG11-based embedder.

    Convolutions are 3x3 with padding 1 and keep the spatial size; poolings are 2x2 with stride 2
    and halve it; fully connected layers flatten to 1 x 1 x outputs.

    Args:
        input_shape (ShapeSpec): The input image shape, 128 x 64 x 3 for person crops.

    Returns:
        List[LayerPlan]: The sixteen layers from Conv-1-1 to FC-8.

    Raises:
        ShapePlanError: If a dimension is not positive or the spatial size is not divisible by 32.
    """
    if min(input_shape) <= 0:
        raise ShapePlanError(f'Input shape must have positive dimensions, got {input_shape}')
    if input_shape.rows % _SPATIAL_DIVISOR or input_shape.cols % _SPATIAL_DIVISOR:
        raise ShapePlanError(f'Input spatial size {input_shape.rows} x {input_shape.cols} is not divisible by '
                             f'{_SPATIAL_DIVISOR}; five 2x2 poolings need it')
    plan = []
    current = ShapeSpec(*input_shape)
    for name, kind, size in _VGG11_LAYERS:
        if kind is LayerKind.CONV:
            kernel = KernelSpec(kind, 3, 3, current.channels)
            output = ShapeSpec(current.rows, current.cols, size)
        elif kind is LayerKind.POOL:
            kernel = KernelSpec(kind, 2, 2, current.channels, stride=2)
            output = ShapeSpec(current.rows // 2, current.cols // 2, current.channels)
        else:
            kernel = KernelSpec(kind, outputs=size)
            output = ShapeSpec(1, 1, size)
        plan.append(LayerPlan(name, kind, current, output, kernel))
        current = output
    return plan


class SyntheticWorldConfig(NamedTuple):
    """Parameters of the synthetic appearance world.

    Every identity owns a cluster center; an observation is its center, moved by a linear drift along a
    per-identity direction, plus isotropic Gaussian noise. With at most ``dimension`` identities the centers
    are exactly ``separation`` apart, otherwise they are ``separation`` apart in expectation.

    Args:
        identities (int): Number of people in the world.
        separation (float): Distance between cluster centers.
        noise (float): Expected distance between two noisy observations of the same center.
        drift (float): Per-frame displacement of an identity's appearance.
        dimension (int): The feature dimension n.
        seed (int): The world seed.
        frames (int): Number of frames covered by ``synth_pool``.
        dropout (float): Probability that an identity is unobserved in a frame of the pool.
        sequence (str): Sequence tag attached to pooled observations.
    """
    identities: int = 8
    separation: float = 5.0
    noise: float = 1.0
    drift: float = 0.0
    dimension: int = DEFAULT_DIMENSION
    seed: int = 0
    frames: int = 200
    dropout: float = 0.0
    sequence: str = 'SYN-01'

    def validate(self):
        checks = (
            (self.identities >= 1, 'identities >= 1'),
            (self.separation > 0, 'separation > 0'),
            (self.noise > 0, 'noise > 0'),
            (self.drift >= 0, 'drift >= 0'),
            (self.dimension >= 1, 'dimension >= 1'),
            (self.frames >= 1, 'frames >= 1'),
            (0 <= self.dropout < 1, '0 <= dropout < 1'),
        )
        for ok, constraint in checks:
            if not ok:
                raise ConfigValidationError(f'world parameter must satisfy {constraint}')
        return self


@lru_cache(maxsize=16)
def _world_geometry(identities, separation, dimension, seed):
    rng = np.random.default_rng([seed, 0])
    if identities <= dimension:
        q, _ = np.linalg.qr(rng.standard_normal((dimension, identities)))
        centers = q.T * (separation / np.sqrt(2.0))
    else:
        centers = rng.standard_normal((identities, dimension)) * (separation / np.sqrt(2.0 * dimension))
    directions = np.random.default_rng([seed, 2]).standard_normal((identities, dimension))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centers.setflags(write=False)
    directions.setflags(write=False)
    return centers, directions


def synth_feature(identity: int, frame: int, config: SyntheticWorldConfig) -> np.ndarray:
    """Deterministically synthesizes the appearance of ``identity`` at ``frame``.

    Raises:
        UnknownIdentityError: If ``identity`` is outside ``[0, config.identities)``.
    """
    if not 0 <= identity < config.identities:
        raise UnknownIdentityError(f'Identity {identity} is outside [0, {config.identities})')
    centers, directions = _world_geometry(config.identities, config.separation, config.dimension, config.seed)
    feature = centers[identity] + (config.drift * frame) * directions[identity]
    if config.noise:
        rng = np.random.default_rng([config.seed, 1, identity, frame])
        feature = feature + rng.standard_normal(config.dimension) * (config.noise / np.sqrt(2.0 * config.dimension))
    return feature


def is_observed(identity: int, frame: int, config: SyntheticWorldConfig) -> bool:
    """Whether the pool contains ``identity`` at ``frame`` under the configured dropout."""
    if not config.dropout:
        return True
    return np.random.default_rng([config.seed, 3, identity, frame]).random() >= config.dropout


def synth_pool(config: SyntheticWorldConfig) -> List[Observation]:
    """Builds the observation pool of every identity over ``config.frames`` frames, ordered by frame then identity."""
    pool = [Observation(ObservationMeta(identity, frame, config.sequence), synth_feature(identity, frame, config))
            for frame in range(config.frames)
            for identity in range(config.identities)
            if is_observed(identity, frame, config)]
    logger.debug('Synthesized {} observations of {} identities over {} frames',
                 len(pool), config.identities, config.frames)
    return pool


def _parse_header(line, path, key):
    name, _, value = line.strip().partition('=')
    if name != key or not value.strip().isdigit():
        raise DataFormatError(f'Expected header "{key}=<int>", got {line.strip()!r}', path, 1)
    return int(value)


def load_features(path) -> List[Observation]:
    """Loads a feature file.

    The file holds a ``n=<dim>`` header followed by ``sequence,frame,id,v0,...,v{n-1}`` lines.

    Raises:
        DataFormatError: On a malformed line or a non-finite value, naming the line.
        DimensionMismatchError: When a line's value count differs from the header.
    """
    records = []
    with open(path, 'r', encoding='utf-8') as fp:
        dimension = _parse_header(fp.readline(), path, 'n')
        for line_number, line in enumerate(fp, start=2):
            if not line.strip():
                continue
            fields = line.rstrip('\n').split(',')
            if len(fields) < 3:
                raise DataFormatError('Expected "sequence,frame,id,values..."', path, line_number)
            if len(fields) - 3 != dimension:
                raise DimensionMismatchError(f'{path}:{line_number}: expected {dimension} values, '
                                             f'got {len(fields) - 3}')
            try:
                meta = ObservationMeta(int(fields[2]), int(fields[1]), fields[0])
                feature = as_feature([float(v) for v in fields[3:]], dimension)
            except NonFiniteValueError:
                raise DataFormatError('Non-finite feature value', path, line_number)
            except ValueError as e:
                raise DataFormatError(f'Unparseable field: {e}', path, line_number)
            if meta.identity < 0 or meta.frame < 0:
                raise DataFormatError('Identity and frame must be non-negative', path, line_number)
            records.append(Observation(meta, feature))
    return records


def store_features(records: Sequence[Observation], path, dimension: int = None):
    """Writes ``records`` as a feature file with values at 9 significant digits.

    Args:
        records (Sequence[Observation]): Records sharing one feature dimension.
        path: Destination path.
        dimension (Optional[int]): Header dimension for an empty record list; inferred otherwise.
    """
    if records:
        dimension = records[0].feature.shape[0]
    elif dimension is None:
        dimension = DEFAULT_DIMENSION
    with open(path, 'w', encoding='utf-8') as fp:
        fp.write(f'n={dimension}\n')
        for meta, feature in records:
            if feature.shape != (dimension,):
                raise DimensionMismatchError(f'Expected dimension {dimension}, got {feature.shape}')
            values = ','.join(f'{v:.9g}' for v in feature.tolist())
            fp.write(f'{meta.sequence},{meta.frame},{meta.identity},{values}\n')


def euclidean_distance(a: np.ndarray, b: np.ndarray) -> float:
    """The L2 distance between two features of equal dimension."""
    if a.shape != b.shape:
        raise DimensionMismatchError(f'Cannot compare features of shapes {a.shape} and {b.shape}')
    return float(np.linalg.norm(a - b))


class EuclideanBaseline:
    """Single-shot appearance similarity from the distance to the most recent history feature.

    The score is ``0.5 ** (d / scale)``, so a distance equal to ``scale`` scores exactly 0.5.
    """

    def __init__(self, scale: float = 1.0):
        if scale <= 0:
            raise ConfigValidationError('baseline scale must satisfy scale > 0')
        self.scale = scale

    def score(self, detection: np.ndarray, history: Sequence[np.ndarray]) -> float:
        if not len(history):
            raise EmptyHistoryError('Cannot score against an empty history')
        return 0.5 ** (euclidean_distance(detection, history[0]) / self.scale)

    def score_tracklets(self, tracklets: Iterable) -> np.ndarray:
        return np.array([self.score(t.detection, t.history) for t in tracklets], dtype=np.float64)

    def score_pairs(self, detections, histories: Sequence[Sequence[np.ndarray]]) -> np.ndarray:
        """The (len(histories), len(detections)) score matrix."""
        detections = np.asarray(detections, dtype=np.float64)
        if not len(histories) or not len(detections):
            return np.zeros((len(histories), len(detections)))
        if any(not len(h) for h in histories):
            raise EmptyHistoryError('Cannot score against an empty history')
        latest = np.stack([h[0] for h in histories])
        if latest.shape[1] != detections.reshape(len(detections), -1).shape[1]:
            raise DimensionMismatchError(f'History features of dimension {latest.shape[1]} for detections of '
                                         f'dimension {detections.reshape(len(detections), -1).shape[1]}')
        return 0.5 ** (cdist(latest, detections.reshape(len(detections), -1)) / self.scale)

    @classmethod
    def calibrate(cls, tracklets: Sequence) -> 'EuclideanBaseline':
        """Places the 0.5 boundary midway between the mean positive and mean negative distances."""
        distances = {0: [], 1: []}
        for t in tracklets:
            distances[t.label].append(euclidean_distance(t.detection, t.history[0]))
        if not distances[0] or not distances[1]:
            raise EmptyHistoryError('Calibration needs both positive and negative tracklets')
        scale = (np.mean(distances[0]) + np.mean(distances[1])) / 2.0
        logger.debug('Calibrated Euclidean baseline scale to {:.4f}', scale)
        return cls(float(scale) if scale > 0 else 1.0)
