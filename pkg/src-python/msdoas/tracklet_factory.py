# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

"""Feature tracklet corpora.

A feature tracklet is an array of ``T + 1`` pooled observations with strictly decreasing frames. Component
``x_0`` plays the role of a new detection and ``x_1 .. x_T`` the history of a tracked agent, most recent
first. Five kinds of corpora are produced:

 * ``I``: consecutive frames.
 * ``II``: like ``I`` but positives may skip up to ``F - 1`` frames between ``x_0`` and ``x_1``.
 * ``III``: up to ``S`` transitions anywhere in the tracklet skip up to ``F`` frames.
 * ``IV``: like ``I`` with up to ``N`` history components replaced by intruders.
 * ``V``: like ``III`` with up to ``N`` intruders.
"""

import bisect
import math
from collections import Counter, defaultdict
from enum import IntEnum
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from msdoas.core import DEFAULT_DIMENSION, Observation, ObservationMeta, as_feature
from msdoas.exceptions import (ConfigValidationError, DataFormatError, DimensionMismatchError,
                               EmptyHistoryError, NonFiniteValueError, PoolDiversityError,
                               UnsatisfiableConfigError)

MAX_ATTEMPTS = 1000


class TrackletKind(IntEnum):
    """Enumeration of the five tracklet set formulations."""
    I = 1
    II = 2
    III = 3
    IV = 4
    V = 5

    @property
    def has_intruders(self):
        return self is TrackletKind.IV or self is TrackletKind.V

    @property
    def has_time_steps(self):
        return self is TrackletKind.III or self is TrackletKind.V

    @property
    def skeleton(self):
        """The intruder-free kind whose frame constraints this kind shares."""
        if self is TrackletKind.IV:
            return TrackletKind.I
        if self is TrackletKind.V:
            return TrackletKind.III
        return self


class FeatureTracklet(NamedTuple):
    """A labelled array of ``T + 1`` observations; ``components[0]`` is the detection."""
    components: Tuple[Observation, ...]
    label: int

    @property
    def T(self):
        return len(self.components) - 1

    @property
    def identities(self):
        return [c.meta.identity for c in self.components]

    @property
    def frames(self):
        return [c.meta.frame for c in self.components]

    @property
    def detection(self):
        return self.components[0].feature

    @property
    def history(self):
        return [c.feature for c in self.components[1:]]


class FactoryConfig(NamedTuple):
    """Parameters of a tracklet set.

    Args:
        kind (TrackletKind): The set formulation.
        M (int): The set size.
        T (int): The memory length; tracklets hold ``T + 1`` components.
        F (int): The maximum frame gap of a time step.
        S (int): The maximum number of time steps per tracklet.
        N (int): The maximum number of intruders per tracklet.
        seed (int): The sampling seed.
    """
    kind: TrackletKind = TrackletKind.I
    M: int = 1000
    T: int = 5
    F: int = 5
    S: int = 2
    N: int = 2
    seed: int = 0

    def validate(self):
        kind = TrackletKind(self.kind)
        checks = [(self.M > 0, 'M > 0'), (self.T >= 1, 'T >= 1')]
        if kind in (TrackletKind.II, TrackletKind.III, TrackletKind.V):
            checks.append((self.F >= 2, 'F >= 2'))
        if kind.has_intruders:
            checks.append((1 <= self.N <= self.T, '1 <= N <= T'))
        if kind.has_time_steps:
            checks.append((1 <= self.S <= self.T, '1 <= S <= T'))
        for ok, constraint in checks:
            if not ok:
                raise ConfigValidationError(f'tracklet parameter must satisfy {constraint}')
        return self._replace(kind=kind)


class MaskVector(NamedTuple):
    """Binary vector of length ``T + 1`` marking the components replaced by intruders."""
    bits: Tuple[int, ...]

    @classmethod
    def from_positions(cls, T: int, positions) -> 'MaskVector':
        chosen = set(int(p) for p in positions)
        return cls(tuple(1 if n in chosen else 0 for n in range(T + 1)))

    @property
    def popcount(self):
        return sum(self.bits)

    @property
    def positions(self):
        return [n for n, bit in enumerate(self.bits) if bit]


def mode_identity(history: Sequence[int]) -> int:
    """The most frequent identity of ``history``; ties resolve to the smallest identity.

    Raises:
        EmptyHistoryError: If ``history`` is empty.
    """
    if not history:
        raise EmptyHistoryError('The mode of an empty identity history is undefined')
    counts = Counter(history)
    top = max(counts.values())
    return min(identity for identity, count in counts.items() if count == top)


def label_tracklet(t: FeatureTracklet) -> int:
    """1 if the detection shows the person most of the history shows, 0 otherwise."""
    identities = t.identities
    return int(identities[0] == mode_identity(identities[1:]))


def _intruder_count(identities, positive):
    reference = identities[0] if positive else mode_identity(identities[1:])
    return sum(1 for identity in identities[1:] if identity != reference)


def validate_membership(t: FeatureTracklet, cfg: FactoryConfig) -> bool:
    """Whether ``t`` belongs to the positive or the negative subset of the configured kind.

    Kinds IV and V are checked against the frame constraints of their intruder-free skeleton kinds plus
    the bound on the number of intruders.
    """
    if len(t.components) != cfg.T + 1 or t.label not in (0, 1):
        return False
    identities = t.identities
    frames = t.frames
    gaps = [frames[n] - frames[n + 1] for n in range(cfg.T)]
    if any(gap < 1 for gap in gaps):
        return False
    positive = label_tracklet(t) == 1
    if t.label != int(positive):
        return False

    kind = TrackletKind(cfg.kind)
    # Negatives only constrain the history transitions.
    considered = gaps if positive else gaps[1:]
    skeleton = kind.skeleton
    if skeleton is TrackletKind.I or (skeleton is TrackletKind.II and not positive):
        frames_ok = all(gap == 1 for gap in considered)
    elif skeleton is TrackletKind.II:
        frames_ok = gaps[0] < cfg.F and all(gap == 1 for gap in gaps[1:])
    else:
        frames_ok = all(gap <= cfg.F for gap in considered) and sum(1 for gap in considered if gap > 1) <= cfg.S
    if not frames_ok:
        return False

    allowed_intruders = cfg.N if kind.has_intruders else 0
    return _intruder_count(identities, positive) <= allowed_intruders


def apply_intruders(t: FeatureTracklet, mask: MaskVector, donors: Sequence[Optional[Observation]]) -> FeatureTracklet:
    """Substitutes ``donors`` into ``t`` wherever ``mask`` is set.

    Substituted components keep the frame index of the slot they occupy. The returned tracklet is
    relabelled.

    Args:
        t (FeatureTracklet): The skeleton tracklet.
        mask (MaskVector): Positions to replace; bit 0 must be clear.
        donors (Sequence[Optional[Observation]]): One entry per component, used where the mask is set.

    Raises:
        DimensionMismatchError: If the mask or donor list length differs from the tracklet length.
        ValueError: If bit 0 is set or a masked position has no donor.
    """
    if len(mask.bits) != len(t.components) or len(donors) != len(t.components):
        raise DimensionMismatchError(f'Mask ({len(mask.bits)}) and donors ({len(donors)}) must have '
                                     f'{len(t.components)} entries')
    if mask.bits[0]:
        raise ValueError('Mask bit 0 must be clear; the detection is never replaced')
    components = list(t.components)
    for n in mask.positions:
        donor = donors[n]
        if donor is None:
            raise ValueError(f'Mask position {n} has no donor')
        slot = components[n].meta
        components[n] = Observation(ObservationMeta(donor.meta.identity, slot.frame, donor.meta.sequence),
                                    donor.feature)
    substituted = FeatureTracklet(tuple(components), t.label)
    return substituted._replace(label=label_tracklet(substituted))


class _PoolIndex:
    """Lookup structures over an observation pool."""

    def __init__(self, pool: Sequence[Observation]):
        self.pool = list(pool)
        self.by_track: Dict[Tuple[str, int], Dict[int, Observation]] = defaultdict(dict)
        for observation in self.pool:
            self.by_track[(observation.meta.sequence, observation.meta.identity)][observation.meta.frame] = observation
        self.tracks = sorted(self.by_track)
        self.track_frames = {key: sorted(frames) for key, frames in self.by_track.items()}
        self.by_frame = sorted(self.pool, key=lambda o: o.meta.frame)
        self.frame_keys = [o.meta.frame for o in self.by_frame]
        self.identities = sorted({o.meta.identity for o in self.pool})


class _TrackletSampler:

    def __init__(self, cfg: FactoryConfig, index: _PoolIndex, rng: np.random.Generator):
        self.cfg = cfg
        self.kind = cfg.kind
        self.index = index
        self.rng = rng
        self.attempts = 0

    def sample(self, label: int) -> FeatureTracklet:
        for _ in range(MAX_ATTEMPTS):
            self.attempts += 1
            tracklet = self._attempt(label)
            if tracklet is not None and validate_membership(tracklet, self.cfg):
                return tracklet
        raise UnsatisfiableConfigError(f'Could not sample a {"positive" if label else "negative"} kind '
                                       f'{self.kind.name} tracklet in {MAX_ATTEMPTS} attempts with {self.cfg}')

    def _attempt(self, label):
        gaps = self._gap_plan(label)
        skeleton = self._skeleton(gaps, label)
        if skeleton is None or not self.kind.has_intruders:
            return skeleton
        return self._inject(skeleton)

    def _gap_plan(self, label):
        """Frame gaps between consecutive components; ``gaps[0]`` is ignored for negatives."""
        cfg = self.cfg
        gaps = [1] * cfg.T
        skeleton = self.kind.skeleton
        if skeleton is TrackletKind.II and label:
            gaps[0] = int(self.rng.integers(1, cfg.F))
        elif skeleton is TrackletKind.III:
            candidates = list(range(0 if label else 1, cfg.T))
            steps = int(self.rng.integers(0, min(cfg.S, len(candidates)) + 1))
            for n in self.rng.choice(candidates, size=steps, replace=False) if steps else ():
                gaps[int(n)] = int(self.rng.integers(2, cfg.F + 1))
        return gaps

    def _skeleton(self, gaps, label):
        index = self.index
        track = index.tracks[int(self.rng.integers(len(index.tracks)))]
        frames = index.track_frames[track]
        observations = index.by_track[track]
        newest = frames[int(self.rng.integers(len(frames)))]
        required = [newest]
        for gap in (gaps if label else gaps[1:]):
            required.append(required[-1] - gap)
        if any(frame not in observations for frame in required):
            return None
        components = [observations[frame] for frame in required]
        if not label:
            detection = self._negative_detection(newest, track[1])
            if detection is None:
                return None
            components.insert(0, detection)
        return FeatureTracklet(tuple(components), label)

    def _negative_detection(self, history_frame, identity):
        index = self.index
        start = bisect.bisect_right(index.frame_keys, history_frame)
        if start == len(index.frame_keys):
            return None
        candidate = index.by_frame[int(self.rng.integers(start, len(index.frame_keys)))]
        if candidate.meta.identity == identity:
            return None
        return candidate

    def _inject(self, skeleton):
        cfg = self.cfg
        # Both subsets exclude the skeleton identity: x_0's for positives, the history mode for negatives.
        reference = skeleton.components[1].meta.identity
        count = int(self.rng.integers(0, cfg.N + 1))
        if not count:
            return skeleton
        positions = self.rng.choice(np.arange(1, cfg.T + 1), size=count, replace=False)
        donors: List[Optional[Observation]] = [None] * (cfg.T + 1)
        for n in positions:
            donor = self._donor(reference)
            if donor is None:
                return None
            donors[int(n)] = donor
        tracklet = apply_intruders(skeleton, MaskVector.from_positions(cfg.T, positions), donors)
        if tracklet.label != skeleton.label or mode_identity(tracklet.identities[1:]) != reference:
            return None
        return tracklet

    def _donor(self, excluded_identity):
        pool = self.index.pool
        for _ in range(64):
            candidate = pool[int(self.rng.integers(len(pool)))]
            if candidate.meta.identity != excluded_identity:
                return candidate
        return None


def _check_diversity(cfg: FactoryConfig, index: _PoolIndex):
    if not index.pool:
        raise PoolDiversityError('The observation pool is empty')
    if max(len(frames) for frames in index.track_frames.values()) < cfg.T + 1:
        raise PoolDiversityError(f'No track in the pool has the {cfg.T + 1} observations a tracklet needs')
    needs_others = cfg.M >= 2 or cfg.kind.has_intruders
    if needs_others and len(index.identities) < 2:
        raise PoolDiversityError('Negative tracklets and intruders need at least 2 identities in the pool')


def generate_set(cfg: FactoryConfig, pool: Sequence[Observation]) -> List[FeatureTracklet]:
    """Generates a balanced, shuffled tracklet set of kind ``cfg.kind``.

    The set holds ``ceil(M / 2)`` positive and ``floor(M / 2)`` negative tracklets. Negative detections and
    intruders may come from any pooled sequence; identities are assumed unique across pooled sequences.

    Raises:
        PoolDiversityError: If the pool cannot support the requested kind.
        UnsatisfiableConfigError: If a tracklet cannot be sampled in ``MAX_ATTEMPTS`` attempts.
    """
    cfg = cfg.validate()
    index = _PoolIndex(pool)
    _check_diversity(cfg, index)
    rng = np.random.default_rng(cfg.seed)
    sampler = _TrackletSampler(cfg, index, rng)
    positives = math.ceil(cfg.M / 2)
    labels = [1] * positives + [0] * (cfg.M - positives)
    tracklets = [sampler.sample(label) for label in labels]
    order = rng.permutation(cfg.M)
    logger.info('Generated kind {} set: M={}, positives={}, negatives={}, attempts={}',
                cfg.kind.name, cfg.M, positives, cfg.M - positives, sampler.attempts)
    return [tracklets[i] for i in order]


def split_pool(pool: Sequence[Observation], test_fraction: float = 0.5,
               seed: int = 0) -> Tuple[List[Observation], List[Observation]]:
    """Splits ``pool`` into identity-disjoint train and test pools.

    Raises:
        PoolDiversityError: If fewer than two identities are available.
        ConfigValidationError: If ``test_fraction`` is outside ``(0, 1)``.
    """
    if not 0 < test_fraction < 1:
        raise ConfigValidationError('test fraction must satisfy 0 < test_fraction < 1')
    identities = sorted({o.meta.identity for o in pool})
    if len(identities) < 2:
        raise PoolDiversityError('Splitting a pool needs at least 2 identities')
    shuffled = np.random.default_rng(seed).permutation(identities)
    test_count = min(max(1, round(len(identities) * test_fraction)), len(identities) - 1)
    test_identities = set(int(i) for i in shuffled[:test_count])
    train = [o for o in pool if o.meta.identity not in test_identities]
    test = [o for o in pool if o.meta.identity in test_identities]
    return train, test


def store_tracklets(tracklets: Sequence[FeatureTracklet], path, T: int = None, dimension: int = None):
    """Writes a tracklet file: a ``T=<int>,n=<dim>`` header, then ``y|id:frame:v...|...`` records.

    Values are written with 17 significant digits so the file reloads to identical float64 features.
    """
    if tracklets:
        T = tracklets[0].T
        dimension = tracklets[0].detection.shape[0]
    T = 5 if T is None else T
    dimension = DEFAULT_DIMENSION if dimension is None else dimension
    with open(path, 'w', encoding='utf-8') as fp:
        fp.write(f'T={T},n={dimension}\n')
        for t in tracklets:
            if t.T != T:
                raise DimensionMismatchError(f'Expected tracklets with T={T}, got T={t.T}')
            fields = [str(t.label)]
            for meta, feature in t.components:
                if feature.shape != (dimension,):
                    raise DimensionMismatchError(f'Expected dimension {dimension}, got {feature.shape}')
                values = ':'.join(f'{v:.17g}' for v in feature.tolist())
                fields.append(f'{meta.identity}:{meta.frame}:{values}')
            fp.write('|'.join(fields) + '\n')


def _parse_tracklet_header(line, path):
    try:
        parts = dict(part.split('=') for part in line.strip().split(','))
        return int(parts['T']), int(parts['n'])
    except (KeyError, ValueError):
        raise DataFormatError(f'Expected header "T=<int>,n=<dim>", got {line.strip()!r}', path, 1)


def load_tracklets(path) -> List[FeatureTracklet]:
    """Loads a tracklet file written by :func:`store_tracklets`.

    Raises:
        DataFormatError: On any format violation, naming the line.
    """
    tracklets = []
    with open(path, 'r', encoding='utf-8') as fp:
        T, dimension = _parse_tracklet_header(fp.readline(), path)
        for line_number, line in enumerate(fp, start=2):
            if not line.strip():
                continue
            fields = line.rstrip('\n').split('|')
            if len(fields) != T + 2:
                raise DataFormatError(f'Expected {T + 1} components, got {len(fields) - 1}', path, line_number)
            if fields[0] not in ('0', '1'):
                raise DataFormatError(f'Label must be 0 or 1, got {fields[0]!r}', path, line_number)
            components = []
            for field in fields[1:]:
                parts = field.split(':')
                if len(parts) != dimension + 2:
                    raise DataFormatError(f'Expected id, frame and {dimension} values, got {len(parts)} fields',
                                          path, line_number)
                try:
                    meta = ObservationMeta(int(parts[0]), int(parts[1]))
                    feature = as_feature([float(v) for v in parts[2:]], dimension)
                except (ValueError, NonFiniteValueError) as e:
                    raise DataFormatError(f'Unparseable component: {e}', path, line_number)
                components.append(Observation(meta, feature))
            tracklets.append(FeatureTracklet(tuple(components), int(fields[0])))
    return tracklets
