# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

"""Online tracking by detection.

Every frame, detections are associated to the maintained tracks by a minimum cost assignment over a
blend of appearance cost ``1 - MS-DoAS`` and motion cost ``1 - IoU`` against a constant velocity
prediction. A pair is admissible when either cue passes its gate. Confirmed tracks are matched first;
tentative tracks compete for the leftover detections in a second pass.

Tracks only remember features of frames in which they were matched, so a track that was lost for a few
frames carries exactly the time-step gaps the appearance model is trained on.
"""

from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Deque, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from msdoas.assignment import AssignmentResult, solve_assignment
from msdoas.core import BBox
from msdoas.embedding import SyntheticWorldConfig, load_features, synth_feature
from msdoas.exceptions import ConfigValidationError, DataFormatError, MixedFrameError


class Detection(NamedTuple):
    frame: int
    bbox: BBox
    confidence: float
    feature: np.ndarray


class DetectionRecord(NamedTuple):
    """A parsed ``det.txt`` row.

    Args:
        frame (int): The frame index, from 1.
        identity (int): The id column; -1 in real detection files, the ground truth id in synthetic ones.
        bbox (BBox): The detection box.
        confidence (float): The detector confidence.
        order (int): Position of the row among the valid rows of its frame.
    """
    frame: int
    identity: int
    bbox: BBox
    confidence: float
    order: int


class ResultRow(NamedTuple):
    frame: int
    identity: int
    bbox: BBox
    confidence: float


class TrackStatus(IntEnum):
    TENTATIVE = 0
    ACTIVE = 1
    LOST = 2


class TrackerConfig(NamedTuple):
    """Association and lifecycle parameters.

    Args:
        T (int): History length; must equal the T of the appearance model.
        appearance_weight (float): The weight of appearance cost against motion cost, in [0, 1].
        association_threshold (float): Minimum MS-DoAS that admits a pair on appearance alone.
        iou_gate (float): Minimum IoU that admits a pair on motion alone.
        max_age (int): Missed frames after which a lost track is deleted.
        confirm_hits (int): Consecutive matches that promote a tentative track.
        confidence_floor (float): Detections below this confidence are ignored.
    """
    T: int = 5
    appearance_weight: float = 0.7
    association_threshold: float = 0.5
    iou_gate: float = 0.1
    max_age: int = 30
    confirm_hits: int = 3
    confidence_floor: float = 0.3

    def validate(self):
        checks = (
            (self.T >= 1, 'T >= 1'),
            (0 <= self.appearance_weight <= 1, '0 <= appearance_weight <= 1'),
            (0 <= self.association_threshold <= 1, '0 <= association_threshold <= 1'),
            (0 <= self.iou_gate <= 1, '0 <= iou_gate <= 1'),
            (self.max_age >= 1, 'max_age >= 1'),
            (self.confirm_hits >= 1, 'confirm_hits >= 1'),
        )
        for ok, constraint in checks:
            if not ok:
                raise ConfigValidationError(f'tracker parameter must satisfy {constraint}')
        return self


@dataclass(eq=False)
class Track:
    """A maintained identity hypothesis.

    ``history`` holds (feature, frame) pairs most recent first. ``identity`` is assigned when the track
    is confirmed and stays None while it is tentative.
    """
    key: int
    history: Deque[Tuple[np.ndarray, int]]
    motion: Deque[Tuple[int, BBox]] = field(default_factory=lambda: deque(maxlen=2))
    status: TrackStatus = TrackStatus.TENTATIVE
    identity: Optional[int] = None
    missed: int = 0
    hits: int = 0
    confidence: float = 0.0

    @classmethod
    def start(cls, key: int, detection: Detection, T: int) -> 'Track':
        track = cls(key, deque(maxlen=T))
        track.observe(detection)
        return track

    def observe(self, detection: Detection):
        self.history.appendleft((detection.feature, detection.frame))
        self.motion.append((detection.frame, detection.bbox))
        self.confidence = detection.confidence
        self.missed = 0
        self.hits += 1

    @property
    def features(self) -> List[np.ndarray]:
        return [feature for feature, _ in self.history]

    @property
    def frames(self) -> List[int]:
        return [frame for _, frame in self.history]

    @property
    def last_frame(self) -> int:
        return self.motion[-1][0]

    @property
    def last_bbox(self) -> BBox:
        return self.motion[-1][1]

    def velocity(self) -> Tuple[float, float]:
        """Per-frame displacement of the box corner between the last two observations."""
        if len(self.motion) < 2:
            return 0.0, 0.0
        (f0, b0), (f1, b1) = self.motion
        return (b1.left - b0.left) / (f1 - f0), (b1.top - b0.top) / (f1 - f0)


@dataclass
class TrackerState:
    """The tracks of one sequence and the counters that keep identities unique."""
    tracks: List[Track] = field(default_factory=list)
    frame: int = 0
    next_key: int = 1
    next_identity: int = 1
    born: int = 0
    confirmed: int = 0
    deleted: int = 0


class CostMatrix(NamedTuple):
    costs: np.ndarray
    forbidden: np.ndarray
    appearance: np.ndarray
    overlap: np.ndarray


def predict_bbox(track: Track, frame: int) -> BBox:
    """Extrapolates the last box of ``track`` to ``frame`` at constant velocity."""
    vx, vy = track.velocity()
    gap = frame - track.last_frame
    return track.last_bbox.translated(vx * gap, vy * gap)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes."""
    width = min(a.right, b.right) - max(a.left, b.left)
    height = min(a.bottom, b.bottom) - max(a.top, b.top)
    if width <= 0 or height <= 0:
        return 0.0
    intersection = width * height
    union = a.area + b.area - intersection
    return intersection / union if union > 0 else 0.0


def _check_memory(scorer, cfg: TrackerConfig):
    config = getattr(scorer, 'config', None)
    if config is not None and getattr(config, 'T', cfg.T) != cfg.T:
        raise ConfigValidationError(f'tracker parameter must satisfy T == model T ({config.T}), got T={cfg.T}')


def cost_matrix(tracks: Sequence[Track], detections: Sequence[Detection], scorer, cfg: TrackerConfig,
                frame: Optional[int] = None) -> CostMatrix:
    """Association costs between ``tracks`` (rows) and ``detections`` (columns).

    ``cost = w (1 - s) + (1 - w)(1 - iou)`` where ``s`` is the appearance score of the detection against
    the track history and ``iou`` compares the detection to the predicted track box. A pair is forbidden
    when ``s < association_threshold`` and ``iou < iou_gate``.

    Args:
        tracks (Sequence[Track]): The candidate tracks.
        detections (Sequence[Detection]): Detections of a single frame.
        scorer: An object with ``score_pairs(detections, histories)``, such as an MsdoasModel.
        cfg (TrackerConfig): Weights and gates.
        frame (Optional[int]): The frame to predict to; defaults to the frame of the detections.
    """
    _check_memory(scorer, cfg)
    shape = (len(tracks), len(detections))
    if not tracks or not detections:
        empty = np.zeros(shape)
        return CostMatrix(empty, np.zeros(shape, dtype=bool), empty, empty)
    if frame is None:
        frame = detections[0].frame
    appearance = np.asarray(scorer.score_pairs(np.stack([d.feature for d in detections]),
                                               [t.features for t in tracks]), dtype=np.float64)
    predictions = [predict_bbox(t, frame) for t in tracks]
    overlap = np.array([[iou(p, d.bbox) for d in detections] for p in predictions])
    weight = cfg.appearance_weight
    costs = weight * (1.0 - appearance) + (1.0 - weight) * (1.0 - overlap)
    forbidden = (appearance < cfg.association_threshold) & (overlap < cfg.iou_gate)
    return CostMatrix(costs, forbidden, appearance, overlap)


def _associate(tracks, detections, scorer, cfg, frame) -> AssignmentResult:
    matrix = cost_matrix(tracks, detections, scorer, cfg, frame)
    return solve_assignment(matrix.costs, matrix.forbidden)


def _confirm(state: TrackerState, track: Track, cfg: TrackerConfig):
    if track.status is TrackStatus.TENTATIVE and track.hits >= cfg.confirm_hits:
        track.status = TrackStatus.ACTIVE
        track.identity = state.next_identity
        state.next_identity += 1
        state.confirmed += 1
    elif track.status is TrackStatus.LOST:
        track.status = TrackStatus.ACTIVE


def step(state: TrackerState, detections: Sequence[Detection], scorer, cfg: TrackerConfig,
         frame: Optional[int] = None) -> Tuple[TrackerState, List[ResultRow]]:
    """Advances ``state`` by one frame and returns it with the rows emitted for that frame.

    The state is updated in place. Emitted rows are the active tracks matched in this frame, in identity
    order, each reporting the box of its matched detection.

    Raises:
        MixedFrameError: If the detections span several frames or the frame does not follow the last one.
    """
    frames = {d.frame for d in detections}
    if len(frames) > 1:
        raise MixedFrameError(f'One step received detections of frames {sorted(frames)}')
    if frame is None:
        frame = frames.pop() if frames else state.frame + 1
    elif frames and frames != {frame}:
        raise MixedFrameError(f'Detections of frame {frames.pop()} passed as frame {frame}')
    if frame <= state.frame:
        raise MixedFrameError(f'Frame {frame} does not follow frame {state.frame}')
    state.frame = frame

    detections = [d for d in detections if d.confidence >= cfg.confidence_floor]
    confirmed = [t for t in state.tracks if t.status is not TrackStatus.TENTATIVE]
    tentative = [t for t in state.tracks if t.status is TrackStatus.TENTATIVE]

    free = list(range(len(detections)))
    matched_keys = set()
    for candidates in (confirmed, tentative):
        result = _associate(candidates, [detections[j] for j in free], scorer, cfg, frame)
        for row, col in result.matches:
            track = candidates[row]
            track.observe(detections[free[col]])
            _confirm(state, track, cfg)
            matched_keys.add(track.key)
        free = [free[c] for c in result.unmatched_cols]

    survivors = []
    for track in state.tracks:
        if track.key in matched_keys:
            survivors.append(track)
            continue
        if track.status is TrackStatus.TENTATIVE:
            state.deleted += 1
            continue
        track.missed += 1
        track.status = TrackStatus.LOST
        if track.missed > cfg.max_age:
            state.deleted += 1
            logger.debug('Deleted track {} at frame {}', track.identity, frame)
            continue
        survivors.append(track)

    for j in free:
        track = Track.start(state.next_key, detections[j], cfg.T)
        state.next_key += 1
        state.born += 1
        _confirm(state, track, cfg)
        matched_keys.add(track.key)
        survivors.append(track)
    state.tracks = survivors

    rows = [ResultRow(frame, t.identity, t.last_bbox, t.confidence) for t in survivors
            if t.status is TrackStatus.ACTIVE and t.key in matched_keys]
    rows.sort(key=lambda r: r.identity)
    return state, rows


def read_detections(path) -> Tuple[List[DetectionRecord], int]:
    """Reads a MOTChallenge ``det.txt``, skipping malformed rows.

    Returns:
        Tuple[List[DetectionRecord], int]: The valid rows in file order and the number of skipped rows.
    """
    records = []
    skipped = 0
    order: Dict[int, int] = {}
    with open(path, 'r', encoding='utf-8') as fp:
        for line in fp:
            if not line.strip():
                continue
            fields = line.split(',')
            try:
                if len(fields) < 7:
                    raise ValueError(line)
                frame, identity = int(float(fields[0])), int(float(fields[1]))
                bbox = BBox(*(float(v) for v in fields[2:6]))
                confidence = float(fields[6])
            except ValueError:
                skipped += 1
                continue
            if frame < 1 or bbox.width <= 0 or bbox.height <= 0 or not np.isfinite(confidence):
                skipped += 1
                continue
            records.append(DetectionRecord(frame, identity, bbox, confidence, order.get(frame, 0)))
            order[frame] = order.get(frame, 0) + 1
    if skipped:
        logger.warning('Skipped {} malformed detection rows in {}', skipped, path)
    return records, skipped


def _write_rows(rows, path):
    with open(path, 'w', encoding='utf-8') as fp:
        for r in rows:
            fp.write(f'{r.frame},{r.identity},{r.bbox.left:.2f},{r.bbox.top:.2f},{r.bbox.width:.2f},'
                     f'{r.bbox.height:.2f},{r.confidence:.4f},-1,-1,-1\n')


def write_detections(records: Sequence[DetectionRecord], path):
    _write_rows(records, path)


class FileFeatureSource:
    """Features from a companion feature file whose rows follow the detection rows frame by frame.

    The k-th feature row of a frame belongs to the k-th valid detection of that frame; the id column of
    the feature file is not used.
    """

    def __init__(self, path):
        self.path = path
        self._features = {}
        order: Dict[int, int] = {}
        for observation in load_features(path):
            frame = observation.frame
            self._features[(frame, order.get(frame, 0))] = observation.feature
            order[frame] = order.get(frame, 0) + 1

    def feature(self, record: DetectionRecord) -> np.ndarray:
        try:
            return self._features[(record.frame, record.order)]
        except KeyError:
            raise DataFormatError(f'No feature for detection {record.order} of frame {record.frame}', self.path)


class SyntheticFeatureSource:
    """Features drawn from a synthetic world, using the detection id column as the ground truth id.

    Ground truth ids count from 1, so id ``k`` is world identity ``k - 1``.
    """

    def __init__(self, world: SyntheticWorldConfig):
        self.world = world

    def feature(self, record: DetectionRecord) -> np.ndarray:
        return synth_feature(record.identity - 1, record.frame, self.world)


def run_sequence(detections, features, scorer, cfg: TrackerConfig = TrackerConfig()) -> List[ResultRow]:
    """Tracks a whole sequence online.

    Args:
        detections (str | Sequence[DetectionRecord]): A ``det.txt`` path or parsed rows.
        features: A feature source with ``feature(record)``.
        scorer: The appearance scorer, usually an MsdoasModel.
        cfg (TrackerConfig): Tracker parameters.

    Returns:
        List[ResultRow]: Result rows ordered by frame, then identity.
    """
    cfg = cfg.validate()
    _check_memory(scorer, cfg)
    if isinstance(detections, (str, bytes)) or hasattr(detections, '__fspath__'):
        detections, _ = read_detections(detections)
    if not detections:
        return []

    by_frame: Dict[int, List[DetectionRecord]] = {}
    for record in sorted(detections, key=lambda r: (r.frame, r.order)):
        by_frame.setdefault(record.frame, []).append(record)
    state = TrackerState()
    results = []
    for frame in range(min(by_frame), max(by_frame) + 1):
        frame_detections = [Detection(r.frame, r.bbox, r.confidence, features.feature(r))
                            for r in by_frame.get(frame, ()) if r.confidence >= cfg.confidence_floor]
        state, rows = step(state, frame_detections, scorer, cfg, frame)
        results.extend(rows)
    logger.info('Tracked frames {}-{}: {} tracks born, {} confirmed, {} deleted, {} result rows',
                min(by_frame), max(by_frame), state.born, state.confirmed, state.deleted, len(results))
    return results


def write_results(rows: Sequence[ResultRow], path):
    """Writes MOTChallenge submission rows ``frame,id,bb_left,bb_top,bb_width,bb_height,conf,-1,-1,-1``."""
    _write_rows(rows, path)
    logger.info('Wrote {} result rows to {}', len(rows), path)
