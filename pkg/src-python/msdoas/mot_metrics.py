# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

"""CLEAR-MOT scoring of tracker output against MOTChallenge ground truth.

Per frame, ground truth objects keep the hypothesis they were last matched to while the boxes still
overlap by at least the IoU threshold; the remaining objects are matched by a minimum ``1 - IoU``
assignment. Unmatched hypotheses are false positives, unmatched objects false negatives, and an object
whose hypothesis differs from its previous one is an identity switch.
"""

import os
from collections import defaultdict
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from scipy.optimize import linear_sum_assignment

from msdoas.assignment import solve_assignment
from msdoas.core import BBox
from msdoas.exceptions import ConfigValidationError, DataFormatError, MetricsError
from msdoas.tracker import iou

TIE_TOLERANCE = 1e-9


class GtEntry(NamedTuple):
    frame: int
    identity: int
    bbox: BBox
    flag: int = 1
    cls: int = 1
    visibility: float = 1.0


class HypEntry(NamedTuple):
    frame: int
    identity: int
    bbox: BBox
    confidence: float = -1.0


class FrameCounts(NamedTuple):
    """Matching outcome of one frame.

    Args:
        frame (int): The frame index.
        g (int): Number of ground truth objects.
        fn (int): Unmatched ground truth objects.
        fp (int): Unmatched hypotheses.
        idsw (int): Identity switches.
        matches (List[Tuple[int, int]]): Matched (ground truth id, hypothesis id) pairs.
    """
    frame: int
    g: int
    fn: int
    fp: int
    idsw: int
    matches: List[Tuple[int, int]]


class ClearTotals(NamedTuple):
    """CLEAR counts summed over frames (and over sequences for pooled results)."""
    g: int = 0
    fn: int = 0
    fp: int = 0
    idsw: int = 0
    matches: int = 0

    @classmethod
    def from_frames(cls, frames: Sequence[FrameCounts]) -> 'ClearTotals':
        return cls(g=sum(f.g for f in frames), fn=sum(f.fn for f in frames), fp=sum(f.fp for f in frames),
                   idsw=sum(f.idsw for f in frames), matches=sum(len(f.matches) for f in frames))

    def __add__(self, other):
        return ClearTotals(*(a + b for a, b in zip(self, other)))


class MetricsConfig(NamedTuple):
    """Args:
        iou_threshold (float): Minimum IoU for a ground truth object and a hypothesis to match.
        exclude_invisible (bool): Drop ground truth entries flagged 0 or with visibility 0.
    """
    iou_threshold: float = 0.5
    exclude_invisible: bool = True

    def validate(self):
        if not 0 < self.iou_threshold <= 1:
            raise ConfigValidationError('metrics parameter must satisfy 0 < iou_threshold <= 1')
        return self


class SequenceCounts(NamedTuple):
    """Raw counts behind a report, additive across sequences."""
    clear: ClearTotals = ClearTotals()
    idtp: int = 0
    gt_detections: int = 0
    hyp_detections: int = 0
    trajectories: int = 0
    mostly_tracked: int = 0
    mostly_lost: int = 0

    def __add__(self, other):
        return SequenceCounts(self.clear + other.clear, *(a + b for a, b in zip(self[1:], other[1:])))


class MotReport(NamedTuple):
    """Tracking scores of one sequence, or of several pooled sequences with their breakdown."""
    sequence: str
    mota: float
    fp: int
    fn: int
    idsw: int
    idf1: float
    mt: float
    ml: float
    precision: float
    recall: float
    counts: SequenceCounts
    breakdown: Tuple['MotReport', ...] = ()

    @classmethod
    def from_counts(cls, sequence: str, counts: SequenceCounts, breakdown=()) -> 'MotReport':
        p, r = precision_recall(counts.clear)
        idf1_value = _ratio(2 * counts.idtp, counts.gt_detections + counts.hyp_detections)
        return cls(sequence, mota(counts.clear), counts.clear.fp, counts.clear.fn, counts.clear.idsw, idf1_value,
                   _ratio(counts.mostly_tracked, counts.trajectories), _ratio(counts.mostly_lost, counts.trajectories),
                   p, r, counts, tuple(breakdown))


def _ratio(numerator, denominator):
    return numerator / denominator if denominator else 0.0


def _by_frame(entries, kind=None):
    frames = defaultdict(list)
    for entry in entries:
        frames[entry.frame].append(entry)
    for frame, rows in frames.items():
        rows.sort(key=lambda e: e.identity)
        if kind is not None:
            for a, b in zip(rows, rows[1:]):
                if a.identity == b.identity:
                    raise MetricsError(f'{kind} id {a.identity} appears twice in frame {frame}')
    return frames


def _tie_break(rows, cols):
    # Rewards pairing the i-th smallest ground truth id with the i-th smallest hypothesis id.
    rank = np.outer(np.arange(1, rows + 1), np.arange(1, cols + 1))
    return TIE_TOLERANCE * rank / (rows * cols * min(rows, cols))


def clear_match(gt: Sequence[GtEntry], hyp: Sequence[HypEntry], iou_threshold: float = 0.5) -> List[FrameCounts]:
    """Matches ground truth and hypotheses frame by frame.

    Among equally good assignments, the one pairing ground truth ids and hypothesis ids in the same order
    wins; overlaps closer than ``TIE_TOLERANCE`` count as equal.

    Raises:
        MetricsError: If an id appears twice in one frame of the ground truth or of the hypotheses.
    """
    gt_frames = _by_frame(gt, 'ground truth')
    hyp_frames = _by_frame(hyp, 'hypothesis')
    last_match: Dict[int, int] = {}
    results = []
    for frame in sorted(set(gt_frames) | set(hyp_frames)):
        objects = gt_frames.get(frame, [])
        hypotheses = hyp_frames.get(frame, [])
        overlaps = np.array([[iou(o.bbox, h.bbox) for h in hypotheses] for o in objects]).reshape(
            len(objects), len(hypotheses))
        hyp_column = {h.identity: j for j, h in enumerate(hypotheses)}

        matched = {}
        used = set()
        for i, o in enumerate(objects):
            j = hyp_column.get(last_match.get(o.identity))
            if j is not None and j not in used and overlaps[i, j] >= iou_threshold:
                matched[i] = j
                used.add(j)

        idsw = 0
        rows = [i for i in range(len(objects)) if i not in matched]
        cols = [j for j in range(len(hypotheses)) if j not in used]
        if rows and cols:
            sub = overlaps[np.ix_(rows, cols)]
            assignment = solve_assignment(1.0 - sub - _tie_break(*sub.shape), sub < iou_threshold)
            for r, c in assignment.matches:
                i, j = rows[r], cols[c]
                previous = last_match.get(objects[i].identity)
                if previous is not None and previous != hypotheses[j].identity:
                    idsw += 1
                matched[i] = j

        pairs = sorted((objects[i].identity, hypotheses[j].identity) for i, j in matched.items())
        for gt_id, hyp_id in pairs:
            last_match[gt_id] = hyp_id
        results.append(FrameCounts(frame, len(objects), len(objects) - len(pairs), len(hypotheses) - len(pairs),
                                   idsw, pairs))
    return results


def mota(counts) -> float:
    """``1 - (FN + FP + IDsw) / g`` over summed counts.

    Args:
        counts (ClearTotals | Sequence[FrameCounts]): The counts to score.

    Raises:
        MetricsError: If there are no ground truth objects.
    """
    if not isinstance(counts, ClearTotals):
        counts = ClearTotals.from_frames(counts)
    if counts.g <= 0:
        raise MetricsError('MOTA is undefined without ground truth objects')
    return 1.0 - (counts.fn + counts.fp + counts.idsw) / counts.g


def _identity_overlaps(gt, hyp, iou_threshold):
    gt_ids = sorted({e.identity for e in gt})
    hyp_ids = sorted({e.identity for e in hyp})
    gt_index = {identity: i for i, identity in enumerate(gt_ids)}
    hyp_index = {identity: j for j, identity in enumerate(hyp_ids)}
    overlaps = np.zeros((len(gt_ids), len(hyp_ids)), dtype=np.int64)
    hyp_frames = _by_frame(hyp)
    for o in gt:
        for h in hyp_frames.get(o.frame, ()):
            if iou(o.bbox, h.bbox) >= iou_threshold:
                overlaps[gt_index[o.identity], hyp_index[h.identity]] += 1
    return overlaps


def identity_true_positives(gt: Sequence[GtEntry], hyp: Sequence[HypEntry], iou_threshold: float = 0.5) -> int:
    """Detections consistent with the best one-to-one pairing of ground truth and hypothesis identities."""
    overlaps = _identity_overlaps(gt, hyp, iou_threshold)
    if not overlaps.size:
        return 0
    rows, cols = linear_sum_assignment(overlaps, maximize=True)
    return int(overlaps[rows, cols].sum())


def idf1(gt: Sequence[GtEntry], hyp: Sequence[HypEntry], iou_threshold: float = 0.5) -> float:
    """``2 IDTP / (2 IDTP + IDFP + IDFN)``, which is ``2 IDTP`` over the total detection count."""
    return _ratio(2 * identity_true_positives(gt, hyp, iou_threshold), len(gt) + len(hyp))


def trajectory_coverage(gt: Sequence[GtEntry], matching: Sequence[FrameCounts]) -> Dict[int, Tuple[int, int]]:
    """Maps each ground truth identity to (matched frames, lifespan frames)."""
    lifespan = defaultdict(int)
    for entry in gt:
        lifespan[entry.identity] += 1
    covered = defaultdict(int)
    for frame in matching:
        for gt_id, _ in frame.matches:
            covered[gt_id] += 1
    return {identity: (covered[identity], span) for identity, span in sorted(lifespan.items())}


def _mt_ml_counts(coverage):
    mostly_tracked = sum(1 for matched, span in coverage.values() if matched >= 0.8 * span)
    mostly_lost = sum(1 for matched, span in coverage.values() if matched <= 0.2 * span)
    return mostly_tracked, mostly_lost


def mt_ml(gt: Sequence[GtEntry], matching: Sequence[FrameCounts]) -> Tuple[float, float]:
    """Fractions of trajectories covered at least 80% and at most 20% of their lifespan."""
    coverage = trajectory_coverage(gt, matching)
    mostly_tracked, mostly_lost = _mt_ml_counts(coverage)
    return _ratio(mostly_tracked, len(coverage)), _ratio(mostly_lost, len(coverage))


def precision_recall(counts) -> Tuple[float, float]:
    """``matches / (matches + FP)`` and ``matches / (matches + FN)``."""
    if not isinstance(counts, ClearTotals):
        counts = ClearTotals.from_frames(counts)
    return (_ratio(counts.matches, counts.matches + counts.fp),
            _ratio(counts.matches, counts.matches + counts.fn))


def filter_gt(gt: Sequence[GtEntry], cfg: MetricsConfig) -> List[GtEntry]:
    if not cfg.exclude_invisible:
        return list(gt)
    return [e for e in gt if e.flag != 0 and e.visibility > 0]


def sequence_counts(gt: Sequence[GtEntry], hyp: Sequence[HypEntry], cfg: MetricsConfig = MetricsConfig()) -> SequenceCounts:
    gt = filter_gt(gt, cfg)
    matching = clear_match(gt, hyp, cfg.iou_threshold)
    coverage = trajectory_coverage(gt, matching)
    mostly_tracked, mostly_lost = _mt_ml_counts(coverage)
    return SequenceCounts(ClearTotals.from_frames(matching), identity_true_positives(gt, hyp, cfg.iou_threshold),
                          len(gt), len(hyp), len(coverage), mostly_tracked, mostly_lost)


def score_sequences(sequences: Sequence[Tuple[str, Sequence[GtEntry], Sequence[HypEntry]]],
                    cfg: MetricsConfig = MetricsConfig()) -> MotReport:
    """Scores every (name, gt, hyp) sequence and pools the raw counts into a global report.

    Sequences without ground truth objects, after filtering, are left out of the report with a warning.

    Raises:
        MetricsError: If no sequence has ground truth objects.
    """
    cfg = cfg.validate()
    breakdown = []
    total = SequenceCounts()
    for name, gt, hyp in sequences:
        if not filter_gt(gt, cfg):
            logger.warning('Skipping {}: no ground truth objects to score {} hypotheses against', name, len(hyp))
            continue
        counts = sequence_counts(gt, hyp, cfg)
        breakdown.append(MotReport.from_counts(name, counts))
        total = total + counts
        logger.debug('{}: {}', name, counts)
    if not breakdown:
        raise MetricsError('No sequence has ground truth objects')
    return MotReport.from_counts('Global', total, breakdown)


def _parse_rows(path, minimum_fields):
    with open(path, 'r', encoding='utf-8') as fp:
        for line_number, line in enumerate(fp, start=1):
            if not line.strip():
                continue
            fields = [f.strip() for f in line.split(',')]
            if len(fields) < minimum_fields:
                raise DataFormatError(f'Expected at least {minimum_fields} fields, got {len(fields)}', path, line_number)
            yield line_number, fields


def _parse_box(fields, path, line_number):
    bbox = BBox(*(float(v) for v in fields[2:6]))
    if bbox.width <= 0 or bbox.height <= 0:
        raise DataFormatError('Boxes must have positive width and height', path, line_number)
    return bbox


def read_gt(path) -> List[GtEntry]:
    """Reads a ``frame,id,bb_left,bb_top,bb_width,bb_height,flag,class,visibility`` file."""
    entries = []
    for line_number, fields in _parse_rows(path, 6):
        try:
            frame, identity = int(float(fields[0])), int(float(fields[1]))
            bbox = _parse_box(fields, path, line_number)
            flag = int(float(fields[6])) if len(fields) > 6 else 1
            cls = int(float(fields[7])) if len(fields) > 7 else 1
            visibility = float(fields[8]) if len(fields) > 8 else 1.0
        except ValueError as e:
            raise DataFormatError(f'Unparseable ground truth row: {e}', path, line_number)
        if frame < 1:
            raise DataFormatError('Frames start at 1', path, line_number)
        entries.append(GtEntry(frame, identity, bbox, flag, cls, visibility))
    return entries


def read_hyp(path) -> List[HypEntry]:
    """Reads a ``frame,id,bb_left,bb_top,bb_width,bb_height,conf,...`` file."""
    entries = []
    for line_number, fields in _parse_rows(path, 6):
        try:
            frame, identity = int(float(fields[0])), int(float(fields[1]))
            bbox = _parse_box(fields, path, line_number)
            confidence = float(fields[6]) if len(fields) > 6 else -1.0
        except ValueError as e:
            raise DataFormatError(f'Unparseable hypothesis row: {e}', path, line_number)
        if frame < 1:
            raise DataFormatError('Frames start at 1', path, line_number)
        entries.append(HypEntry(frame, identity, bbox, confidence))
    return entries


def write_gt(entries: Sequence[GtEntry], path):
    with open(path, 'w', encoding='utf-8') as fp:
        for e in entries:
            fp.write(f'{e.frame},{e.identity},{e.bbox.left:.2f},{e.bbox.top:.2f},{e.bbox.width:.2f},'
                     f'{e.bbox.height:.2f},{e.flag},{e.cls},{e.visibility:g}\n')


def score(gt_files, hyp_files, cfg: MetricsConfig = MetricsConfig(), names: Optional[Sequence[str]] = None) -> MotReport:
    """Scores hypothesis files against ground truth files.

    Args:
        gt_files (str | Sequence[str]): One ground truth file per sequence.
        hyp_files (str | Sequence[str]): The matching hypothesis files.
        cfg (MetricsConfig): Matching parameters.
        names (Optional[Sequence[str]]): Sequence names; derived from the ground truth paths otherwise.

    Returns:
        MotReport: The pooled global report, with one breakdown entry per sequence.

    Raises:
        DataFormatError: If a file does not parse, naming the line.
    """
    if isinstance(gt_files, (str, os.PathLike)):
        gt_files = [gt_files]
    if isinstance(hyp_files, (str, os.PathLike)):
        hyp_files = [hyp_files]
    if len(gt_files) != len(hyp_files):
        raise ConfigValidationError(f'{len(gt_files)} ground truth files for {len(hyp_files)} hypothesis files')
    if names is None:
        names = [_sequence_name(p) for p in gt_files]
    sequences = [(name, read_gt(g), read_hyp(h)) for name, g, h in zip(names, gt_files, hyp_files)]
    return score_sequences(sequences, cfg)


def _sequence_name(path):
    path = os.path.abspath(os.fspath(path))
    directory = os.path.dirname(path)
    # MOTChallenge layout: <sequence>/gt/gt.txt
    if os.path.basename(directory) == 'gt':
        return os.path.basename(os.path.dirname(directory))
    return os.path.splitext(os.path.basename(path))[0]
