# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

import os
import tempfile
from collections import defaultdict
from typing import NamedTuple

import motmetrics as mm
import numpy as np
import pytest

from msdoas.core import BBox
from msdoas.exceptions import ConfigValidationError, DataFormatError, MetricsError
from msdoas.mot_metrics import (ClearTotals, GtEntry, HypEntry, MetricsConfig, clear_match, filter_gt, idf1, mota,
                                mt_ml, precision_recall, read_gt, read_hyp, score, score_sequences,
                                trajectory_coverage, write_gt)
from msdoas.scenarios import ScenarioConfig, crossing_sequence
from msdoas.tracker import iou
from tests import parametrize

BOX_A = BBox(0, 0, 10, 10)
BOX_B = BBox(100, 0, 10, 10)


def _gt(frames, identity, box):
    return [GtEntry(f, identity, box) for f in frames]


def _hyp(frames, identity, box):
    return [HypEntry(f, identity, box) for f in frames]


def _swapped():
    gt = _gt(range(1, 6), 1, BOX_A) + _gt(range(1, 6), 2, BOX_B)
    hyp = (_hyp([1, 2], 1, BOX_A) + _hyp([1, 2], 2, BOX_B)
           + _hyp([3, 4, 5], 1, BOX_B) + _hyp([3, 4, 5], 2, BOX_A))
    return gt, hyp


def test_identity_swap():
    gt, hyp = _swapped()
    frames = clear_match(gt, hyp)
    totals = ClearTotals.from_frames(frames)
    assert totals == ClearTotals(g=10, fn=0, fp=0, idsw=2, matches=10)
    assert [f.idsw for f in frames] == [0, 0, 2, 0, 0]
    assert mota(frames) == pytest.approx(0.8)
    # Best identity pairing keeps 3 + 3 of the 10 detections on each side.
    assert idf1(gt, hyp) == pytest.approx(0.6)


def test_perfect_tracking():
    gt = _gt(range(1, 11), 1, BOX_A) + _gt(range(1, 11), 2, BOX_B)
    hyp = _hyp(range(1, 11), 7, BOX_A) + _hyp(range(1, 11), 9, BOX_B)
    report = score_sequences([('seq', gt, hyp)])
    assert report.mota == 1.0
    assert report.idf1 == 1.0
    assert (report.mt, report.ml) == (1.0, 0.0)
    assert (report.precision, report.recall) == (1.0, 1.0)
    assert (report.fp, report.fn, report.idsw) == (0, 0, 0)


def test_empty_hypothesis():
    gt = _gt(range(1, 5), 1, BOX_A)
    report = score_sequences([('seq', gt, [])])
    assert report.mota == 0.0
    assert report.fn == 4
    assert report.idf1 == 0.0
    assert (report.mt, report.ml) == (0.0, 1.0)


def test_mota_from_counts():
    assert mota(ClearTotals(g=10, fn=2, fp=1, idsw=1)) == pytest.approx(0.6)
    # Can go below zero.
    assert mota(ClearTotals(g=2, fn=2, fp=3)) == pytest.approx(-1.5)
    with pytest.raises(MetricsError):
        mota(ClearTotals())


def test_precision_recall():
    assert precision_recall(ClearTotals(matches=7, fp=3, fn=13)) == pytest.approx((0.7, 0.35))
    assert precision_recall(ClearTotals()) == (0.0, 0.0)


def test_persistent_match_survives_closer_hypothesis():
    # Hypothesis 2 overlaps better in frame 2, but hypothesis 1 still clears the threshold.
    gt = _gt([1, 2], 1, BOX_A)
    hyp = [HypEntry(1, 1, BOX_A), HypEntry(2, 1, BBox(2, 0, 10, 10)), HypEntry(2, 2, BOX_A)]
    frames = clear_match(gt, hyp)
    assert frames[1].matches == [(1, 1)]
    assert (frames[1].fp, frames[1].idsw) == (1, 0)


def test_below_threshold_is_not_a_match():
    # IoU of these boxes is 1/3.
    gt = [GtEntry(1, 1, BBox(0, 0, 10, 10))]
    hyp = [HypEntry(1, 1, BBox(5, 0, 10, 10))]
    assert clear_match(gt, hyp)[0].matches == []
    assert clear_match(gt, hyp, iou_threshold=0.3)[0].matches == [(1, 1)]


@parametrize(
    (8, 1.0, 0.0),
    (7, 0.0, 0.0),
    (2, 0.0, 1.0),
    (3, 0.0, 0.0),
)
def test_mostly_tracked_boundaries(p):
    covered, mt, ml = p
    gt = _gt(range(1, 11), 1, BOX_A)
    hyp = _hyp(range(1, covered + 1), 5, BOX_A)
    assert mt_ml(gt, clear_match(gt, hyp)) == (mt, ml)


def test_pooling_adds_counts():
    gt_a, hyp_a = _swapped()
    gt_b = _gt(range(1, 5), 3, BOX_A)
    hyp_b = _hyp(range(1, 5), 3, BOX_A) + _hyp([2], 4, BOX_B)
    report = score_sequences([('a', gt_a, hyp_a), ('b', gt_b, hyp_b)])
    first, second = report.breakdown
    assert (first.sequence, second.sequence) == ('a', 'b')
    assert report.fp == first.fp + second.fp == 1
    assert report.idsw == first.idsw + second.idsw == 2
    assert report.counts.clear.g == 14
    assert report.mota == pytest.approx(1 - 3 / 14)
    assert report.counts.trajectories == 3


def test_invisible_entries_are_filtered():
    gt = [GtEntry(1, 1, BOX_A), GtEntry(2, 1, BOX_A, flag=0), GtEntry(3, 1, BOX_A, visibility=0.0)]
    assert filter_gt(gt, MetricsConfig()) == gt[:1]
    assert filter_gt(gt, MetricsConfig(exclude_invisible=False)) == gt
    with pytest.raises(ConfigValidationError):
        MetricsConfig(iou_threshold=0.0).validate()


def test_score_files(tmp_path):
    gt, hyp = _swapped()
    sequence = tmp_path / 'SEQ-01' / 'gt'
    sequence.mkdir(parents=True)
    gt_path = str(sequence / 'gt.txt')
    write_gt(gt, gt_path)
    hyp_path = str(tmp_path / 'hyp.txt')
    with open(hyp_path, 'w', encoding='utf-8') as fp:
        for h in hyp:
            fp.write(f'{h.frame},{h.identity},{h.bbox.left},{h.bbox.top},{h.bbox.width},{h.bbox.height},1,-1,-1,-1\n')
    assert read_gt(gt_path) == gt
    report = score(gt_path, hyp_path)
    assert report.breakdown[0].sequence == 'SEQ-01'
    assert report.idsw == 2
    assert report.mota == pytest.approx(0.8)
    with pytest.raises(ConfigValidationError):
        score([gt_path], [hyp_path, hyp_path])


def test_equal_overlaps_pair_ids_in_order():
    gt = [GtEntry(1, 2, BOX_A), GtEntry(1, 1, BOX_A)]
    for hyp in ([HypEntry(1, 5, BOX_A), HypEntry(1, 7, BOX_A)], [HypEntry(1, 7, BOX_A), HypEntry(1, 5, BOX_A)]):
        assert clear_match(gt, hyp)[0].matches == [(1, 5), (2, 7)]
        assert clear_match(gt[::-1], hyp)[0].matches == [(1, 5), (2, 7)]


def test_repeated_id_in_a_frame_is_rejected():
    gt = _gt([1], 1, BOX_A)
    with pytest.raises(MetricsError, match='hypothesis id 4 appears twice in frame 1'):
        clear_match(gt, [HypEntry(1, 4, BOX_A), HypEntry(1, 4, BOX_B)])
    with pytest.raises(MetricsError, match='ground truth id 1 appears twice'):
        clear_match(gt + gt, [])
    with pytest.raises(MetricsError):
        score_sequences([('seq', gt, _hyp([1], 4, BOX_A) + _hyp([1], 4, BOX_B))])


def test_sequence_without_ground_truth_is_skipped():
    gt, hyp = _swapped()
    hidden = [GtEntry(1, 9, BOX_A, flag=0)]
    report = score_sequences([('a', gt, hyp), ('empty', [], _hyp([1, 2], 3, BOX_A)), ('hidden', hidden, [])])
    assert [r.sequence for r in report.breakdown] == ['a']
    assert report.mota == pytest.approx(0.8)
    assert report.fp == 0
    with pytest.raises(MetricsError):
        score_sequences([('empty', [], _hyp([1], 3, BOX_A))])


def _perturbed(seed):
    """Ground truth of a crossing sequence with dropped, jittered, swapped and spurious hypotheses."""
    gt = filter_gt(crossing_sequence(ScenarioConfig(frames=60, seed=seed)).gt, MetricsConfig())
    rng = np.random.default_rng(seed)
    hyp = []
    for e in gt:
        if rng.random() < 0.1:
            continue
        identity = 10 + e.identity
        if e.frame > 30 and e.identity in (1, 2):
            identity = 13 - e.identity
        box = e.bbox._replace(left=e.bbox.left + rng.normal(0.0, 3.0), top=e.bbox.top + rng.normal(0.0, 3.0))
        hyp.append(HypEntry(e.frame, identity, box))
    for frame in sorted({e.frame for e in gt}):
        if rng.random() < 0.1:
            hyp.append(HypEntry(frame, 99, BBox(rng.uniform(0.0, 500.0), rng.uniform(0.0, 300.0), 40.0, 80.0)))
    return gt, hyp


@parametrize(0, 1, 2)
def test_relabeled_hypotheses_score_the_same(seed):
    gt, hyp = _perturbed(seed)
    ids = sorted({h.identity for h in hyp})
    labels = np.random.default_rng(seed).permutation(len(ids)) + 1000
    relabel = {identity: int(label) for identity, label in zip(ids, labels)}
    renamed = [h._replace(identity=relabel[h.identity]) for h in hyp]
    a, b = score_sequences([('seq', gt, hyp)]), score_sequences([('seq', gt, renamed)])
    assert a.idsw > 0
    assert (a.mota, a.fp, a.fn, a.idsw, a.idf1, a.mt, a.ml) == (b.mota, b.fp, b.fn, b.idsw, b.idf1, b.mt, b.ml)


def _reference_summary(gt, hyp, iou_threshold=0.5):
    acc = mm.MOTAccumulator(auto_id=True)
    gt_frames, hyp_frames = defaultdict(list), defaultdict(list)
    for e in gt:
        gt_frames[e.frame].append(e)
    for h in hyp:
        hyp_frames[h.frame].append(h)
    for frame in sorted(set(gt_frames) | set(hyp_frames)):
        objects, hypotheses = gt_frames[frame], hyp_frames[frame]
        overlaps = np.array([[iou(o.bbox, h.bbox) for h in hypotheses] for o in objects]).reshape(
            len(objects), len(hypotheses))
        distances = np.where(overlaps >= iou_threshold, 1.0 - overlaps, np.nan)
        acc.update([o.identity for o in objects], [h.identity for h in hypotheses], distances)
    metrics = ['mota', 'num_switches', 'num_false_positives', 'num_misses', 'idf1', 'mostly_tracked',
               'mostly_lost']
    return mm.metrics.create().compute(acc, metrics=metrics, name='seq').iloc[0]


def _assert_matches_reference(gt, hyp):
    report = score_sequences([('seq', gt, hyp)])
    reference = _reference_summary(gt, hyp)
    assert report.mota == pytest.approx(reference['mota'], abs=1e-12)
    assert (report.fp, report.fn, report.idsw) == (reference['num_false_positives'], reference['num_misses'],
                                                   reference['num_switches'])
    assert report.idf1 == pytest.approx(reference['idf1'], abs=1e-12)
    assert report.counts.mostly_tracked == reference['mostly_tracked']
    coverage = trajectory_coverage(gt, clear_match(gt, hyp))
    # Lost means at most 20% covered here and strictly less than 20% in the reference.
    if not any(5 * matched == span for matched, span in coverage.values()):
        assert report.counts.mostly_lost == reference['mostly_lost']


def test_fixtures_match_reference_metrics():
    _assert_matches_reference(*_swapped())
    _assert_matches_reference(_gt(range(1, 11), 1, BOX_A), _hyp(range(1, 11), 7, BOX_A))
    gt = _gt(range(1, 11), 1, BOX_A) + _gt(range(1, 11), 2, BOX_B)
    _assert_matches_reference(gt, _hyp(range(1, 4), 5, BOX_A) + _hyp(range(2, 11), 6, BOX_B))


@parametrize(0, 1, 2)
def test_perturbed_sequences_match_reference_metrics(seed):
    _assert_matches_reference(*_perturbed(seed))


class _BadFile(NamedTuple):
    desc: str
    text: str
    line: int

    def __str__(self):
        return self.desc


@parametrize(
    _BadFile('too few fields', '1,1,0,0,10\n', 1),
    _BadFile('zero width', '1,1,0,0,10,10\n2,1,0,0,0,10\n', 2),
    _BadFile('frame zero', '0,1,0,0,10,10\n', 1),
    _BadFile('not a number', '1,1,0,0,10,10\n\n1,x,0,0,10,10\n', 3),
)
def test_read_rejects_malformed(p):
    with tempfile.TemporaryDirectory() as directory:
        path = os.path.join(directory, 'rows.txt')
        with open(path, 'w', encoding='utf-8') as fp:
            fp.write(p.text)
        for reader in (read_gt, read_hyp):
            with pytest.raises(DataFormatError) as error:
                reader(path)
            assert error.value.line_number == p.line
