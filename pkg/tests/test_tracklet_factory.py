# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

import os
import tempfile
from typing import NamedTuple, Sequence

import numpy as np
import pytest

from msdoas.core import Observation, ObservationMeta
from msdoas.exceptions import (ConfigValidationError, DataFormatError, DimensionMismatchError, EmptyHistoryError,
                               PoolDiversityError, UnsatisfiableConfigError)
from msdoas.tracklet_factory import (FactoryConfig, FeatureTracklet, MaskVector, TrackletKind, apply_intruders,
                                     generate_set, label_tracklet, load_tracklets, mode_identity, split_pool,
                                     store_tracklets, validate_membership)
from tests import parametrize, small_pool


def _tracklet(ids, frames, label=None, dimension=2):
    components = tuple(Observation(ObservationMeta(i, f), np.full(dimension, float(i))) for i, f in zip(ids, frames))
    tracklet = FeatureTracklet(components, 0)
    return tracklet._replace(label=label_tracklet(tracklet) if label is None else label)


def _gaps(t: FeatureTracklet):
    frames = t.frames
    return [frames[n] - frames[n + 1] for n in range(t.T)]


def _intruders(t: FeatureTracklet):
    identities = t.identities
    reference = identities[0] if t.label else mode_identity(identities[1:])
    return sum(1 for identity in identities[1:] if identity != reference)


@parametrize(
    ([3], 3),
    ([2, 2, 8], 2),
    ([4, 4, 6, 6], 4),
    ([9, 1, 9, 1, 5], 1),
)
def test_mode_identity(p):
    history, expected = p
    assert mode_identity(history) == expected


def test_mode_identity_empty():
    with pytest.raises(EmptyHistoryError):
        mode_identity([])


@parametrize(
    ((5, 5, 5, 5, 5), 1),
    ((7, 5, 5, 5, 5), 0),
    ((5, 5, 9, 5, 9, 5), 1),
    ((9, 5, 9, 5, 9), 0),
)
def test_label_tracklet(p):
    ids, expected = p
    assert label_tracklet(_tracklet(ids, range(len(ids) + 10, 10, -1), label=1 - expected)) == expected


class _Membership(NamedTuple):
    desc: str
    cfg: FactoryConfig
    ids: Sequence[int]
    frames: Sequence[int]
    expected: bool

    def __str__(self):
        return self.desc


_T4 = FactoryConfig(T=4, F=5, S=2, N=2)


@parametrize(
    _Membership('I positive', _T4._replace(kind=TrackletKind.I), (5, 5, 5, 5, 5), (10, 9, 8, 7, 6), True),
    _Membership('I negative', _T4._replace(kind=TrackletKind.I), (7, 5, 5, 5, 5), (10, 9, 8, 7, 6), True),
    _Membership('I negative later detection', _T4._replace(kind=TrackletKind.I), (7, 5, 5, 5, 5), (30, 9, 8, 7, 6),
                True),
    _Membership('I gap', _T4._replace(kind=TrackletKind.I), (5, 5, 5, 5, 5), (11, 9, 8, 7, 6), False),
    _Membership('I intruder', _T4._replace(kind=TrackletKind.I), (5, 5, 9, 5, 5), (10, 9, 8, 7, 6), False),
    _Membership('II gap 4', _T4._replace(kind=TrackletKind.II), (5, 5, 5, 5, 5), (13, 9, 8, 7, 6), True),
    _Membership('II gap 5', _T4._replace(kind=TrackletKind.II), (5, 5, 5, 5, 5), (14, 9, 8, 7, 6), False),
    _Membership('II gap 7', _T4._replace(kind=TrackletKind.II), (5, 5, 5, 5, 5), (16, 9, 8, 7, 6), False),
    _Membership('II history gap', _T4._replace(kind=TrackletKind.II), (5, 5, 5, 5, 5), (12, 9, 7, 6, 5), False),
    _Membership('III two steps', _T4._replace(kind=TrackletKind.III, F=3), (5, 5, 5, 5, 5), (20, 17, 16, 14, 13),
                True),
    _Membership('III too many steps', _T4._replace(kind=TrackletKind.III, F=3, S=1), (5, 5, 5, 5, 5),
                (20, 17, 16, 14, 13), False),
    _Membership('III step too long', _T4._replace(kind=TrackletKind.III, F=3), (5, 5, 5, 5, 5), (20, 16, 15, 14, 13),
                False),
    _Membership('IV positive', _T4._replace(kind=TrackletKind.IV), (5, 5, 8, 5, 9), (10, 9, 8, 7, 6), True),
    _Membership('IV too many', _T4._replace(kind=TrackletKind.IV, N=1), (5, 5, 8, 5, 9), (10, 9, 8, 7, 6), False),
    _Membership('IV negative', _T4._replace(kind=TrackletKind.IV), (7, 5, 5, 9, 5), (10, 9, 8, 7, 6), True),
    _Membership('V positive', _T4._replace(kind=TrackletKind.V, F=3), (5, 5, 8, 5, 5), (20, 17, 16, 14, 13), True),
    _Membership('frames not decreasing', _T4, (5, 5, 5, 5, 5), (10, 9, 9, 8, 7), False),
)
def test_validate_membership(p):
    assert validate_membership(_tracklet(p.ids, p.frames), p.cfg) is p.expected


def test_validate_membership_wrong_label_or_length():
    cfg = _T4._replace(kind=TrackletKind.I)
    assert not validate_membership(_tracklet((5, 5, 5, 5, 5), (10, 9, 8, 7, 6), label=0), cfg)
    assert not validate_membership(_tracklet((5, 5, 5, 5), (10, 9, 8, 7)), cfg)


class _Invalid(NamedTuple):
    desc: str
    cfg: FactoryConfig

    def __str__(self):
        return self.desc


@parametrize(
    _Invalid('M', FactoryConfig(M=0)),
    _Invalid('T', FactoryConfig(T=0)),
    _Invalid('F', FactoryConfig(kind=TrackletKind.II, F=1)),
    _Invalid('N zero', FactoryConfig(kind=TrackletKind.IV, N=0)),
    _Invalid('N above T', FactoryConfig(kind=TrackletKind.V, T=2, S=1, N=3)),
    _Invalid('S zero', FactoryConfig(kind=TrackletKind.III, S=0)),
    _Invalid('S above T', FactoryConfig(kind=TrackletKind.III, T=2, S=3)),
)
def test_factory_config_validate(p):
    with pytest.raises(ConfigValidationError):
        p.cfg.validate()


def test_factory_config_accepts_int_kind():
    assert FactoryConfig(kind=3).validate().kind is TrackletKind.III


def test_apply_intruders():
    skeleton = _tracklet((5, 5, 5, 5, 5, 5, 5), range(20, 13, -1))
    donor = Observation(ObservationMeta(9, 2, 'OTHER'), np.full(2, 9.0))
    donors = [donor] * 7

    unchanged = apply_intruders(skeleton, MaskVector.from_positions(6, []), donors)
    assert unchanged.identities == skeleton.identities
    assert unchanged.frames == skeleton.frames
    assert unchanged.label == skeleton.label

    single = apply_intruders(skeleton, MaskVector.from_positions(6, [3]), donors)
    assert [n for n in range(7) if single.identities[n] != skeleton.identities[n]] == [3]
    assert single.frames == skeleton.frames
    assert np.array_equal(single.components[3].feature, donor.feature)

    mask = MaskVector.from_positions(6, [1, 4, 6])
    assert mask.popcount == 3
    triple = apply_intruders(skeleton, mask, donors)
    changed = [n for n in range(7) if not np.array_equal(triple.components[n].feature,
                                                         skeleton.components[n].feature)]
    assert changed == [1, 4, 6]
    assert triple.label == 1


def test_apply_intruders_relabels():
    skeleton = _tracklet((5, 5, 5, 5), (10, 9, 8, 7))
    donors = [None, None] + [Observation(ObservationMeta(9, 0), np.zeros(2))] * 2
    assert apply_intruders(skeleton, MaskVector.from_positions(3, [2, 3]), donors).label == 0


def test_apply_intruders_rejects():
    skeleton = _tracklet((5, 5, 5), (10, 9, 8))
    donor = Observation(ObservationMeta(9, 0), np.zeros(2))
    with pytest.raises(ValueError):
        apply_intruders(skeleton, MaskVector((1, 0, 0)), [donor] * 3)
    with pytest.raises(DimensionMismatchError):
        apply_intruders(skeleton, MaskVector((0, 1)), [donor] * 3)
    with pytest.raises(DimensionMismatchError):
        apply_intruders(skeleton, MaskVector((0, 1, 0)), [donor] * 2)
    with pytest.raises(ValueError):
        apply_intruders(skeleton, MaskVector((0, 1, 0)), [donor, None, donor])


def test_generate_set_balanced():
    tracklets = generate_set(FactoryConfig(kind=TrackletKind.I, M=100, T=5), small_pool(identities=2, frames=40))
    assert len(tracklets) == 100
    assert sum(t.label for t in tracklets) == 50
    cfg = FactoryConfig(kind=TrackletKind.I, M=100, T=5)
    assert all(validate_membership(t, cfg) for t in tracklets)
    # Shuffled, not grouped by label.
    assert [t.label for t in tracklets] != sorted((t.label for t in tracklets), reverse=True)


def test_generate_set_odd_size():
    tracklets = generate_set(FactoryConfig(M=7, T=3), small_pool(frames=20))
    assert sum(t.label for t in tracklets) == 4


def test_generate_set_is_seeded():
    pool = small_pool(frames=30)
    cfg = FactoryConfig(kind=TrackletKind.V, M=40, T=4, F=4, S=2, N=2, seed=9)
    a, b = generate_set(cfg, pool), generate_set(cfg, pool)
    assert [(t.identities, t.frames, t.label) for t in a] == [(t.identities, t.frames, t.label) for t in b]
    c = generate_set(cfg._replace(seed=10), pool)
    assert [(t.identities, t.frames) for t in a] != [(t.identities, t.frames) for t in c]


def test_generate_set_kind_iv_intruder_bound():
    cfg = FactoryConfig(kind=TrackletKind.IV, M=300, T=5, N=2)
    tracklets = generate_set(cfg, small_pool())
    for t in tracklets:
        assert validate_membership(t, cfg)
        assert _intruders(t) <= 2
        if t.label:
            assert sum(1 for identity in t.identities[1:] if identity != t.identities[0]) <= 2
        else:
            assert t.identities[0] != mode_identity(t.identities[1:])
        assert all(gap == 1 for gap in _gaps(t)[0 if t.label else 1:])
    assert any(_intruders(t) for t in tracklets)


def test_generate_set_draws_intruders_across_sequences():
    first = small_pool(sequence='SEQ-A', identities=4)
    second = [Observation(o.meta._replace(identity=o.meta.identity + 10), o.feature)
              for o in small_pool(sequence='SEQ-B', identities=4, seed=8)]
    tracklets = generate_set(FactoryConfig(kind=TrackletKind.IV, M=600, T=5, N=2, seed=3), first + second)
    same, crossed = 0, 0
    for t in tracklets:
        if not t.label:
            continue
        reference = t.components[0].meta
        for component in t.components[1:]:
            if component.meta.identity != reference.identity:
                if component.meta.sequence == reference.sequence:
                    same += 1
                else:
                    crossed += 1
    assert same > 0
    assert crossed > 0


def test_generate_set_kind_v_constraints():
    cfg = FactoryConfig(kind=TrackletKind.V, M=300, T=5, F=3, S=2, N=1)
    tracklets = generate_set(cfg, small_pool())
    for t in tracklets:
        assert validate_membership(t, cfg)
        considered = _gaps(t)[0 if t.label else 1:]
        assert all(1 <= gap <= 3 for gap in considered)
        assert sum(1 for gap in considered if gap > 1) <= 2
        assert _intruders(t) <= 1
        assert label_tracklet(t) == t.label


@parametrize(*TrackletKind)
def test_generate_set_every_kind(kind):
    cfg = FactoryConfig(kind=kind, M=200, T=5, F=5, S=2, N=2, seed=int(kind))
    tracklets = generate_set(cfg, small_pool(seed=int(kind)))
    positives = sum(t.label for t in tracklets)
    assert positives == 100
    for t in tracklets:
        assert validate_membership(t, cfg)
        assert all(a > b for a, b in zip(t.frames, t.frames[1:]))


def test_generate_set_kind_ii_first_gap():
    cfg = FactoryConfig(kind=TrackletKind.II, M=400, T=3, F=4)
    gaps = {_gaps(t)[0] for t in generate_set(cfg, small_pool()) if t.label}
    assert gaps <= {1, 2, 3}
    assert len(gaps) > 1


def test_generate_set_pool_diversity():
    with pytest.raises(PoolDiversityError):
        generate_set(FactoryConfig(M=10), [])
    with pytest.raises(PoolDiversityError):
        generate_set(FactoryConfig(M=10, T=5), small_pool(frames=4))
    with pytest.raises(PoolDiversityError):
        generate_set(FactoryConfig(M=10, T=3), small_pool(identities=1))


def test_generate_set_unsatisfiable():
    # Every other frame only, so no consecutive history exists.
    pool = [Observation(ObservationMeta(identity, frame), np.zeros(2))
            for identity in (0, 1) for frame in range(0, 20, 2)]
    with pytest.raises(UnsatisfiableConfigError):
        generate_set(FactoryConfig(kind=TrackletKind.I, M=2, T=2), pool)


def test_split_pool_is_identity_disjoint():
    pool = small_pool(identities=10, frames=5)
    train, test = split_pool(pool, 0.3, seed=2)
    train_ids = {o.identity for o in train}
    test_ids = {o.identity for o in test}
    assert not train_ids & test_ids
    assert len(test_ids) == 3
    assert len(train) + len(test) == len(pool)
    assert {o.identity for o in split_pool(pool, 0.3, seed=2)[1]} == test_ids


def test_split_pool_rejects():
    with pytest.raises(ConfigValidationError):
        split_pool(small_pool(), 1.0)
    with pytest.raises(PoolDiversityError):
        split_pool(small_pool(identities=1), 0.5)


def test_store_tracklets_empty(tmp_path):
    path = str(tmp_path / 'empty.txt')
    store_tracklets([], path, T=2, dimension=3)
    assert open(path, encoding='utf-8').read() == 'T=2,n=3\n'
    assert load_tracklets(path) == []


def test_store_tracklets_single(tmp_path):
    path = str(tmp_path / 'single.txt')
    store_tracklets([_tracklet((4, 4, 4), (3, 2, 1))], path)
    lines = open(path, encoding='utf-8').read().splitlines()
    assert lines == ['T=2,n=2', '1|4:3:4:4|4:2:4:4|4:1:4:4']


def test_store_tracklets_reloads(tmp_path):
    tracklets = generate_set(FactoryConfig(kind=TrackletKind.V, M=500, T=4, F=3, S=2, N=2), small_pool())
    path = str(tmp_path / 'tracklets.txt')
    store_tracklets(tracklets, path)
    reloaded = load_tracklets(path)
    assert len(reloaded) == 500
    for a, b in zip(tracklets, reloaded):
        assert (a.label, a.identities, a.frames) == (b.label, b.identities, b.frames)
        for x, y in zip(a.components, b.components):
            assert np.array_equal(x.feature, y.feature)


class _BadFile(NamedTuple):
    desc: str
    text: str

    def __str__(self):
        return self.desc


@parametrize(
    _BadFile('header', 'T=2\n'),
    _BadFile('component count', 'T=2,n=1\n1|4:3:0|4:2:0\n'),
    _BadFile('label', 'T=1,n=1\n2|4:3:0|4:2:0\n'),
    _BadFile('value count', 'T=1,n=2\n1|4:3:0|4:2:0:0\n'),
    _BadFile('value', 'T=1,n=1\n1|4:3:x|4:2:0\n'),
    _BadFile('non-finite', 'T=1,n=1\n1|4:3:inf|4:2:0\n'),
)
def test_load_tracklets_malformed(p):
    with tempfile.TemporaryDirectory() as directory:
        path = os.path.join(directory, 'tracklets.txt')
        with open(path, 'w', encoding='utf-8') as fp:
            fp.write(p.text)
        with pytest.raises(DataFormatError):
            load_tracklets(path)
