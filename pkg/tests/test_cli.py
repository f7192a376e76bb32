# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

import os
import subprocess
import sys
from os.path import abspath, dirname, exists, join

import pytest

from msdoas import __version__
from msdoas.classifier_eval import DEFAULT_THRESHOLDS, load_report_csv
from msdoas.cli import parse_args
from msdoas.core import BBox
from msdoas.embedding import load_features, store_features
from msdoas.exceptions import ConfigValidationError
from msdoas.model import ModelConfig, init_model, msdoas, save_model
from msdoas.mot_metrics import GtEntry, write_gt
from msdoas.report import read_report_csv
from msdoas.scenarios import ScenarioConfig, crossing_sequence, write_scenario
from msdoas.serialization import load_ion_text, manifest_path
from msdoas.tracker import ResultRow, write_results
from tests import small_pool

_SOURCES = abspath(join(dirname(abspath(__file__)), '..', 'src-python'))


def run_cli(c, cwd=None):
    env = dict(os.environ, PYTHONPATH=_SOURCES)
    cmd = [sys.executable, '-m', 'msdoas.cli'] + c
    proc = subprocess.run(cmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=env, cwd=cwd)
    return proc.returncode, proc.stdout, proc.stderr


def test_option_version():
    (error_code, out, _) = run_cli(['--version'])
    assert not error_code
    assert out.strip() == __version__


def test_option_help():
    (error_code, out, _) = run_cli(['--help'])
    assert not error_code
    assert 'Usage:' in out
    assert 'tracklets' in out


def test_parse_args_binds_flags(tmp_path):
    config_path = tmp_path / 'run.ion'
    config_path.write_text('{factory: {M: 50, T: 4}, seed: 5}', encoding='utf-8')
    config = parse_args(['tracklets', '--out', 'set.txt', '--T', '6', '--kind', 'II', '--cfg', str(config_path)])
    assert config.get_subcommand() == 'tracklets'
    factory = config.factory_config()
    assert (factory.M, factory.T, factory.kind.name, factory.seed) == (50, 6, 'II', 5)
    assert config.get_path('out') == abspath('set.txt')
    assert config.get_path('pool') is None


def test_parse_args_rejects_out_of_range():
    with pytest.raises(ConfigValidationError, match='T >= 1'):
        parse_args(['tracklets', '--out', 'set.txt', '--T', '-1'])


def test_invalid_parameter_exits_with_usage_status(tmp_path):
    out = str(tmp_path / 'set.txt')
    (error_code, _, err) = run_cli(['tracklets', '--out', out, '--T', '-1'])
    assert error_code == 1
    assert 'T >= 1' in err
    assert not exists(out)


def test_missing_input_leaves_no_partial_output(tmp_path):
    out = str(tmp_path / 'model.ion')
    (error_code, _, _) = run_cli(['train', '--tracklets', str(tmp_path / 'missing.txt'), '--out', out])
    assert error_code != 0
    assert not exists(out)
    assert not exists(manifest_path(out))


def test_malformed_input_is_a_data_error(tmp_path):
    tracklets = tmp_path / 'bad.txt'
    tracklets.write_text('T=2,n=2\n1|0:0:1\n', encoding='utf-8')
    out = str(tmp_path / 'model.ion')
    (error_code, _, err) = run_cli(['train', '--tracklets', str(tracklets), '--out', out])
    assert error_code == 2
    assert 'bad.txt:2:' in err
    assert not exists(out)


def test_score_identical_files(tmp_path):
    gt = [GtEntry(f, i, BBox(100.0 * i, 50.0, 40.0, 80.0)) for f in range(1, 21) for i in (1, 2)]
    gt_path = str(tmp_path / 'gt.txt')
    write_gt(gt, gt_path)
    hyp_path = str(tmp_path / 'hyp.txt')
    write_results([ResultRow(e.frame, e.identity, e.bbox, 1.0) for e in gt], hyp_path)
    report_path = str(tmp_path / 'report.csv')
    (error_code, out, _) = run_cli(['score', '--gt', gt_path, '--hyp', hyp_path, '--out', report_path])
    assert not error_code
    assert 'MOTA' in out
    rows = read_report_csv(report_path)
    assert rows[-1]['sequence'] == 'Global'
    assert (rows[-1]['MOTA'], rows[-1]['IDF1'], rows[-1]['IDsw']) == (1.0, 1.0, 0)
    manifest = load_ion_text(manifest_path(report_path))
    assert manifest['subcommand'] == 'score'
    assert manifest['inputs'] == [gt_path, hyp_path]


def test_parse_args_features_config(tmp_path):
    config_path = tmp_path / 'world.ion'
    config_path.write_text('{world: {identities: 4, dimension: 8}, seed: 2}', encoding='utf-8')
    config = parse_args(['features', 'synth', '--config', str(config_path), '--out', 'features.txt'])
    world = config.world_config()
    assert (world.identities, world.dimension, world.seed) == (4, 8, 2)
    assert config.get_path('out') == abspath('features.txt')


def test_parse_args_binds_inputs():
    config = parse_args(['train', '--tracklets', 'train.txt', '--out', 'model.ion', '--inputs', 'difference'])
    assert config.model_config().inputs == 'difference'
    with pytest.raises(ConfigValidationError, match='inputs in'):
        parse_args(['train', '--tracklets', 'train.txt', '--out', 'model.ion', '--inputs', 'pixels'])


def test_parse_args_eval_paths():
    config = parse_args(['eval', '--test', 'test.txt', '--model', 'model.ion', '--out', 'report.csv',
                         '--svg', 'roc.svg'])
    assert config.get_path('test') == abspath('test.txt')
    assert config.get_path('svg') == abspath('roc.svg')
    assert not config.get_eval_option('baseline')


def test_pipeline(tmp_path):
    def path(name):
        return str(tmp_path / name)

    world = tmp_path / 'world.ion'
    world.write_text('{world: {identities: 6, dimension: 16, frames: 60}, seed: 3}', encoding='utf-8')
    steps = [
        ['features', 'synth', '--config', str(world), '--out', path('features.txt')],
        ['tracklets', '--pool', path('features.txt'), '--out', path('train.txt'), '--M', '200', '--T', '3'],
        ['tracklets', '--pool', path('features.txt'), '--out', path('test.txt'), '--M', '100', '--T', '3',
         '--kind', 'IV', '--N', '1', '--seed', '4'],
        ['train', '--tracklets', path('train.txt'), '--out', path('model.ion'), '--H', '8', '--IT', '200',
         '--losses', path('losses.csv')],
        ['eval', '--test', path('test.txt'), '--model', path('model.ion'), '--out', path('report.csv'),
         '--svg', path('roc.svg'), '--kind', 'IV'],
        ['eval', '--test', path('test.txt'), '--baseline', '--calibrate', path('train.txt'),
         '--out', path('baseline.csv')],
    ]
    for step in steps:
        (error_code, _, err) = run_cli(step)
        assert not error_code, f'{step[0]} failed: {err}'

    assert load_features(path('features.txt'))[0].feature.shape == (16,)
    assert len(load_report_csv(path('report.csv'))) == len(DEFAULT_THRESHOLDS)
    assert open(path('roc.svg'), encoding='utf-8').read().lstrip().startswith('<')
    assert len(load_report_csv(path('baseline.csv'))) == len(DEFAULT_THRESHOLDS)
    assert not exists(path('baseline.svg'))
    assert len(open(path('losses.csv'), encoding='utf-8').read().splitlines()) == 201
    assert exists(manifest_path(path('model.ion')))

    gt_path, det_path = write_scenario(crossing_sequence(ScenarioConfig(frames=30, occlusion_start=10)),
                                       path('SYN-01'))
    (error_code, _, err) = run_cli(['track', '--det', det_path, '--features', 'synthetic:gt',
                                    '--model', path('model.ion'), '--out', path('hyp.txt'),
                                    '--cfg', '{world: {identities: 6, dimension: 16, seed: 3}}'])
    assert not error_code, err
    (error_code, out, _) = run_cli(['score', '--gt', gt_path, '--hyp', path('hyp.txt')])
    assert not error_code
    assert 'SYN-01' in out


def test_score_prints_msdoas(tmp_path):
    pool = small_pool()
    model = init_model(ModelConfig(n=16, H=4, T=3), seed=1, init_scale=0.5)
    model_path = str(tmp_path / 'model.ion')
    save_model(model, model_path)
    history = [o for o in pool if o.meta.identity == 0][:5]
    detections = [o for o in pool if o.meta.identity in (0, 1) and o.meta.frame == 10]
    history_path, detection_path = str(tmp_path / 'history.txt'), str(tmp_path / 'detection.txt')
    store_features(history, history_path, 16)
    store_features(detections, detection_path, 16)
    (error_code, out, err) = run_cli(['score', '--model', model_path, '--detection', detection_path,
                                      '--history', history_path])
    assert not error_code, err
    printed = [float(line) for line in out.split()]
    recent = [o.feature for o in sorted(history, key=lambda o: o.meta.frame, reverse=True)[:3]]
    expected = [msdoas(model, d.feature, recent) for d in detections]
    assert printed == pytest.approx(expected, abs=1e-6)
