#!/usr/bin/env python3

# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

"""Multi-shot appearance similarity experiments and online tracking.

Usage:
    msdoas (features|tracklets|train|eval|grid|track|score) [<args>]...
    msdoas (-v | --version)
    msdoas (-h | --help)

Command:
    features    Write the observation pool of a synthetic appearance world to a feature file.

    tracklets   Generate a labelled tracklet set of one kind from a feature pool.

    train       Train an MS-DoAS model on a tracklet set.

    eval        Sweep the decision threshold of a model (or of the Euclidean baseline) over a test set.

    grid        Train one model per tracklet kind and evaluate every model on every kind.

    track       Track a detection sequence online and write MOTChallenge results.

    score       Score tracking results against ground truth with the CLEAR-MOT metrics.

Options:
     -h, --help                         Show this screen.
     -v, --version                      Display the tool version

Every subcommand accepts a run configuration through --cfg; command line flags override its values.
Exit status is 0 on success, 1 on usage or configuration errors, 2 on data errors and 3 on numerical
failures.
"""
import os
import sys

from docopt import docopt
from loguru import logger

from msdoas import __version__, mot_metrics
from msdoas.classifier_eval import EvalReport, emit_report, experiment_grid, grid_sets, grid_table, roc_sweep
from msdoas.config import SYNTHETIC_PREFIX, RunConfig, load_run_config
from msdoas.embedding import EuclideanBaseline, load_features, store_features, synth_pool
from msdoas.exceptions import ConfigValidationError, DimensionMismatchError, MsdoasException
from msdoas.model import init_model, load_model, save_model, score_pairs, train
from msdoas.report import CONSOLE_FIELDS, CSV_FIELDS, render_table, report_rows, write_report_csv
from msdoas.serialization import write_manifest
from msdoas.tracker import FileFeatureSource, SyntheticFeatureSource, run_sequence, write_results
from msdoas.tracklet_factory import generate_set, load_tracklets, split_pool, store_tracklets

COMMANDS = ('features', 'tracklets', 'train', 'eval', 'grid', 'track', 'score')

_COMMON_OPTIONS = """
    Common options:
        -c, --cfg <cfg>             A file or string of Ion Text holding the run configuration.
        --seed <int>                The global seed.
        --verbose                   Log debug messages.
        -q, --quiet                 Log warnings and errors only.
        -h, --help                  Show this screen.
"""


def features_command(config: RunConfig, created: list):
    """
    Write the observation pool of a synthetic appearance world.

    Usage:
        msdoas features [synth] --out <path> [--config <path>] [options]

    Options:
        -o, --out <path>            Destination feature file.
        --config <path>             An Ion run configuration whose world section describes the world.
        --identities <int>          Number of people in the world.
        --separation <float>        Distance between identity cluster centers.
        --noise <float>             Expected distance between two observations of one person.
        --drift <float>             Per-frame appearance drift.
        --dimension <int>           Feature dimension n.
        --frames <int>              Number of frames in the pool.
        --dropout <float>           Probability that a person is unobserved in a frame.
    """
    world = config.world_config()
    out = config.require_path('out')
    pool = synth_pool(world)
    created.append(out)
    store_features(pool, out, world.dimension)
    logger.info('Wrote {} observations of {} identities to {}', len(pool), world.identities, out)
    return out, [], {'world': world}


def _load_pool(config: RunConfig):
    source = config.get_path('pool')
    if source is None or source.startswith(SYNTHETIC_PREFIX):
        return synth_pool(config.world_config()), []
    return load_features(source), [source]


def tracklets_command(config: RunConfig, created: list):
    """
    Generate a labelled tracklet set of one kind.

    Usage:
        msdoas tracklets --out <path> [--pool <pool>] [--split <half>] [--test-fraction <float>] [options]

    Options:
        -o, --out <path>            Destination tracklet file.
        -p, --pool <pool>           A feature file, or synthetic:world to sample the configured world.
        --split <half>              Sample from the train or test half of an identity-disjoint pool split.
        --test-fraction <float>     Share of identities in the test half.
        --kind <kind>               Tracklet kind, I to V.
        --M <int>                   Number of tracklets.
        --T <int>                   History length.
        --F <int>                   Maximum frame gap of a time step.
        --S <int>                   Maximum number of time steps.
        --N <int>                   Maximum number of intruders.
    """
    factory = config.factory_config()
    out = config.require_path('out')
    pool, inputs = _load_pool(config)
    half = config['grid'].get('split')
    if half is not None:
        if half not in ('train', 'test'):
            raise ConfigValidationError("split must be 'train' or 'test'")
        fraction = config.grid_config().test_fraction
        train_pool, test_pool = split_pool(pool, fraction, config.get_seed())
        pool = train_pool if half == 'train' else test_pool
    tracklets = generate_set(factory, pool)
    created.append(out)
    store_tracklets(tracklets, out, factory.T)
    return out, inputs, {'factory': factory, 'split': half}


def train_command(config: RunConfig, created: list):
    """
    Train an MS-DoAS model.

    Usage:
        msdoas train --tracklets <path> --out <path> [--losses <path>] [options]

    Options:
        -t, --tracklets <path>      Training tracklet file.
        -o, --out <path>            Destination model file.
        --losses <path>             Also write the per-iteration loss trace as CSV.
        --H <int>                   LSTM hidden size.
        --inputs <inputs>           What the LSTM reads, history or difference.
        --B <int>                   Batch size.
        --IT <int>                  Number of iterations.
        --lr <float>                Adagrad learning rate.
        --init-scale <float>        Half-width of the uniform weight initialization.
    """
    source = config.require_path('tracklets')
    out = config.require_path('out')
    tracklets = load_tracklets(source)
    if not tracklets:
        raise DimensionMismatchError(f'{source} holds no tracklets')
    train_cfg = config.train_config()
    model_cfg = config.model_config()
    T, n = tracklets[0].T, tracklets[0].detection.shape[0]
    for key, value in (('T', T), ('n', n)):
        if key in config['model'] and getattr(model_cfg, key) != value:
            raise DimensionMismatchError(f'model {key}={getattr(model_cfg, key)} does not match tracklets with '
                                         f'{key}={value}')
    model_cfg = model_cfg._replace(T=T, n=n)
    model = init_model(model_cfg, train_cfg.seed, train_cfg.init_scale)
    result = train(model, tracklets, train_cfg)
    created.append(out)
    save_model(result.model, out)
    losses = config.get_path('losses')
    if losses is not None:
        created.append(losses)
        with open(losses, 'w', encoding='utf-8') as fp:
            fp.write('iteration,loss\n')
            for iteration, loss in enumerate(result.losses):
                fp.write(f'{iteration},{loss:.9g}\n')
    if result.losses:
        logger.info('Trained {} iterations, final loss {:.6f}', len(result.losses), result.losses[-1])
    return out, [source], {'model': model_cfg, 'train': train_cfg}


def _eval_rows(report: EvalReport):
    return [{'criterion': 'max F1', **report.best_f1._asdict()},
            {'criterion': 'max A', **report.best_accuracy._asdict()}]


def eval_command(config: RunConfig, created: list):
    """
    Sweep the decision threshold of a scorer over a labelled test set.

    Usage:
        msdoas eval --test <path> --out <path> (--model <path> | --baseline) [--svg <path>]
                    [--calibrate <path>] [options]

    Options:
        -t, --test <path>           Test tracklet file.
        -o, --out <path>            Destination CSV report, one row per threshold.
        --svg <path>                Also draw the ROC curve as SVG.
        -m, --model <path>          A model written by the train subcommand.
        --baseline                  Evaluate the single-shot Euclidean baseline instead of a model.
        --calibrate <path>          Tracklets used to calibrate the baseline; the test set otherwise.
        --kind <kind>               Tracklet kind of the test set, shown in the report.
    """
    source = config.require_path('test')
    out = config.require_path('out')
    tracklets = load_tracklets(source)
    inputs = [source]
    if config.get_eval_option('baseline'):
        calibration = config.get_path('calibrate')
        if calibration is None:
            logger.warning('Calibrating the baseline on the evaluated set')
            scorer = EuclideanBaseline.calibrate(tracklets)
        else:
            inputs.append(calibration)
            scorer = EuclideanBaseline.calibrate(load_tracklets(calibration))
    else:
        model_path = config.require_path('model')
        inputs.append(model_path)
        scorer = load_model(model_path)
    kind = config.factory_config().kind if 'kind' in config['factory'] else None
    report = roc_sweep(scorer, tracklets, config.thresholds(), kind=kind)
    created.append(out)
    emit_report(report, out, 'csv')
    svg = config.get_path('svg')
    if svg is not None:
        created.append(svg)
        emit_report(report, svg, 'svg')
    print(render_table(_eval_rows(report)))
    return out, inputs, {'thresholds': config.thresholds(), 'svg': svg,
                         'scorer': 'baseline' if config.get_eval_option('baseline') else 'model'}


def grid_command(config: RunConfig, created: list):
    """
    Train one model per tracklet kind and evaluate each on the test set of every kind.

    Usage:
        msdoas grid --out <dir> [--pool <pool>] [--metric <metric>] [--test-size <int>] [--test-fraction <float>] [options]

    Options:
        -o, --out <dir>             Destination directory for models, ROC tables and the summary tables.
        -p, --pool <pool>           A feature file, or synthetic:world to sample the configured world.
        --metric <metric>           Summary printed to the console, f1 or accuracy.
        --test-size <int>           Size of every test set.
        --test-fraction <float>     Share of identities held out for testing.
        --M <int>                   Size of every training set.
        --T <int>                   History length.
        --F <int>                   Maximum frame gap of a time step.
        --S <int>                   Maximum number of time steps.
        --N <int>                   Maximum number of intruders.
        --H <int>                   LSTM hidden size.
        --inputs <inputs>           What the LSTM reads, history or difference.
        --IT <int>                  Training iterations per model.
    """
    out = config.require_path('out')
    metric = config.get_grid_metric()
    if metric not in ('f1', 'accuracy'):
        raise ConfigValidationError("grid metric must be 'f1' or 'accuracy'")
    pool, inputs = _load_pool(config)
    if not pool:
        raise DimensionMismatchError('The feature pool is empty')
    grid_cfg = config.grid_config()
    grid_cfg = grid_cfg._replace(model=grid_cfg.model._replace(n=pool[0].feature.shape[0], T=grid_cfg.factory.T))
    train_sets, test_sets = grid_sets(pool, grid_cfg)

    if not os.path.isdir(out):
        os.makedirs(out)
        created.append(out)
    grid = experiment_grid(train_sets, test_sets, grid_cfg)
    for i, (model, reports) in enumerate(zip(grid.models, grid.reports), start=1):
        model_path = os.path.join(out, f'model_{i}.ion')
        created.append(model_path)
        save_model(model, model_path)
        for j, report in enumerate(reports, start=1):
            report_path = os.path.join(out, f'roc_{i}_{j}.csv')
            created.append(report_path)
            emit_report(report, report_path, 'csv')
    for name in ('f1', 'accuracy'):
        table_path = os.path.join(out, f'grid_{name}.csv')
        created.append(table_path)
        write_report_csv(grid_table(grid, name), table_path)
    print(render_table(grid_table(grid, metric)))
    return os.path.join(out, 'grid'), inputs, {'grid': grid_cfg}


def track_command(config: RunConfig, created: list):
    """
    Track a detection sequence online.

    Usage:
        msdoas track --det <path> --features <features> --model <path> --out <path> [options]

    Options:
        -d, --det <path>                A MOTChallenge det.txt file.
        -f, --features <features>       A companion feature file, or synthetic:gt to draw features of the
                                        configured synthetic world from the detection id column.
        -m, --model <path>              A model written by the train subcommand.
        -o, --out <path>                Destination results file.
        --T <int>                       History length; defaults to the model's.
        --appearance-weight <float>     Weight of the appearance cost.
        --association-threshold <float>  Minimum MS-DoAS admitting a pair on appearance alone.
        --iou-gate <float>              Minimum IoU admitting a pair on motion alone.
        --max-age <int>                 Missed frames before a lost track is deleted.
        --confirm-hits <int>            Matches before a tentative track is confirmed.
        --confidence-floor <float>      Minimum detection confidence.
    """
    det = config.require_path('det')
    features = config.require_path('features')
    model_path = config.require_path('model')
    out = config.require_path('out')
    model = load_model(model_path)
    if 'T' not in config['tracker']:
        config['tracker']['T'] = model.config.T
    tracker_cfg = config.tracker_config()
    inputs = [det, model_path]
    if features.startswith(SYNTHETIC_PREFIX):
        source = SyntheticFeatureSource(config.world_config())
    else:
        source = FileFeatureSource(features)
        inputs.append(features)
    rows = run_sequence(det, source, model, tracker_cfg)
    created.append(out)
    write_results(rows, out)
    return out, inputs, {'tracker': tracker_cfg, 'features': features}


def _score_similarity(config: RunConfig):
    model_path = config.require_path('model')
    detection_path = config.require_path('detection')
    history_path = config.require_path('history')
    model = load_model(model_path)
    detections = load_features(detection_path)
    # Most recent first, at most T features.
    history = sorted(load_features(history_path), key=lambda o: o.meta.frame, reverse=True)[:model.config.T]
    scores = score_pairs(model, [d.feature for d in detections], [[o.feature for o in history]])
    for score in scores[0]:
        print(f'{score:.9g}')
    logger.info('Scored {} detections against a history of {} features', len(detections), len(history))
    return None, [model_path, detection_path, history_path], {}


def score_command(config: RunConfig, created: list):
    """
    Score tracking results with the CLEAR-MOT metrics, or print the MS-DoAS of detections against a history.

    Usage:
        msdoas score (--gt <path> --hyp <path>)... [--out <path>] [--iou <float>] [--keep-invisible] [options]
        msdoas score --model <path> --detection <path> --history <path> [options]

    Options:
        -g, --gt <path>             A MOTChallenge gt.txt file; repeat for several sequences.
        -y, --hyp <path>            The results file of the matching sequence.
        -o, --out <path>            Destination CSV report with one row per sequence and a global row.
        --iou <float>               IoU threshold of a match.
        --keep-invisible            Count ground truth entries flagged invisible.
        -m, --model <path>          A model written by the train subcommand.
        --detection <path>          A feature file; NZ_1 is printed for each of its records, one per line.
        --history <path>            A feature file holding the agent's history; the T latest frames are used.
    """
    if config.get_path('model') is not None:
        return _score_similarity(config)
    gt = config.get_paths('gt')
    hyp = config.get_paths('hyp')
    if not gt or len(gt) != len(hyp):
        raise ConfigValidationError('score needs one --hyp file per --gt file')
    report = mot_metrics.score(gt, hyp, config.metrics_config())
    print(render_table(report_rows(report, CONSOLE_FIELDS)))
    out = config.get_path('out')
    if out is not None:
        created.append(out)
        write_report_csv(report_rows(report, CSV_FIELDS), out)
    return out, [*gt, *hyp], {'metrics': config.metrics_config()}


_COMMAND_FUNCTIONS = {
    'features': features_command,
    'tracklets': tracklets_command,
    'train': train_command,
    'eval': eval_command,
    'grid': grid_command,
    'track': track_command,
    'score': score_command,
}

# Flag -> (section, key), per subcommand.
_FLAG_BINDINGS = {
    'features': {'--identities': ('world', 'identities'), '--separation': ('world', 'separation'),
                 '--noise': ('world', 'noise'), '--drift': ('world', 'drift'),
                 '--dimension': ('world', 'dimension'), '--frames': ('world', 'frames'),
                 '--dropout': ('world', 'dropout')},
    'tracklets': {'--kind': ('factory', 'kind'), '--M': ('factory', 'M'), '--T': ('factory', 'T'),
                  '--F': ('factory', 'F'), '--S': ('factory', 'S'), '--N': ('factory', 'N'),
                  '--split': ('grid', 'split'), '--test-fraction': ('grid', 'test_fraction')},
    'train': {'--H': ('model', 'H'), '--inputs': ('model', 'inputs'), '--B': ('train', 'batch_size'),
              '--IT': ('train', 'iterations'), '--lr': ('train', 'learning_rate'),
              '--init-scale': ('train', 'init_scale')},
    'eval': {'--baseline': ('eval', 'baseline'), '--kind': ('factory', 'kind')},
    'grid': {'--metric': ('grid', 'metric'), '--test-size': ('grid', 'test_size'),
             '--test-fraction': ('grid', 'test_fraction'), '--M': ('factory', 'M'), '--T': ('factory', 'T'),
             '--F': ('factory', 'F'), '--S': ('factory', 'S'), '--N': ('factory', 'N'), '--H': ('model', 'H'),
             '--inputs': ('model', 'inputs'), '--IT': ('train', 'iterations')},
    'track': {'--T': ('tracker', 'T'), '--appearance-weight': ('tracker', 'appearance_weight'),
              '--association-threshold': ('tracker', 'association_threshold'),
              '--iou-gate': ('tracker', 'iou_gate'), '--max-age': ('tracker', 'max_age'),
              '--confirm-hits': ('tracker', 'confirm_hits'),
              '--confidence-floor': ('tracker', 'confidence_floor')},
    'score': {'--iou': ('metrics', 'iou_threshold')},
}

_PATH_FLAGS = ('--out', '--pool', '--tracklets', '--test', '--svg', '--losses', '--model', '--calibrate', '--det',
               '--features', '--gt', '--hyp', '--detection', '--history')

_SECTIONS_USED = {
    'features': ('world',),
    'tracklets': ('world', 'factory'),
    'train': ('model', 'train'),
    'eval': ('factory',),
    'grid': ('world', 'factory', 'model', 'train'),
    'track': ('world', 'tracker'),
    'score': ('metrics',),
}


def _absolute(value):
    if isinstance(value, list):
        return [_absolute(v) for v in value]
    if value.startswith(SYNTHETIC_PREFIX):
        return value
    return os.path.abspath(value)


def parse_args(argv=None) -> RunConfig:
    """
    Resolve the command line into a RunConfig.

    Values from the --cfg file have lower precedence than flags. Flag paths are relative to the working
    directory; paths in the configuration file are relative to that file.
    """
    argv = sys.argv[1:] if argv is None else list(argv)
    top = docopt(__doc__, argv=argv, help=True, options_first=True, version=__version__)
    name = next(c for c in COMMANDS if top[c])
    command = _COMMAND_FUNCTIONS[name]
    args = docopt(command.__doc__ + _COMMON_OPTIONS, argv=argv, help=True)

    overrides = {'subcommand': name, 'paths': {}}
    for flag, (section, key) in _FLAG_BINDINGS[name].items():
        value = args.get(flag)
        if value is None or value is False:
            continue
        overrides.setdefault(section, {})[key] = value
    for flag in _PATH_FLAGS:
        value = args.get(flag)
        if value:
            overrides['paths'][flag[2:]] = _absolute(value)
    if args.get('--keep-invisible'):
        overrides.setdefault('metrics', {})['exclude_invisible'] = False
    if args.get('--seed') is not None:
        overrides['seed'] = args['--seed']
    if args.get('--verbose'):
        overrides['verbosity'] = 'debug'
    elif args.get('--quiet'):
        overrides['verbosity'] = 'warning'

    config = load_run_config(args.get('--cfg') or args.get('--config'), user_overrides=overrides)
    config.validate_sections(_SECTIONS_USED[name])
    return config


def configure_logging(config: RunConfig):
    logger.remove()
    logger.add(sys.stderr, level=config.get_log_level(),
               format='{time:HH:mm:ss} | {level: <7} | {name}: {message}')
    logger.enable('msdoas')


def _remove_outputs(created):
    for output in reversed(created):
        try:
            if os.path.isdir(output):
                os.rmdir(output)
            elif os.path.exists(output):
                os.remove(output)
        except OSError:
            logger.warning('Could not remove partial output {}', output)


def run(config: RunConfig) -> int:
    """Run the subcommand of ``config``, returning the process exit status."""
    command = _COMMAND_FUNCTIONS[config.get_subcommand()]
    created = []
    try:
        primary, inputs, parameters = command(config, created)
        if primary is not None:
            created.append(write_manifest(primary, config.get_subcommand(), inputs,
                                          [c for c in created if not os.path.isdir(c)],
                                          config.get_seed(), parameters))
    except MsdoasException as e:
        logger.error('{}: {}', type(e).__name__, e)
        _remove_outputs(created)
        return e.exit_code
    except OSError as e:
        logger.error('{}', e)
        _remove_outputs(created)
        return 2
    return 0


def main(argv=None):
    try:
        config = parse_args(argv)
    except MsdoasException as e:
        print(e, file=sys.stderr)
        sys.exit(e.exit_code)
    configure_logging(config)
    sys.exit(run(config))


if __name__ == '__main__':
    main()
