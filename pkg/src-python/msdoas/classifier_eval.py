# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

"""Binary classifier evaluation of appearance similarity scorers on tracklet test sets."""

import csv
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from loguru import logger

from msdoas.exceptions import ConfigValidationError, DimensionMismatchError, EmptyBatchError
from msdoas.model import ModelConfig, MsdoasModel, TrainConfig, init_model, train
from msdoas.tracklet_factory import FactoryConfig, TrackletKind, generate_set, split_pool

# 0.00, 0.05, ..., 1.00
DEFAULT_THRESHOLDS = tuple(round(0.05 * k, 2) for k in range(21))
CSV_HEADER = ('th', 'TPR', 'FPR', 'PPV', 'F1', 'A')


class ConfusionCounts(NamedTuple):
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


class Rates(NamedTuple):
    tpr: float
    fpr: float
    ppv: float
    f1: float
    accuracy: float


class RocPoint(NamedTuple):
    threshold: float
    tpr: float
    fpr: float
    ppv: float
    f1: float
    accuracy: float


class EvalReport(NamedTuple):
    """The outcome of a threshold sweep.

    Args:
        points (List[RocPoint]): One point per threshold, thresholds strictly increasing.
        best_f1 (RocPoint): The point of maximum F1; ties go to the smaller threshold.
        best_accuracy (RocPoint): The point of maximum accuracy; ties go to the smaller threshold.
        sample_count (int): The number of scored tracklets.
        kind (Optional[TrackletKind]): The kind of the evaluated set, if known.
    """
    points: List[RocPoint]
    best_f1: RocPoint
    best_accuracy: RocPoint
    sample_count: int
    kind: Optional[TrackletKind] = None


def _ratio(numerator, denominator):
    return numerator / denominator if denominator else 0.0


def confusion(scores, labels, th: float) -> ConfusionCounts:
    """Tallies predictions against labels; a score of at least ``th`` predicts a positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DimensionMismatchError(f'{scores.shape[0]} scores for {labels.shape[0]} labels')
    predicted = scores >= th
    actual = labels == 1
    return ConfusionCounts(tp=int(np.sum(predicted & actual)), tn=int(np.sum(~predicted & ~actual)),
                           fp=int(np.sum(predicted & ~actual)), fn=int(np.sum(~predicted & actual)))


def rates(c: ConfusionCounts) -> Rates:
    """TPR, FPR, PPV, F1 and accuracy; any ratio with a zero denominator is 0."""
    tpr = _ratio(c.tp, c.tp + c.fn)
    fpr = _ratio(c.fp, c.fp + c.tn)
    ppv = _ratio(c.tp, c.tp + c.fp)
    f1 = _ratio(2 * ppv * tpr, ppv + tpr)
    return Rates(tpr, fpr, ppv, f1, _ratio(c.tp + c.tn, c.total))


def _check_thresholds(thresholds):
    thresholds = [float(th) for th in thresholds]
    if not thresholds:
        raise ConfigValidationError('threshold grid must not be empty')
    if any(not 0.0 <= th <= 1.0 for th in thresholds):
        raise ConfigValidationError('thresholds must satisfy 0 <= th <= 1')
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ConfigValidationError('thresholds must be strictly increasing')
    return thresholds


def _best(points, key):
    best = points[0]
    for point in points[1:]:
        if key(point) > key(best):
            best = point
    return best


def sweep_scores(scores, labels, thresholds=DEFAULT_THRESHOLDS, kind=None) -> EvalReport:
    """Builds the ROC report of precomputed scores."""
    thresholds = _check_thresholds(thresholds)
    if not len(scores):
        raise EmptyBatchError('Cannot evaluate an empty test set')
    points = [RocPoint(th, *rates(confusion(scores, labels, th))) for th in thresholds]
    return EvalReport(points, _best(points, lambda p: p.f1), _best(points, lambda p: p.accuracy), len(scores),
                      None if kind is None else TrackletKind(kind))


def roc_sweep(scorer, test_set: Sequence, thresholds=DEFAULT_THRESHOLDS, kind=None) -> EvalReport:
    """Scores ``test_set`` once and evaluates every threshold.

    Args:
        scorer: An :class:`~msdoas.model.MsdoasModel` or any object with ``score_tracklets``, such as
            :class:`~msdoas.embedding.EuclideanBaseline`.
        test_set (Sequence[FeatureTracklet]): The labelled test tracklets.
        thresholds (Sequence[float]): Strictly increasing thresholds in ``[0, 1]``.
        kind (Optional[TrackletKind]): The kind of the test set, carried into the report.

    Raises:
        EmptyBatchError: If ``test_set`` is empty.
    """
    thresholds = _check_thresholds(thresholds)
    if not len(test_set):
        raise EmptyBatchError('Cannot evaluate an empty test set')
    scores = scorer.score_tracklets(test_set)
    labels = [t.label for t in test_set]
    return sweep_scores(scores, labels, thresholds, kind)


class GridConfig(NamedTuple):
    """Parameters of the experiment grid.

    Args:
        factory (FactoryConfig): Base tracklet parameters; ``kind`` and ``seed`` are set per set.
        test_size (int): The size M of every test set.
        test_fraction (float): Share of identities held out for the test pool.
        model (ModelConfig): Dimensions of the five trained models.
        train (TrainConfig): Training parameters; ``seed`` is set per model.
        thresholds (Sequence[float]): The sweep grid.
        seed (int): The global seed from which every per-set and per-model seed is derived.
    """
    factory: FactoryConfig = FactoryConfig()
    test_size: int = 1000
    test_fraction: float = 0.5
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS
    seed: int = 0


class ExperimentGrid(NamedTuple):
    """``reports[i][j]`` evaluates the model trained on kind ``i + 1`` on the test set of kind ``j + 1``."""
    reports: List[List[EvalReport]]
    models: List[MsdoasModel]


def derive_seed(seed: int, *path: int) -> int:
    """A reproducible child seed of ``seed``."""
    return int(np.random.SeedSequence([seed, *path]).generate_state(1)[0])


def grid_sets(pool, cfg: GridConfig):
    """Generates the five training sets and five test sets from identity-disjoint halves of ``pool``."""
    train_pool, test_pool = split_pool(pool, cfg.test_fraction, derive_seed(cfg.seed, 0))
    train_sets, test_sets = [], []
    for kind in TrackletKind:
        base = cfg.factory._replace(kind=kind)
        train_sets.append(generate_set(base._replace(seed=derive_seed(cfg.seed, 1, kind)), train_pool))
        test_sets.append(generate_set(base._replace(M=cfg.test_size, seed=derive_seed(cfg.seed, 2, kind)),
                                      test_pool))
    return train_sets, test_sets


def experiment_grid(train_sets: Sequence[Sequence], test_sets: Sequence[Sequence], cfg: GridConfig) -> ExperimentGrid:
    """Trains one model per training set and evaluates each on every test set."""
    if len(train_sets) != len(test_sets):
        raise DimensionMismatchError(f'{len(train_sets)} training sets for {len(test_sets)} test sets')
    reports, models = [], []
    for i, train_set in enumerate(train_sets):
        model_seed = derive_seed(cfg.seed, 3, i)
        initial = init_model(cfg.model, model_seed, cfg.train.init_scale)
        model = train(initial, train_set, cfg.train._replace(seed=model_seed)).model
        models.append(model)
        row = [roc_sweep(model, test_set, cfg.thresholds, kind=TrackletKind(j + 1) if j < len(TrackletKind) else None)
               for j, test_set in enumerate(test_sets)]
        reports.append(row)
        logger.info('Exp.MS-DoAS.{}: max A on the test sets {}', i + 1,
                    ', '.join(f'{r.best_accuracy.accuracy:.4f}' for r in row))
    return ExperimentGrid(reports, models)


def grid_table(grid: ExperimentGrid, metric: str = 'f1') -> List[dict]:
    """Rows of ``value% (th=...)`` cells, one row per trained model and one column per test set."""
    if metric not in ('f1', 'accuracy'):
        raise ConfigValidationError("grid metric must be 'f1' or 'accuracy'")
    rows = []
    for i, reports in enumerate(grid.reports):
        row = {'model': f'Exp.MS-DoAS.{i + 1}'}
        for j, report in enumerate(reports):
            best = report.best_f1 if metric == 'f1' else report.best_accuracy
            row[f'TS{j + 1}'] = f'{getattr(best, metric) * 100:.2f}% (th={best.threshold:.2f})'
        rows.append(row)
    return rows


def _write_csv(report: EvalReport, path):
    with open(path, 'w', newline='', encoding='utf-8') as fp:
        writer = csv.writer(fp, lineterminator='\n')
        writer.writerow(CSV_HEADER)
        for point in report.points:
            writer.writerow([f'{value:.6f}' for value in point])


def _write_svg(report: EvalReport, path):
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({'svg.hashsalt': 'msdoas', 'svg.fonttype': 'none'}):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        fpr = [p.fpr for p in report.points]
        tpr = [p.tpr for p in report.points]
        ax.plot([0, 1], [0, 1], linestyle='--', color='grey', linewidth=0.8)
        ax.plot(fpr, tpr, marker='.', color='tab:blue')
        best = report.best_f1
        ax.plot([best.fpr], [best.tpr], 'o', color='tab:red')
        ax.annotate(f'th={best.threshold:.2f}', (best.fpr, best.tpr), textcoords='offset points', xytext=(6, -12))
        ax.set_xlim(0.0, 1.0)
        ax.set_ylim(0.0, 1.0)
        ax.set_xlabel('FPR')
        ax.set_ylabel('TPR')
        title = 'ROC' if report.kind is None else f'ROC, test set {report.kind.name}'
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format='svg', metadata={'Date': None})
        plt.close(fig)


def emit_report(report: EvalReport, path, fmt: str = 'csv'):
    """Writes ``report`` as a ``th,TPR,FPR,PPV,F1,A`` CSV table or as an SVG ROC curve."""
    if fmt == 'csv':
        _write_csv(report, path)
    elif fmt == 'svg':
        _write_svg(report, path)
    else:
        raise ConfigValidationError(f"report format must be 'csv' or 'svg', got {fmt!r}")
    logger.info('Wrote {} report {}', fmt, path)


def load_report_csv(path) -> List[RocPoint]:
    """Reads the points of a CSV report."""
    with open(path, 'r', newline='', encoding='utf-8') as fp:
        reader = csv.reader(fp)
        next(reader)
        return [RocPoint(*(float(v) for v in row)) for row in reader if row]
