# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

"""Multi-shot appearance similarity scoring, tracklet synthesis and online multi-object tracking."""

from loguru import logger

__version__ = '0.1.0'

__all__ = [
    'assignment',
    'classifier_eval',
    'cli',
    'config',
    'core',
    'embedding',
    'exceptions',
    'model',
    'mot_metrics',
    'report',
    'scenarios',
    'serialization',
    'tracker',
    'tracklet_factory',
]

# Library code stays silent unless the application opts in with logger.enable("msdoas").
logger.disable(__name__)
