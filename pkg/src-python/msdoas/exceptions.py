# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

"""Exceptions for msdoas.

Every exception carries the process exit status the command line tool reports for it.
"""


class MsdoasException(Exception):
    """Root exception for msdoas."""
    exit_code = 2


class DataFormatError(MsdoasException):
    """Indicates a malformed line in a feature, tracklet, detection or ground truth file."""

    def __init__(self, message, path=None, line_number=None):
        self.path = path
        self.line_number = line_number
        location = ''
        if path is not None:
            location += f'{path}:'
        if line_number is not None:
            location += f'{line_number}:'
        super().__init__(f'{location} {message}' if location else message)


class DimensionMismatchError(MsdoasException, ValueError):
    """Indicates feature vectors whose dimension disagrees with the configured one."""


class UnknownIdentityError(MsdoasException, ValueError):
    """Indicates a synthetic identity outside the configured identity range."""


class EmptyHistoryError(MsdoasException, ValueError):
    """Indicates an empty identity or feature history."""


class ShapePlanError(MsdoasException, ValueError):
    """Indicates an input shape the VGG11 layer plan cannot accept."""


class PoolDiversityError(MsdoasException):
    """Indicates an observation pool that cannot produce the requested tracklet kind."""


class UnsatisfiableConfigError(MsdoasException):
    """Indicates that tracklet sampling gave up after its attempt budget."""


class ModelFormatError(MsdoasException):
    """Indicates a model file with an unexpected format, version or tensor shape."""


class MetricsError(MsdoasException, ValueError):
    """Indicates a tracking metric that is undefined for the given input."""


class ConfigValidationError(MsdoasException, ValueError):
    """Indicates a parameter outside the range its module accepts."""
    exit_code = 1


class NumericalError(MsdoasException, ArithmeticError):
    """Indicates a non-finite value during training."""
    exit_code = 3

    def __init__(self, message, iteration=None, batch_id=None):
        self.iteration = iteration
        self.batch_id = batch_id
        super().__init__(f'{message} (iteration={iteration}, batch={batch_id})')


class NonFiniteValueError(MsdoasException, ValueError):
    """Indicates a NaN or infinite coordinate in a feature vector."""


class EmptyBatchError(MsdoasException, ValueError):
    """Indicates an empty training or evaluation batch."""


class MixedFrameError(MsdoasException, ValueError):
    """Indicates detections from several frames, or frames out of order, in one tracker step."""
