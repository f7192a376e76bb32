# Copyright Amazon.com, Inc. or its affiliates. All Rights Reserved.
# SPDX-License-Identifier: Apache-2.0

"""Declarative run configuration."""

import os
from os import path
from typing import List, Optional, Sequence

from amazon.ion.exceptions import IonException

from msdoas.classifier_eval import DEFAULT_THRESHOLDS, GridConfig
from msdoas.embedding import SyntheticWorldConfig
from msdoas.exceptions import ConfigValidationError
from msdoas.model import ModelConfig, TrainConfig
from msdoas.mot_metrics import MetricsConfig
from msdoas.serialization import load_ion_text
from msdoas.tracker import TrackerConfig
from msdoas.tracklet_factory import FactoryConfig, TrackletKind

SECTIONS = {
    'world': SyntheticWorldConfig,
    'factory': FactoryConfig,
    'model': ModelConfig,
    'train': TrainConfig,
    'tracker': TrackerConfig,
    'metrics': MetricsConfig,
    'eval': None,
    'grid': None,
    'paths': None,
}

_SECTION_KEYS = {
    'eval': {'thresholds', 'baseline'},
    'grid': {'test_size', 'test_fraction', 'metric', 'split'},
}

# Global defaults; per module defaults come from the module configs themselves.
_tool_defaults = {
    'seed': 0,
    'verbosity': 'info',
    'eval': {'thresholds': list(DEFAULT_THRESHOLDS), 'baseline': False},
    'grid': {'test_size': 1000, 'test_fraction': 0.5, 'metric': 'f1'},
}

VERBOSITY_LEVELS = {'debug': 'DEBUG', 'info': 'INFO', 'warning': 'WARNING', 'quiet': 'WARNING'}
# Marks a path binding served by the synthetic world instead of a file.
SYNTHETIC_PREFIX = 'synthetic:'


def _merge_section(name, *layers):
    merged = {}
    for layer in layers:
        value = (layer or {}).get(name)
        if value is None:
            continue
        if not isinstance(value, dict):
            raise ConfigValidationError(f'Section {name!r} must be a struct, got {value!r}')
        merged.update({k: v for k, v in value.items() if v is not None})
    return merged


def _coerce(section, key, value, default):
    """Converts ``value`` to the type of ``default``; command line values arrive as strings."""
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() not in ('true', 'false'):
                    raise ValueError(value)
                return value.lower() == 'true'
            return bool(value)
        if isinstance(default, TrackletKind):
            if isinstance(value, str) and not value.isdigit():
                return TrackletKind[value.upper()]
            return TrackletKind(int(value))
        if isinstance(default, int) or (default is None and isinstance(value, str) and value.lstrip('-').isdigit()):
            number = float(value)
            if not number.is_integer():
                raise ValueError(value)
            return int(number)
        if isinstance(default, float) or (default is None and isinstance(value, str)):
            return float(value)
        if isinstance(default, str):
            return str(value)
    except (KeyError, ValueError, TypeError):
        raise ConfigValidationError(f'{section} parameter {key} must be of type '
                                    f'{type(default).__name__ if default is not None else "number"}, got {value!r}')
    return value


class RunConfig(dict):
    """
    Describes the configuration of one command line run.

    Run configuration files are a single Ion struct with one nested struct per module and a few global
    fields, for example::

        {
          seed: 7,
          world: {identities: 8, separation: 5.0, dimension: 128},
          factory: {kind: III, M: 2000, T: 5, F: 5, S: 2},
          train: {iterations: 2000, batch_size: 32},
          paths: {pool: "features.txt"},
        }

    Global fields:
     * `seed` – the seed every module block inherits unless it sets its own
     * `verbosity` – one of `debug`, `info` or `warning`
     * `subcommand` – the command line subcommand being run

    Sections `world`, `factory`, `model`, `train`, `tracker` and `metrics` accept the fields of the
    matching module config; `eval` accepts `thresholds` and `baseline`; `grid` accepts
    `test_size`, `test_fraction` and `metric`; `paths` binds names to files, relative paths being relative
    to the configuration file.
    """
    _working_directory = None

    def __init__(self, params: dict = None, user_overrides: dict = None, user_defaults: dict = None,
                 working_directory=None):
        """
        Construct a new RunConfig from file values, possibly incorporating user supplied defaults or overrides.

        :param params: Values from the configuration file.
        :param user_overrides: Values that override all other values, typically command line flags.
        :param user_defaults: Values that override the tool defaults, but not the `params`.
        :param working_directory: reference point for relative paths. Defaults to os.getcwd().
        """
        params = params or {}
        user_overrides = user_overrides or {}
        user_defaults = user_defaults or {}
        self._working_directory = working_directory or os.getcwd()

        layers = (_tool_defaults, user_defaults, params, user_overrides)
        merged = {}
        for layer in layers:
            merged.update({k: v for k, v in layer.items() if k not in SECTIONS and v is not None})
        unknown = sorted(k for k in merged if k not in ('seed', 'verbosity', 'subcommand'))
        if unknown:
            raise ConfigValidationError(f'Unknown configuration field(s): {", ".join(unknown)}')
        for name in SECTIONS:
            merged[name] = _merge_section(name, *layers)
        super().__init__(merged)

        self['seed'] = _coerce('global', 'seed', self['seed'], 0)
        if str(self['verbosity']).lower() not in VERBOSITY_LEVELS:
            raise ConfigValidationError(f'verbosity must be one of {", ".join(VERBOSITY_LEVELS)}')
        for name, config_type in SECTIONS.items():
            allowed = set(config_type._fields) if config_type is not None else _SECTION_KEYS.get(name)
            if allowed is None:
                continue
            extra = sorted(set(self[name]) - allowed)
            if extra:
                raise ConfigValidationError(f'Unknown parameter(s) in section {name!r}: {", ".join(extra)}')

    def __missing__(self, key):
        # Instead of raising a KeyError like a usual dict, just return None.
        return None

    def _section_config(self, name):
        config_type = SECTIONS[name]
        values = dict(self[name])
        if 'seed' in config_type._fields:
            values.setdefault('seed', self['seed'])
        defaults = config_type._field_defaults
        typed = {k: _coerce(name, k, v, defaults.get(k)) for k, v in values.items()}
        return config_type(**typed).validate()

    def validate_sections(self, names: Sequence[str]):
        """Builds and validates the module configs of ``names``."""
        for name in names:
            self._section_config(name)

    def get_seed(self) -> int:
        return self['seed']

    def get_log_level(self) -> str:
        return VERBOSITY_LEVELS[str(self['verbosity']).lower()]

    def get_subcommand(self) -> Optional[str]:
        return self['subcommand']

    def world_config(self) -> SyntheticWorldConfig:
        return self._section_config('world')

    def factory_config(self) -> FactoryConfig:
        return self._section_config('factory')

    def model_config(self) -> ModelConfig:
        return self._section_config('model')

    def train_config(self) -> TrainConfig:
        return self._section_config('train')

    def tracker_config(self) -> TrackerConfig:
        return self._section_config('tracker')

    def metrics_config(self) -> MetricsConfig:
        return self._section_config('metrics')

    def thresholds(self):
        return [_coerce('eval', 'thresholds', th, 0.0) for th in self['eval']['thresholds']]

    def get_eval_option(self, key):
        return self['eval'].get(key)

    def grid_config(self) -> GridConfig:
        grid = self['grid']
        return GridConfig(factory=self.factory_config(),
                          test_size=_coerce('grid', 'test_size', grid['test_size'], 0),
                          test_fraction=_coerce('grid', 'test_fraction', grid['test_fraction'], 0.0),
                          model=self.model_config(),
                          train=self.train_config(),
                          thresholds=self.thresholds(),
                          seed=self['seed'])

    def get_grid_metric(self) -> str:
        return self['grid']['metric']

    def _resolve(self, value) -> str:
        value = str(value)
        if path.isabs(value) or value.startswith(SYNTHETIC_PREFIX):
            return value
        return path.join(self._working_directory, value)

    def get_path(self, key: str) -> Optional[str]:
        """
        Get a path from the `paths` section, appending it to the working directory if it is a relative path.
        """
        value = self['paths'].get(key)
        if value is None:
            return None
        if isinstance(value, list):
            raise ConfigValidationError(f'Path {key!r} takes a single file')
        return self._resolve(value)

    def get_paths(self, key: str) -> List[str]:
        """A path binding that may hold several files."""
        value = self['paths'].get(key)
        if value is None:
            return []
        if not isinstance(value, list):
            value = [value]
        return [self._resolve(v) for v in value]

    def require_path(self, key: str) -> str:
        value = self.get_path(key)
        if value is None:
            raise ConfigValidationError(f'Missing required path {key!r} for subcommand {self.get_subcommand()!r}')
        return value


def load_run_config(source, user_overrides: dict = None, user_defaults: dict = None) -> RunConfig:
    """Builds a RunConfig from an Ion text file (or inline Ion text) and command line overrides."""
    params = {}
    working_directory = None
    if source is not None:
        try:
            params = load_ion_text(source)
        except (IonException, ValueError) as e:
            raise ConfigValidationError(f'Cannot read the run configuration {source!r}: {e}')
        if not isinstance(params, dict):
            raise ConfigValidationError(f'A run configuration must be an Ion struct, got {type(params).__name__}')
        if path.exists(source):
            working_directory = path.dirname(path.abspath(source))
    return RunConfig(params, user_overrides, user_defaults, working_directory)
