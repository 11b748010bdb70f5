# Copyright 2026 The cnfit Authors
#
#    Licensed under the Apache License, Version 2.0 (the "License"); you may
#    not use this file except in compliance with the License. You may obtain
#    a copy of the License at
#
#         http://www.apache.org/licenses/LICENSE-2.0
#
#    Unless required by applicable law or agreed to in writing, software
#    distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
#    WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
#    License for the specific language governing permissions and limitations
#    under the License.

"""
Run configuration files.

The format is a small INI dialect::

    # comment
    [section]
    key = value
        continued value   (indented lines extend the previous value)

Sections are ``data``, ``model``, ``train``, ``tune`` and ``output``.
Besides its fixed keys, ``[model]`` accepts any key referenced as
``$key`` from the layer list, and ``[tune]`` accepts one search-space
dimension per key named after a ``[train]`` key or a model variable.
"""

import collections
import copy
import functools
import logging

from cnfit import dataset
from cnfit import exceptions
from cnfit import layers
from cnfit import losses
from cnfit import optim
from cnfit import training
from cnfit import tuning

EXPLICIT = 'explicit'
STACKED = 'stacked'
TEMPLATES = (EXPLICIT, STACKED)

# section -> key -> (type, default)
SCHEMA = collections.OrderedDict([
    ('data', collections.OrderedDict([
        ('manifest', ('str', '')),
        ('train_manifest', ('str', '')),
        ('val_manifest', ('str', '')),
        ('stats', ('str', '')),
        ('class_names', ('list', '')),
        ('side', ('int', '32')),
        ('train_fraction', ('float', '0.8')),
        ('stratified', ('bool', 'true')),
        ('normalize', ('bool', 'true')),
        ('seed', ('int', '0')),
        ('multiplier', ('int', '0')),
        ('hflip', ('bool', 'false')),
        ('vflip', ('bool', 'false')),
        ('crop', ('bool', 'false')),
        ('crop_range', ('pair', '0.8,1.0')),
        ('stretch', ('bool', 'false')),
        ('scale_range', ('pair', '0.9,1.1')),
        ('shear', ('bool', 'false')),
        ('shear_range', ('pair', '-10.0,10.0')),
    ])),
    ('model', collections.OrderedDict([
        ('template', ('str', EXPLICIT)),
        ('layers', ('str', '')),
        ('conv_layers', ('int', '2')),
        ('conv_kernels', ('int', '32')),
        ('kernel_size', ('int', '3')),
        ('dense_layers', ('int', '1')),
        ('dense_units', ('int', '64')),
        ('dropout', ('float', '0.0')),
    ])),
    ('train', collections.OrderedDict([
        ('epochs_max', ('int', '60')),
        ('batch_size', ('int', '32')),
        ('optimizer', ('str', optim.ADAM)),
        ('learning_rate', ('float', '0.001')),
        ('beta1', ('float', '0.9')),
        ('beta2', ('float', '0.999')),
        ('epsilon', ('float', '1e-08')),
        ('lambda_l1', ('float', '0.0')),
        ('lambda_l2', ('float', '0.0')),
        ('epsilon_l1', ('float', '1e-08')),
        ('dropout', ('optfloat', '')),
        ('early_stopping', ('bool', 'true')),
        ('patience', ('int', '5')),
        ('min_delta', ('float', '0.0')),
        ('seed', ('int', '0')),
        ('shuffle', ('bool', 'true')),
    ])),
    ('tune', collections.OrderedDict([
        ('budget', ('optint', '')),
        ('init', ('optint', '')),
        ('epochs', ('int', '3')),
        ('seed', ('int', '0')),
        ('kernel', ('str', 'matern52')),
    ])),
    ('output', collections.OrderedDict([
        ('directory', ('str', 'run')),
    ])),
])

# [model] keys only the stacked template reads.
STACKED_KEYS = ('conv_layers', 'conv_kernels', 'kernel_size',
                'dense_layers', 'dense_units', 'dropout')

_TRUE = ('true', 'yes', 'on', '1')
_FALSE = ('false', 'no', 'off', '0')

logger = logging.getLogger(__name__)


def _convert(section, key, kind, raw):
    raw = raw.strip()
    try:
        if kind == 'int':
            return int(raw)
        if kind == 'float':
            return float(raw)
        if kind in ('optint', 'optfloat'):
            if not raw:
                return None
            return int(raw) if kind == 'optint' else float(raw)
        if kind == 'bool':
            if raw.lower() in _TRUE:
                return True
            if raw.lower() in _FALSE:
                return False
            raise ValueError(raw)
        if kind == 'list':
            return [v.strip() for v in raw.split(',')] if raw else []
        if kind == 'pair':
            lo, hi = [float(v) for v in raw.split(',')]
            return lo, hi
        return raw
    except ValueError:
        raise exceptions.ConfigError(
            "[%s] %s: cannot read '%s' as %s" % (section, key, raw, kind),
            section=section, key=key)


class RunConfig(object):
    """Raw ``key = value`` text per section with typed accessors."""

    def __init__(self, sections=None):
        self.sections = collections.OrderedDict(
            (name, collections.OrderedDict()) for name in SCHEMA)
        for name, values in (sections or {}).items():
            for key, value in values.items():
                self.set(name, key, value)

    def copy(self):
        return copy.deepcopy(self)

    def raw(self, section, key, default=None):
        return self.sections[section].get(key, default)

    def set(self, section, key, value):
        if section not in self.sections:
            raise exceptions.ConfigError(
                "unknown section [%s]; valid sections: %s"
                % (section, ', '.join(SCHEMA)), section=section)
        if isinstance(value, bool):
            value = 'true' if value else 'false'
        elif isinstance(value, float):
            value = repr(value)
        self.sections[section][key] = str(value)

    def get(self, section, key):
        kind, default = SCHEMA[section].get(key, ('str', None))
        raw = self.sections[section].get(key, default)
        if raw is None:
            raise exceptions.ConfigError(
                "[%s] %s is not set" % (section, key), section=section,
                key=key)
        return _convert(section, key, kind, raw)

    def model_variables(self):
        return dict((k, v) for k, v in self.sections['model'].items()
                    if k not in ('template', 'layers'))

    def validate(self):
        """Reject keys that no section knows about."""
        for section, values in self.sections.items():
            valid = list(SCHEMA[section])
            if section == 'model':
                valid += self._placeholders()
            for key in values:
                if section == 'tune' and key not in SCHEMA['tune']:
                    self._check_dimension(key)
                    continue
                if key not in valid:
                    raise exceptions.ConfigError(
                        "unknown key '%s' in [%s]; valid keys: %s"
                        % (key, section, ', '.join(valid)),
                        section=section, key=key)
        return self

    def _placeholders(self):
        text = self.sections['model'].get('layers', '')
        names = []
        for token in text.replace('(', ',').replace(')', ',').split(','):
            token = token.strip()
            if token.startswith('$'):
                names.append(token[1:])
        return names

    def tunable_keys(self):
        keys = [k for k in SCHEMA['train'] if k != 'seed']
        if self.get('model', 'template') == STACKED:
            keys += list(STACKED_KEYS)
        return keys + [k for k in self._placeholders() if k not in keys]

    def _check_dimension(self, key):
        valid = self.tunable_keys()
        if key not in valid:
            raise exceptions.ConfigError(
                "[tune] dimension '%s' matches no [train] key or model "
                "variable; valid names: %s" % (key, ', '.join(valid)),
                section='tune', key=key)

    def train_config(self):
        g = functools.partial(self.get, 'train')
        return training.TrainConfig(
            epochs_max=g('epochs_max'), batch_size=g('batch_size'),
            optimizer=g('optimizer'), learning_rate=g('learning_rate'),
            beta1=g('beta1'), beta2=g('beta2'), epsilon=g('epsilon'),
            reg=losses.RegConfig(g('lambda_l1'), g('lambda_l2'),
                                 g('epsilon_l1')),
            dropout=g('dropout'),
            early_stopping=training.EarlyStoppingConfig(
                g('early_stopping'), g('patience'), g('min_delta')),
            seed=g('seed'), shuffle=g('shuffle'))

    def augment_config(self):
        g = functools.partial(self.get, 'data')
        return dataset.AugmentConfig(
            hflip=g('hflip'), vflip=g('vflip'), crop=g('crop'),
            crop_range=g('crop_range'), stretch=g('stretch'),
            scale_range=g('scale_range'), shear=g('shear'),
            shear_range=g('shear_range'), multiplier=g('multiplier'))

    def layer_specs(self, class_count):
        template = self.get('model', 'template')
        if template == STACKED:
            g = functools.partial(self.get, 'model')
            return stacked_layers(g('conv_layers'), g('conv_kernels'),
                                  g('kernel_size'), g('dense_layers'),
                                  g('dense_units'), g('dropout'),
                                  class_count)
        if template != EXPLICIT:
            raise exceptions.ConfigError(
                "[model] template must be one of %s, got '%s'"
                % (', '.join(TEMPLATES), template), section='model',
                key='template')
        text = self.get('model', 'layers')
        if not text:
            raise exceptions.ConfigError("[model] layers is empty",
                                         section='model', key='layers')
        return layers.parse_layer_list(text, self.model_variables())

    def model_spec(self, input_shape, class_count, class_names=None,
                   input_mean=0.0, input_std=1.0):
        return layers.ModelSpec(input_shape, self.layer_specs(class_count),
                                class_count, class_names=class_names,
                                input_mean=input_mean, input_std=input_std)

    def search_space(self):
        dims = [(k, v) for k, v in self.sections['tune'].items()
                if k not in SCHEMA['tune']]
        if not dims:
            raise exceptions.ConfigError("[tune] defines no dimensions",
                                         section='tune')
        for key, _ in dims:
            self._check_dimension(key)
        return tuning.SearchSpace.parse(dims)

    def apply_trial(self, trial_config):
        """A copy with tuned values written into [train] or [model]."""
        applied = self.copy()
        for key, value in trial_config.items():
            section = 'train' if key in SCHEMA['train'] else 'model'
            applied.set(section, key, tuning.format_value(value))
        return applied


def stacked_layers(conv_layers, conv_kernels, kernel_size, dense_layers,
                   dense_units, dropout, class_count):
    """conv/relu/pool blocks (the first conv keeps the size), then
    dense/relu/dropout blocks and a softmax classifier."""
    specs = []
    for i in range(conv_layers):
        specs += [layers.Conv2d(conv_kernels, kernel_size,
                                padding='same' if i == 0 else 'valid'),
                  layers.Activation('relu'), layers.Pool2d(2)]
    specs.append(layers.Flatten())
    for _ in range(dense_layers):
        specs += [layers.Dense(dense_units), layers.Activation('relu'),
                  layers.Dropout(dropout)]
    specs += [layers.Dense(class_count), layers.Activation('softmax')]
    return specs


def parse_config(text):
    """Parse run-config text; duplicate keys keep the last value."""
    cfg = RunConfig()
    section = None
    last = None
    for number, line in enumerate(text.splitlines(), 1):
        content = line.split('#', 1)[0].rstrip()
        if not content.strip():
            continue
        if content[0] in ' \t' and last is not None:
            cfg.sections[section][last] += ' ' + content.strip()
            continue
        content = content.strip()
        if content.startswith('['):
            if not content.endswith(']'):
                raise exceptions.ConfigError(
                    "line %d: malformed section header '%s'"
                    % (number, content), line=number)
            section = content[1:-1].strip()
            if section not in SCHEMA:
                raise exceptions.ConfigError(
                    "line %d: unknown section [%s]; valid sections: %s"
                    % (number, section, ', '.join(SCHEMA)), line=number,
                    section=section)
            last = None
            continue
        key, sep, value = content.partition('=')
        key = key.strip()
        if not sep or not key:
            raise exceptions.ConfigError(
                "line %d: expected 'key = value', got '%s'"
                % (number, content), line=number)
        if section is None:
            raise exceptions.ConfigError(
                "line %d: '%s' appears before any [section]"
                % (number, key), line=number, key=key)
        if key in cfg.sections[section]:
            logger.warning("line %d: [%s] %s set again; the last value "
                           "wins", number, section, key)
        cfg.sections[section][key] = value.strip()
        last = key
    try:
        return cfg.validate()
    except exceptions.ConfigError as e:
        raise exceptions.ConfigError(
            "%s%s" % (_location(text, e), e), **e.details)


def _location(text, error):
    section = getattr(error, 'section', None)
    key = getattr(error, 'key', None)
    if section is None or key is None:
        return ''
    current = None
    for number, line in enumerate(text.splitlines(), 1):
        content = line.split('#', 1)[0].strip()
        if content.startswith('[') and content.endswith(']'):
            current = content[1:-1].strip()
        elif current == section and content.partition('=')[0].strip() == key:
            error.details['line'] = number
            return 'line %d: ' % number
    return ''


def load_config(path):
    with open(path, encoding='utf-8') as f:
        return parse_config(f.read())


def format_config(cfg):
    """Render ``cfg`` in the dialect ``parse_config`` reads."""
    chunks = []
    for section, values in cfg.sections.items():
        if not values:
            continue
        lines = ['[%s]' % section]
        lines.extend('%s = %s' % (k, v) for k, v in values.items())
        chunks.append('\n'.join(lines) + '\n')
    return '\n'.join(chunks)
