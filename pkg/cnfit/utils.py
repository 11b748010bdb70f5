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

import os

import prettytable
import six

from cnfit import exceptions


def arg(*args, **kwargs):
    """Decorator for CLI args."""
    def _decorator(func):
        add_arg(func, *args, **kwargs)
        return func
    return _decorator


def env(*vars, **kwargs):
    """
    returns the first environment variable set
    if none are non-empty, defaults to '' or keyword arg default
    """
    for v in vars:
        value = os.environ.get(v, None)
        if value:
            return value
    return kwargs.get('default', '')


def add_arg(f, *args, **kwargs):
    """Bind CLI arguments to a `do_foo` command function."""

    if not hasattr(f, 'arguments'):
        f.arguments = []

    # NOTE(sirp): avoid dups that can occur when the module is shared across
    # tests.
    if (args, kwargs) not in f.arguments:
        # Because of the sematics of decorator composition if we just append
        # to the options list positional options will appear to be backwards.
        f.arguments.insert(0, (args, kwargs))


def thread_count():
    """Worker threads allowed by env[CNF_THREADS]; 0 means run inline."""
    value = env('CNF_THREADS', default='0')
    try:
        threads = int(value)
    except ValueError:
        raise exceptions.ConfigError(
            "CNF_THREADS must be an integer, got '%s'" % value)
    if threads < 0:
        raise exceptions.ConfigError("CNF_THREADS must be >= 0")
    return threads


def pretty_choice_list(l):
    return ', '.join("'%s'" % i for i in l)


def print_list(objs, fields, formatters=None, sortby=None):
    formatters = formatters or {}
    pt = prettytable.PrettyTable([f for f in fields])
    pt.align = 'l'

    for o in objs:
        row = []
        for field in fields:
            if field in formatters:
                row.append(formatters[field](o))
            else:
                field_name = field.lower().replace(' ', '_')
                data = getattr(o, field_name, '')
                row.append(data)
        pt.add_row(row)

    if sortby is not None:
        print(pt.get_string(sortby=sortby))
    else:
        print(pt.get_string())


def print_dict(d, property="Property"):
    pt = prettytable.PrettyTable([property, 'Value'])
    pt.align = 'l'
    for k, v in six.iteritems(d):
        pt.add_row([k, v])
    print(pt.get_string(sortby=property))


def format_float(value, digits=9):
    """Render a float with ``digits`` significant digits."""
    return '%.*g' % (digits, value)


class HookableMixin(object):
    """Mixin so objects can register and run hooks."""

    def add_hook(self, hook_type, hook_func):
        hooks_map = self.__dict__.setdefault('_hooks_map', {})
        hooks_map.setdefault(hook_type, []).append(hook_func)

    def run_hooks(self, hook_type, *args, **kwargs):
        hook_funcs = self.__dict__.get('_hooks_map', {}).get(hook_type) or []
        for hook_func in hook_funcs:
            hook_func(*args, **kwargs)
