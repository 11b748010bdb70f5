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
Mini-batch iteration and parameter update rules.

Parameters and gradients may be a single array or any nesting of lists
and dicts of arrays (the network uses a list of dicts). Updates return new
arrays and leave their inputs untouched.
"""

import numpy as np

from cnfit import exceptions

SGD = 'sgd'
ADAM = 'adam'
OPTIMIZERS = (SGD, ADAM)


class Batch(object):

    def __init__(self, inputs, labels, indices=None):
        if len(inputs) < 1 or len(inputs) != len(labels):
            raise exceptions.ShapeError(
                "batch has %d inputs and %d labels"
                % (len(inputs), len(labels)))
        self.inputs = inputs
        self.labels = labels
        self.indices = indices

    def __len__(self):
        return len(self.labels)


def batch_iterator(dataset, batch_size, rng, shuffle=True):
    """Yield one epoch of Batches over ``dataset = (inputs, labels)``.

    The order is a fresh permutation drawn from ``rng``; the last batch may
    be short.
    """
    if batch_size < 1:
        raise exceptions.ConfigError("batch_size must be >= 1")
    inputs, labels = dataset
    n = len(labels)
    if n == 0:
        raise exceptions.DataError("cannot iterate over an empty dataset")
    order = rng.permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield Batch(inputs[idx], labels[idx], indices=idx)


def _tree_map(func, tree, *others):
    if isinstance(tree, dict):
        for other in others:
            if not isinstance(other, dict) or set(other) != set(tree):
                raise exceptions.ShapeError("parameter groups do not match")
        return dict((k, _tree_map(func, tree[k], *[o[k] for o in others]))
                    for k in tree)
    if isinstance(tree, (list, tuple)):
        for other in others:
            if len(other) != len(tree):
                raise exceptions.ShapeError(
                    "%d parameter groups vs %d" % (len(tree), len(other)))
        return [_tree_map(func, t, *[o[i] for o in others])
                for i, t in enumerate(tree)]
    leaves = [np.asarray(tree, dtype=np.float64)]
    leaves.extend(np.asarray(o, dtype=np.float64) for o in others)
    for leaf in leaves[1:]:
        if leaf.shape != leaves[0].shape:
            raise exceptions.ShapeError(
                "shape %s does not match %s"
                % (leaf.shape, leaves[0].shape),
                shapes=(leaves[0].shape, leaf.shape))
    return func(*leaves)


def zeros_like(tree):
    return _tree_map(np.zeros_like, tree)


def sgd_step(params, grads, alpha):
    """theta <- theta - alpha * grad."""
    if alpha < 0:
        raise exceptions.ConfigError("learning rate must be >= 0")
    return _tree_map(lambda p, g: p - alpha * g, params, grads)


class SgdState(object):
    kind = SGD

    def __init__(self, alpha, step_count=0):
        if alpha < 0:
            raise exceptions.ConfigError("learning rate must be >= 0")
        self.alpha = float(alpha)
        self.step_count = int(step_count)

    def apply(self, params, grads):
        return (sgd_step(params, grads, self.alpha),
                SgdState(self.alpha, self.step_count + 1))


class AdamState(object):
    """Moment estimates and hyperparameters of Adam."""
    kind = ADAM

    def __init__(self, m, v, step_count=0, alpha=0.001, beta1=0.9,
                 beta2=0.999, epsilon=1e-8):
        if alpha < 0:
            raise exceptions.ConfigError("learning rate must be >= 0")
        for name, beta in (('beta1', beta1), ('beta2', beta2)):
            if not 0.0 <= beta < 1.0:
                raise exceptions.ConfigError(
                    "%s must be in [0, 1), got %r" % (name, beta),
                    field=name)
        if epsilon <= 0:
            raise exceptions.ConfigError("epsilon must be > 0")
        self.m = m
        self.v = v
        self.step_count = int(step_count)
        self.alpha = float(alpha)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)

    @classmethod
    def create(cls, params, alpha=0.001, beta1=0.9, beta2=0.999,
               epsilon=1e-8):
        return cls(zeros_like(params), zeros_like(params), 0, alpha, beta1,
                   beta2, epsilon)

    def apply(self, params, grads):
        return adam_step(params, grads, self)


def adam_step(params, grads, state):
    """One bias-corrected Adam update.

    The second moment averages the squared gradient g*g.
    """
    i = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    m = _tree_map(lambda m, g: b1 * m + (1.0 - b1) * g, state.m, grads)
    v = _tree_map(lambda v, g: b2 * v + (1.0 - b2) * g * g, state.v, grads)
    c1 = 1.0 - b1 ** i
    c2 = 1.0 - b2 ** i
    alpha, eps = state.alpha, state.epsilon

    def update(p, m, v):
        return p - alpha * (m / c1) / (np.sqrt(v / c2) + eps)

    new_params = _tree_map(update, params, m, v)
    return new_params, AdamState(m, v, i, alpha, b1, b2, eps)
