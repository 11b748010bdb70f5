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
Whole-network forward and backward passes over a ModelSpec.

Parameters are a list aligned with ``model.layers``; each entry is a
dict of tensors (``weight``, ``bias``) for parametric layers and an
empty dict otherwise.
"""

import math

import numpy as np

from cnfit import exceptions
from cnfit import layers


def init_params(model, rng):
    """Glorot-uniform weights on +/-sqrt(6/(fan_in+fan_out)), zero biases.
    """
    params = []
    for layer in model.layers:
        if not layer.param_names:
            params.append({})
            continue
        fan_in, fan_out = layer.fans()
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        shapes = layer.param_shapes()
        params.append({
            'weight': rng.uniform(-limit, limit, size=shapes['weight']),
            'bias': np.zeros(shapes['bias']),
        })
    return params


def copy_params(params):
    return [dict((k, v.copy()) for k, v in p.items()) for p in params]


def iter_params(params):
    """Yield ``("<layer>.<name>", tensor)`` in canonical order."""
    for index, p in enumerate(params):
        for name in sorted(p):
            yield '%d.%s' % (index, name), p[name]


def check_params(model, params):
    if len(params) != len(model.layers):
        raise exceptions.ShapeError(
            "%d parameter groups for %d layers"
            % (len(params), len(model.layers)))
    for index, (layer, p) in enumerate(zip(model.layers, params)):
        expected = layer.param_shapes()
        actual = dict((k, tuple(v.shape)) for k, v in p.items())
        if expected != actual:
            raise exceptions.ShapeError(
                "layer %d (%s) parameters %s, expected %s"
                % (index, layer.to_text(), actual, expected), index=index)


def penalized_weights(model):
    """The tensors the regularizer applies to: dense-layer weights."""
    return [(index, 'weight') for index, layer in enumerate(model.layers)
            if layer.kind == layers.DENSE]


def outputs_probabilities(model):
    last = model.layers[-1] if model.layers else None
    return (last is not None and last.kind == layers.ACTIVATION and
            last.function == 'softmax')


def logits_stop(model):
    """Index of the layer where training stops the forward pass; the
    trailing softmax is fused into the loss gradient."""
    if outputs_probabilities(model):
        return len(model.layers) - 1
    return len(model.layers)


def _forward_layer(layer, x, p, phase, rng, state):
    if layer.kind == layers.CONV2D:
        return layers.conv2d_forward(x, p['weight'], p['bias'],
                                     stride=layer.stride,
                                     padding=layer.padding, state=state)
    if layer.kind == layers.ACTIVATION:
        if layer.function == 'relu':
            return layers.relu(x, state=state)
        return layers.softmax(x, state=state)
    if layer.kind == layers.POOL2D:
        return layers.pool2d_forward(x, layer.size, layer.mode, state=state)
    if layer.kind == layers.DROPOUT:
        return layers.dropout_forward(x, layer.p, rng=rng, phase=phase,
                                      state=state)
    if layer.kind == layers.FLATTEN:
        return layers.flatten_forward(x, state=state)
    return layers.dense_forward(x, p['weight'], p['bias'], state=state)


def _backward_layer(layer, grad, state):
    if layer.kind == layers.CONV2D:
        grad_in, grad_w, grad_b = layers.conv2d_backward(grad, state)
        return grad_in, {'weight': grad_w, 'bias': grad_b}
    if layer.kind == layers.DENSE:
        grad_in, grad_w, grad_b = layers.dense_backward(grad, state)
        return grad_in, {'weight': grad_w, 'bias': grad_b}
    if layer.kind == layers.ACTIVATION:
        if layer.function == 'relu':
            return layers.relu_backward(grad, state), {}
        return layers.softmax_backward(grad, state), {}
    if layer.kind == layers.POOL2D:
        return layers.pool2d_backward(grad, state), {}
    if layer.kind == layers.DROPOUT:
        return layers.dropout_backward(grad, state), {}
    return layers.flatten_backward(grad, state), {}


def forward(model, params, x, phase=layers.INFER, rng=None, stop=None):
    """Run ``x[..., C, H, W]`` through the first ``stop`` layers.

    Returns the output and one LayerState per executed layer.
    """
    x = layers.as_tensor(x)
    if x.shape[-3:] != model.input_shape:
        raise exceptions.ShapeError(
            "input shape %s does not match model input %s"
            % (x.shape, model.input_shape), shape=x.shape)
    stop = len(model.layers) if stop is None else stop
    states = []
    out = x
    for layer, p in zip(model.layers[:stop], params[:stop]):
        state = layers.LayerState(p)
        out = _forward_layer(layer, out, p, phase, rng, state)
        states.append(state)
    return out, states


def backward(model, states, grad):
    """Backpropagate ``grad`` through the layers recorded in ``states``.

    Returns per-layer gradient dicts aligned with ``model.layers`` (layers
    that were not executed get empty dicts) and the input gradient.
    """
    grads = [{} for _ in model.layers]
    for index in reversed(range(len(states))):
        grad, grads[index] = _backward_layer(model.layers[index], grad,
                                             states[index])
    return grads, grad


def predict_proba(model, params, x):
    """Infer-phase class probabilities, shape ``(..., K)``."""
    out, _ = forward(model, params, x, phase=layers.INFER)
    out = out.reshape(out.shape[:out.ndim - len(_final_shape(model))] +
                      (model.class_count,))
    if not outputs_probabilities(model):
        out = layers.softmax(out)
    return out


def _final_shape(model):
    return layers.infer_shapes(model)[-1][1]
