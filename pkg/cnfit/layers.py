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
Layer descriptions and the forward/backward math of every layer type.

Tensors are float64 numpy arrays. Every op accepts extra leading (batch)
axes in front of the per-sample shape it documents, so the same code
serves single samples and mini-batches. Convolution is cross-correlation
(the kernel is not flipped).
"""

import re

import numpy as np
from numpy.lib import stride_tricks

from cnfit import exceptions

CONV2D = 'conv'
ACTIVATION = 'activation'
POOL2D = 'pool'
DROPOUT = 'dropout'
FLATTEN = 'flatten'
DENSE = 'dense'

PADDING_MODES = ('valid', 'same')
POOL_MODES = ('max', 'mean')
ACTIVATIONS = ('relu', 'softmax')

TRAIN = 'train'
INFER = 'infer'


def as_tensor(value):
    return np.asarray(value, dtype=np.float64)


class LayerState(object):
    """Parameters of one layer plus what its forward pass left behind for
    the backward pass."""

    def __init__(self, params=None):
        self.params = params or {}
        self.cache = {}

    def require(self, *keys):
        missing = [k for k in keys if k not in self.cache]
        if missing:
            raise exceptions.ContractViolation(
                "backward called without forward cache (missing %s)"
                % ', '.join(missing))
        return [self.cache[k] for k in keys]


class LayerSpec(object):
    """Declarative description of a single layer."""
    kind = None
    param_names = ()

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def param_shapes(self):
        return {}

    def bind(self, input_shape):
        """Fill in sizes inferred from the incoming shape."""

    def to_text(self):
        raise NotImplementedError

    def __eq__(self, other):
        return (isinstance(other, self.__class__) and
                self.to_text() == other.to_text())

    def __ne__(self, other):
        return not self.__eq__(other)

    def __repr__(self):
        return "<%s %s>" % (self.__class__.__name__, self.to_text())


def _expect_rank(layer, input_shape, rank):
    if len(input_shape) != rank:
        raise exceptions.ShapeError(
            "%s expects a rank-%d input, got shape %s"
            % (layer.to_text(), rank, tuple(input_shape)),
            layer=layer.to_text(), shape=tuple(input_shape))


class Conv2d(LayerSpec):
    kind = CONV2D
    param_names = ('weight', 'bias')

    def __init__(self, out_channels, kernel_size, padding='valid', stride=1,
                 in_channels=None):
        if kernel_size < 1:
            raise exceptions.ConfigError("kernel_size must be >= 1")
        if stride < 1:
            raise exceptions.ConfigError("stride must be >= 1")
        if out_channels < 1:
            raise exceptions.ConfigError("out_channels must be >= 1")
        if padding not in PADDING_MODES:
            raise exceptions.ConfigError(
                "padding must be one of %s" % ', '.join(PADDING_MODES))
        self.out_channels = int(out_channels)
        self.kernel_size = int(kernel_size)
        self.padding = padding
        self.stride = int(stride)
        self.in_channels = in_channels

    def bind(self, input_shape):
        _expect_rank(self, input_shape, 3)
        if self.in_channels is None:
            self.in_channels = int(input_shape[0])
        elif self.in_channels != input_shape[0]:
            raise exceptions.ShapeError(
                "%s expects %d input channels, got shape %s"
                % (self.to_text(), self.in_channels, tuple(input_shape)),
                layer=self.to_text(), shape=tuple(input_shape))

    def output_shape(self, input_shape):
        _, h, w = input_shape
        before, after = pad_amounts(self.kernel_size, self.padding)
        out_h = (h + before + after - self.kernel_size) // self.stride + 1
        out_w = (w + before + after - self.kernel_size) // self.stride + 1
        return (self.out_channels, out_h, out_w)

    def param_shapes(self):
        k = self.kernel_size
        return {'weight': (self.out_channels, self.in_channels, k, k),
                'bias': (self.out_channels,)}

    def fans(self):
        k2 = self.kernel_size ** 2
        return self.in_channels * k2, self.out_channels * k2

    def to_text(self):
        text = 'conv(%d,%d,%s' % (self.out_channels, self.kernel_size,
                                  self.padding)
        if self.stride != 1:
            text += ',%d' % self.stride
        return text + ')'


class Activation(LayerSpec):
    kind = ACTIVATION

    def __init__(self, function):
        if function not in ACTIVATIONS:
            raise exceptions.ConfigError(
                "activation must be one of %s" % ', '.join(ACTIVATIONS))
        self.function = function

    def to_text(self):
        return self.function


class Pool2d(LayerSpec):
    kind = POOL2D

    def __init__(self, size, mode='max'):
        if size < 1:
            raise exceptions.ConfigError("pool window must be >= 1")
        if mode not in POOL_MODES:
            raise exceptions.ConfigError(
                "pool mode must be one of %s" % ', '.join(POOL_MODES))
        self.size = int(size)
        self.mode = mode

    def bind(self, input_shape):
        _expect_rank(self, input_shape, 3)

    def output_shape(self, input_shape):
        c, h, w = input_shape
        return (c, h // self.size, w // self.size)

    def to_text(self):
        return 'pool(%d,%s)' % (self.size, self.mode)


class Dropout(LayerSpec):
    kind = DROPOUT

    def __init__(self, p):
        check_drop_probability(p)
        self.p = float(p)

    def to_text(self):
        return 'dropout(%r)' % self.p


class Flatten(LayerSpec):
    kind = FLATTEN

    def bind(self, input_shape):
        _expect_rank(self, input_shape, 3)

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def to_text(self):
        return 'flatten'


class Dense(LayerSpec):
    kind = DENSE
    param_names = ('weight', 'bias')

    def __init__(self, out_units, in_units=None):
        if out_units < 1:
            raise exceptions.ConfigError("dense units must be >= 1")
        self.out_units = int(out_units)
        self.in_units = in_units

    def bind(self, input_shape):
        _expect_rank(self, input_shape, 1)
        if self.in_units is None:
            self.in_units = int(input_shape[0])
        elif self.in_units != input_shape[0]:
            raise exceptions.ShapeError(
                "%s expects %d inputs, got shape %s"
                % (self.to_text(), self.in_units, tuple(input_shape)),
                layer=self.to_text(), shape=tuple(input_shape))

    def output_shape(self, input_shape):
        return (self.out_units,)

    def param_shapes(self):
        return {'weight': (self.out_units, self.in_units),
                'bias': (self.out_units,)}

    def fans(self):
        return self.in_units, self.out_units

    def to_text(self):
        return 'dense(%d)' % self.out_units


_LAYER_RE = re.compile(r'^([a-z0-9_]+)\s*(?:\((.*)\))?$')


def _split_layer_list(text):
    items, depth, current = [], 0, []
    for ch in text:
        if ch == '(':
            depth += 1
        elif ch == ')':
            depth -= 1
        if ch == ',' and depth == 0:
            items.append(''.join(current).strip())
            current = []
        else:
            current.append(ch)
    tail = ''.join(current).strip()
    if tail or items:
        items.append(tail)
    return items


def _layer_arg(token, raw, variables, cast):
    raw = raw.strip()
    if raw.startswith('$'):
        name = raw[1:]
        if name not in variables:
            raise exceptions.ConfigError(
                "layer '%s' references undefined variable '$%s'"
                % (token, name), variable=name)
        raw = str(variables[name])
    try:
        return cast(raw)
    except ValueError:
        raise exceptions.ConfigError(
            "bad argument '%s' in layer '%s'" % (raw, token))


def _int_arg(raw):
    value = float(raw)
    if value != int(value):
        raise ValueError(raw)
    return int(value)


def parse_layer_list(text, variables=None):
    """Parse ``conv(32,3,same), relu, pool(2,max), ...`` into LayerSpecs.

    ``$name`` arguments are substituted from ``variables``.
    """
    variables = variables or {}
    layers = []
    for token in _split_layer_list(text):
        match = _LAYER_RE.match(token)
        if not match:
            raise exceptions.ConfigError("malformed layer '%s'" % token)
        name, argtext = match.groups()
        args = [] if not argtext else [a.strip() for a in argtext.split(',')]

        def get(i, cast, default=None):
            if i < len(args):
                return _layer_arg(token, args[i], variables, cast)
            if default is None:
                raise exceptions.ConfigError(
                    "layer '%s' is missing argument %d" % (token, i + 1))
            return default

        if name == 'conv':
            layers.append(Conv2d(get(0, _int_arg), get(1, _int_arg),
                                 padding=get(2, str, 'valid'),
                                 stride=get(3, _int_arg, 1)))
        elif name in ACTIVATIONS:
            layers.append(Activation(name))
        elif name == 'pool':
            layers.append(Pool2d(get(0, _int_arg), get(1, str, 'max')))
        elif name == 'dropout':
            layers.append(Dropout(get(0, float)))
        elif name == 'flatten':
            layers.append(Flatten())
        elif name == 'dense':
            layers.append(Dense(get(0, _int_arg)))
        else:
            raise exceptions.ConfigError("unknown layer type '%s'" % name)
    return layers


def format_layer_list(layers):
    return ', '.join(layer.to_text() for layer in layers)


class ModelSpec(object):
    """A network: input shape, ordered layers and the class count K.

    ``class_names`` and the input standardization (``input_mean``,
    ``input_std``) travel with the model so checkpoints can be evaluated
    on raw images.
    """

    def __init__(self, input_shape, layers, class_count, class_names=None,
                 input_mean=0.0, input_std=1.0):
        if len(input_shape) != 3 or min(input_shape) < 1:
            raise exceptions.ShapeError(
                "input shape must be (channels, height, width), got %s"
                % (tuple(input_shape),), shape=tuple(input_shape))
        if class_count < 1:
            raise exceptions.ConfigError("class count must be >= 1")
        self.input_shape = tuple(int(d) for d in input_shape)
        self.layers = list(layers)
        self.class_count = int(class_count)
        if class_names is not None and len(class_names) != class_count:
            raise exceptions.ConfigError(
                "%d class names given for %d classes"
                % (len(class_names), class_count))
        self.class_names = (list(class_names) if class_names is not None
                            else [str(k) for k in range(class_count)])
        self.input_mean = float(input_mean)
        self.input_std = float(input_std)

        final = infer_shapes(self)[-1][1]
        if int(np.prod(final)) != self.class_count:
            raise exceptions.ShapeError(
                "model output %s does not have %d elements"
                % (final, self.class_count), shape=final)

    def to_text(self):
        """Canonical text form, stable byte-for-byte for equal models."""
        lines = ['input = %s' % ','.join(str(d) for d in self.input_shape),
                 'classes = %d' % self.class_count,
                 'class_names = %s' % ','.join(self.class_names),
                 'normalize = %r,%r' % (self.input_mean, self.input_std),
                 'layers = %s' % format_layer_list(self.layers)]
        return '\n'.join(lines) + '\n'

    @classmethod
    def from_text(cls, text):
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, sep, value = line.partition('=')
            if not sep:
                raise exceptions.ConfigError(
                    "malformed model line '%s'" % line)
            values[key.strip()] = value.strip()
        try:
            mean, std = [float(v) for v in values['normalize'].split(',')]
            return cls([int(d) for d in values['input'].split(',')],
                       parse_layer_list(values['layers']),
                       int(values['classes']),
                       class_names=values['class_names'].split(','),
                       input_mean=mean, input_std=std)
        except (KeyError, ValueError) as e:
            raise exceptions.ConfigError("incomplete model text: %s" % e)

    def __eq__(self, other):
        return isinstance(other, ModelSpec) and \
            self.to_text() == other.to_text()

    def __ne__(self, other):
        return not self.__eq__(other)


def infer_shapes(model):
    """Return ``[(None, input_shape), (layer, output_shape), ...]``."""
    shape = model.input_shape
    chain = [(None, shape)]
    for index, layer in enumerate(model.layers):
        layer.bind(shape)
        shape = layer.output_shape(shape)
        if min(shape) < 1:
            raise exceptions.ShapeError(
                "layer %d (%s) produces non-positive shape %s"
                % (index, layer.to_text(), shape),
                layer=layer.to_text(), index=index, shape=shape)
        chain.append((layer, shape))
    return chain


def count_params(model):
    """Return (per-layer parameter counts, total)."""
    infer_shapes(model)
    counts = []
    for layer in model.layers:
        if layer.kind == CONV2D:
            k2 = layer.kernel_size ** 2
            counts.append(layer.out_channels * (layer.in_channels * k2 + 1))
        elif layer.kind == DENSE:
            counts.append(layer.out_units * (layer.in_units + 1))
        else:
            counts.append(0)
    return counts, sum(counts)


def check_drop_probability(p):
    if not 0.0 <= p < 1.0:
        raise exceptions.ConfigError(
            "dropout probability must be in [0, 1), got %r" % (p,), p=p)


def pad_amounts(kernel_size, padding):
    if padding == 'valid':
        return 0, 0
    total = kernel_size - 1
    return total // 2, total - total // 2


def conv2d_forward(input, weights, bias, stride=1, padding='valid',
                   state=None):
    """Cross-correlate ``input[..., C_in, H, W]`` with
    ``weights[C_out, C_in, k, k]`` and add the per-channel bias."""
    x = as_tensor(input)
    weights = as_tensor(weights)
    bias = as_tensor(bias)
    c_out, c_in, k, _ = weights.shape
    if x.ndim < 3 or x.shape[-3] != c_in:
        raise exceptions.ShapeError(
            "input shape %s does not match weights shape %s"
            % (x.shape, weights.shape),
            input_shape=x.shape, weights_shape=weights.shape)
    if bias.shape != (c_out,):
        raise exceptions.ShapeError(
            "bias shape %s does not match weights shape %s"
            % (bias.shape, weights.shape))
    before, after = pad_amounts(k, padding)
    if before or after:
        pad_width = [(0, 0)] * (x.ndim - 2) + [(before, after)] * 2
        x = np.pad(x, pad_width)
    if x.shape[-2] < k or x.shape[-1] < k:
        raise exceptions.ShapeError(
            "input shape %s is smaller than the %dx%d kernel"
            % (np.shape(input), k, k), input_shape=np.shape(input))
    windows = stride_tricks.sliding_window_view(x, (k, k), axis=(-2, -1))
    windows = windows[..., ::stride, ::stride, :, :]
    out = np.tensordot(windows, weights, axes=([-5, -2, -1], [1, 2, 3]))
    out = np.moveaxis(out, -1, -3) + bias[:, None, None]
    if state is not None:
        state.cache.update(windows=windows, padded_shape=x.shape,
                           input_shape=np.shape(input), weights=weights,
                           stride=stride, pad=(before, after),
                           output_shape=out.shape)
    return out


def conv2d_backward(grad_out, state):
    windows, weights, stride, pad, out_shape, padded_shape, in_shape = \
        state.require('windows', 'weights', 'stride', 'pad',
                      'output_shape', 'padded_shape', 'input_shape')
    g = as_tensor(grad_out)
    if g.shape != out_shape:
        raise exceptions.ShapeError(
            "gradient shape %s does not match forward output %s"
            % (g.shape, out_shape))
    c_out, c_in, k, _ = weights.shape
    out_h, out_w = g.shape[-2:]

    flat_g = g.reshape((-1, c_out, out_h, out_w))
    flat_windows = windows.reshape((-1, c_in, out_h, out_w, k, k))
    grad_w = np.tensordot(flat_g, flat_windows, axes=([0, 2, 3], [0, 2, 3]))
    grad_b = flat_g.sum(axis=(0, 2, 3))

    grad_padded = np.zeros(padded_shape)
    rows_end = stride * (out_h - 1) + 1
    cols_end = stride * (out_w - 1) + 1
    for i in range(k):
        for j in range(k):
            contrib = np.tensordot(g, weights[:, :, i, j], axes=([-3], [0]))
            grad_padded[..., i:i + rows_end:stride,
                        j:j + cols_end:stride] += np.moveaxis(contrib, -1, -3)
    before, _ = pad
    h, w = in_shape[-2:]
    grad_in = grad_padded[..., before:before + h, before:before + w]
    return np.ascontiguousarray(grad_in), grad_w, grad_b


def _pool_windows(x, size):
    h, w = x.shape[-2:]
    out_h, out_w = h // size, w // size
    if out_h < 1 or out_w < 1:
        raise exceptions.ShapeError(
            "pool window %d does not fit input shape %s" % (size, x.shape),
            input_shape=x.shape)
    lead = x.shape[:-2]
    blocks = x[..., :out_h * size, :out_w * size]
    blocks = blocks.reshape(lead + (out_h, size, out_w, size))
    blocks = np.swapaxes(blocks, -3, -2)
    return blocks.reshape(lead + (out_h, out_w, size * size))


def pool2d_forward(input, size, mode='max', state=None):
    """Downsample ``input[..., C, H, W]`` by non-overlapping ``size``
    windows; partial windows at the bottom/right edge are dropped."""
    if size < 1:
        raise exceptions.ConfigError("pool window must be >= 1")
    if mode not in POOL_MODES:
        raise exceptions.ConfigError("unknown pool mode '%s'" % mode)
    x = as_tensor(input)
    flat = _pool_windows(x, size)
    if mode == 'max':
        # argmax picks the first maximum in row-major window order
        argmax = np.argmax(flat, axis=-1)
        out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    else:
        argmax = None
        out = flat.sum(axis=-1) / float(size * size)
    if state is not None:
        state.cache.update(input_shape=x.shape, size=size, mode=mode,
                           argmax=argmax, output_shape=out.shape)
    return out


def pool2d_backward(grad_out, state):
    in_shape, size, mode, argmax, out_shape = state.require(
        'input_shape', 'size', 'mode', 'argmax', 'output_shape')
    g = as_tensor(grad_out)
    if g.shape != out_shape:
        raise exceptions.ShapeError(
            "gradient shape %s does not match forward output %s"
            % (g.shape, out_shape))
    if mode == 'max':
        grad_flat = np.zeros(g.shape + (size * size,))
        np.put_along_axis(grad_flat, argmax[..., None], g[..., None],
                          axis=-1)
    else:
        grad_flat = np.repeat(g[..., None] / float(size * size),
                              size * size, axis=-1)
    lead = in_shape[:-2]
    out_h, out_w = g.shape[-2:]
    blocks = grad_flat.reshape(lead + (out_h, out_w, size, size))
    blocks = np.swapaxes(blocks, -3, -2)
    grad_in = np.zeros(in_shape)
    grad_in[..., :out_h * size, :out_w * size] = blocks.reshape(
        lead + (out_h * size, out_w * size))
    return grad_in


def relu(input, state=None):
    x = as_tensor(input)
    if state is not None:
        state.cache['input'] = x
    return np.maximum(x, 0.0)


def relu_backward(grad_out, state):
    x, = state.require('input')
    # subgradient at exactly 0 is 0
    return as_tensor(grad_out) * (x > 0.0)


def flatten_forward(input, state=None):
    x = as_tensor(input)
    if x.ndim < 3:
        raise exceptions.ShapeError(
            "flatten expects (..., C, H, W), got %s" % (x.shape,))
    if state is not None:
        state.cache['input_shape'] = x.shape
    return x.reshape(x.shape[:-3] + (-1,))


def unflatten(vector, shape):
    """Inverse of flatten_forward: ``vector[..., C*H*W] -> [..., C, H, W]``.
    """
    v = as_tensor(vector)
    return v.reshape(v.shape[:-1] + tuple(shape))


def flatten_backward(grad_out, state):
    in_shape, = state.require('input_shape')
    return as_tensor(grad_out).reshape(in_shape)


def flatten_index(i, x, y, c_side):
    """The vectorization index formula exactly as printed:
    j = i * C**2 + (y - 1) * C + x.

    It mixes a 1-based row with an unshifted column and channel, so it is
    kept for reference only; flatten_forward uses the 0-based row-major
    layout ``i*H*W + y*W + x``.
    """
    return i * c_side ** 2 + (y - 1) * c_side + x


def dense_forward(input, weights, bias, state=None):
    x = as_tensor(input)
    weights = as_tensor(weights)
    bias = as_tensor(bias)
    m, n = weights.shape
    if x.shape[-1:] != (n,) or bias.shape != (m,):
        raise exceptions.ShapeError(
            "input shape %s does not match weights shape %s"
            % (x.shape, weights.shape),
            input_shape=x.shape, weights_shape=weights.shape)
    if state is not None:
        state.cache.update(input=x, weights=weights)
    return x.dot(weights.T) + bias


def dense_backward(grad_out, state):
    x, weights = state.require('input', 'weights')
    g = as_tensor(grad_out)
    m, n = weights.shape
    flat_g = g.reshape((-1, m))
    grad_w = flat_g.T.dot(x.reshape((-1, n)))
    return g.dot(weights), grad_w, flat_g.sum(axis=0)


def dropout_forward(input, p, rng=None, phase=INFER, state=None):
    """Inverted dropout: in the train phase each element is zeroed with
    probability ``p`` and survivors are scaled by 1/(1-p), so the infer
    phase is the identity."""
    check_drop_probability(p)
    x = as_tensor(input)
    mask = None
    if phase == TRAIN and p > 0.0:
        if rng is None:
            raise exceptions.ContractViolation(
                "train-phase dropout needs a random generator")
        mask = (rng.random(x.shape) >= p) / (1.0 - p)
    if state is not None:
        state.cache['mask'] = mask
    return x if mask is None else x * mask


def dropout_backward(grad_out, state):
    mask, = state.require('mask')
    g = as_tensor(grad_out)
    return g if mask is None else g * mask


def softmax(logits, state=None):
    z = as_tensor(logits)
    shifted = np.exp(z - z.max(axis=-1, keepdims=True))
    probs = shifted / shifted.sum(axis=-1, keepdims=True)
    if state is not None:
        state.cache['probs'] = probs
    return probs


def softmax_backward(grad_out, state):
    probs, = state.require('probs')
    g = as_tensor(grad_out)
    return probs * (g - (g * probs).sum(axis=-1, keepdims=True))
