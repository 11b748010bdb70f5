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
Binary checkpoint format.

All integers and floats are little-endian::

    magic "CNF1" | u16 version
    text model spec                 (u32 byte length + UTF-8)
    u32 epoch | text config digest | text generator state (JSON)
    u32 tensor count, then per tensor: text name, u8 rank,
        u32 extent per axis, f64 payload
    text optimizer kind | u64 step count | f64 alpha, beta1, beta2, epsilon
    u32 moment tensor count, then the first and second moment tensors
    u32 CRC32 of every preceding byte
"""

import logging
import struct
import zlib

import numpy as np
import simplejson as json

from cnfit import exceptions
from cnfit import layers
from cnfit import network
from cnfit import optim

MAGIC = b'CNF1'
FORMAT_VERSION = 1
MAX_RANK = 4

logger = logging.getLogger(__name__)


class Checkpoint(object):
    """Everything needed to resume or evaluate a training run."""

    def __init__(self, model, params, optimizer_state, epoch, rng_state,
                 config_digest):
        self.model = model
        self.params = params
        self.optimizer_state = optimizer_state
        self.epoch = int(epoch)
        self.rng_state = rng_state
        self.config_digest = config_digest

    def __repr__(self):
        return "<Checkpoint epoch=%d digest=%s>" % (self.epoch,
                                                    self.config_digest)


class _Writer(object):

    def __init__(self):
        self.buf = bytearray()

    def pack(self, fmt, *values):
        self.buf += struct.pack('<' + fmt, *values)

    def text(self, value):
        data = value.encode('utf-8')
        self.pack('I', len(data))
        self.buf += data

    def tensor(self, name, value):
        value = np.ascontiguousarray(value, dtype='<f8')
        self.text(name)
        self.pack('B', value.ndim)
        for extent in value.shape:
            self.pack('I', extent)
        self.buf += value.tobytes()


class _Reader(object):

    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, size):
        if self.offset + size > len(self.data):
            raise exceptions.CheckpointCorrupted(
                "checkpoint ends at byte %d, %d more bytes expected"
                % (len(self.data), self.offset + size - len(self.data)),
                offset=self.offset)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt):
        fmt = '<' + fmt
        values = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return values if len(values) > 1 else values[0]

    def text(self):
        try:
            return self.take(self.unpack('I')).decode('utf-8')
        except UnicodeDecodeError:
            raise exceptions.CheckpointCorrupted(
                "invalid UTF-8 text before byte %d" % self.offset,
                offset=self.offset)

    def tensor(self):
        name = self.text()
        rank = self.unpack('B')
        if rank > MAX_RANK:
            raise exceptions.CheckpointCorrupted(
                "tensor '%s' has rank %d (at most %d supported)"
                % (name, rank, MAX_RANK), offset=self.offset - 1)
        shape = tuple(self.unpack('I') for _ in range(rank))
        count = 1
        for extent in shape:
            count *= extent
        payload = self.take(8 * count)
        value = np.frombuffer(payload, dtype='<f8').astype(np.float64)
        return name, value.reshape(shape)


def _group(named, layer_count):
    groups = [{} for _ in range(layer_count)]
    for name, value in named:
        index, _, key = name.partition('.')
        try:
            groups[int(index)][key] = value
        except (ValueError, IndexError):
            raise exceptions.CheckpointCorrupted(
                "unexpected tensor name '%s'" % name)
    return groups


def dumps(ckpt):
    w = _Writer()
    w.buf += MAGIC
    w.pack('H', FORMAT_VERSION)
    w.text(ckpt.model.to_text())
    w.pack('I', ckpt.epoch)
    w.text(ckpt.config_digest)
    w.text(json.dumps(ckpt.rng_state, sort_keys=True))

    named = list(network.iter_params(ckpt.params))
    w.pack('I', len(named))
    for name, value in named:
        w.tensor(name, value)

    state = ckpt.optimizer_state
    w.text(state.kind)
    w.pack('Q', state.step_count)
    if state.kind == optim.ADAM:
        w.pack('dddd', state.alpha, state.beta1, state.beta2, state.epsilon)
        moments = list(network.iter_params(state.m))
        w.pack('I', len(moments))
        for (name, m), (_, v) in zip(moments,
                                     network.iter_params(state.v)):
            w.tensor(name, m)
            w.tensor(name, v)
    else:
        w.pack('dddd', state.alpha, 0.0, 0.0, 0.0)
        w.pack('I', 0)
    w.pack('I', zlib.crc32(bytes(w.buf)) & 0xffffffff)
    return bytes(w.buf)


def loads(data):
    if data[:4] != MAGIC:
        raise exceptions.BadMagic(
            "bad magic %r, expected %r" % (bytes(data[:4]), MAGIC))
    if len(data) < 10:
        raise exceptions.CheckpointCorrupted(
            "checkpoint is only %d bytes long" % len(data))
    version = struct.unpack('<H', data[4:6])[0]
    if version != FORMAT_VERSION:
        raise exceptions.UnsupportedVersion(
            "checkpoint format version %d is not supported (expected %d)"
            % (version, FORMAT_VERSION), version=version)
    expected = struct.unpack('<I', data[-4:])[0]
    actual = zlib.crc32(bytes(data[:-4])) & 0xffffffff
    if expected != actual:
        raise exceptions.ChecksumMismatch(
            "checksum %08x does not match stored %08x" % (actual, expected))

    r = _Reader(data[:-4])
    r.offset = 6
    try:
        return _parse(r)
    except exceptions.CheckpointError:
        raise
    except (exceptions.CnfitException, ValueError, TypeError,
            OverflowError, struct.error) as e:
        raise exceptions.CheckpointCorrupted(
            "undecodable checkpoint near byte %d: %s" % (r.offset, e),
            offset=r.offset)


def _parse(r):
    model = layers.ModelSpec.from_text(r.text())
    epoch = r.unpack('I')
    digest = r.text()
    rng_state = json.loads(r.text())

    count = r.unpack('I')
    params = _group([r.tensor() for _ in range(count)], len(model.layers))

    kind = r.text()
    step_count = r.unpack('Q')
    alpha, beta1, beta2, epsilon = r.unpack('dddd')
    moment_count = r.unpack('I')
    pairs = [(r.tensor(), r.tensor()) for _ in range(moment_count)]
    if r.offset != len(r.data):
        raise exceptions.CheckpointCorrupted(
            "%d unexpected bytes before the checksum"
            % (len(r.data) - r.offset), offset=r.offset)

    if kind == optim.ADAM:
        m = _group([p[0] for p in pairs], len(model.layers))
        v = _group([p[1] for p in pairs], len(model.layers))
        state = optim.AdamState(m, v, step_count, alpha, beta1, beta2,
                                epsilon)
    elif kind == optim.SGD:
        state = optim.SgdState(alpha, step_count)
    else:
        raise exceptions.CheckpointCorrupted(
            "unknown optimizer kind '%s'" % kind)
    network.check_params(model, params)
    return Checkpoint(model, params, state, epoch, rng_state, digest)


def checkpoint_save(ckpt, path):
    data = dumps(ckpt)
    with open(path, 'wb') as f:
        f.write(data)
    logger.debug("wrote checkpoint %s (%d bytes, epoch %d)",
                 path, len(data), ckpt.epoch)


def checkpoint_load(path):
    with open(path, 'rb') as f:
        data = f.read()
    return loads(data)
