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
Grayscale image codec and geometric transforms.

Images are float64 arrays of shape ``(1, H, W)`` with values in [0, 1].
"""

import logging
import math

import numpy as np
from scipy import ndimage

from cnfit import exceptions

PGM_MAGIC = b'P5'
NETPBM_MAGICS = (b'P1', b'P2', b'P3', b'P4', b'P6', b'P7')
WHITESPACE = b' \t\n\r\v\f'

# Rec. 601 luma weights.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

logger = logging.getLogger(__name__)


class _HeaderScanner(object):

    def __init__(self, data):
        self.data = data
        self.offset = 2

    def _skip(self):
        data = self.data
        while self.offset < len(data):
            byte = data[self.offset:self.offset + 1]
            if byte == b'#':
                end = data.find(b'\n', self.offset)
                self.offset = len(data) if end < 0 else end + 1
            elif byte in WHITESPACE:
                self.offset += 1
            else:
                return

    def integer(self, name):
        if (self.offset < len(self.data) and
                self.data[self.offset:self.offset + 1] not in WHITESPACE):
            raise exceptions.PgmFormatError(
                "expected whitespace before %s" % name, offset=self.offset)
        self._skip()
        start = self.offset
        while (self.offset < len(self.data) and
               self.data[self.offset:self.offset + 1].isdigit()):
            self.offset += 1
        if start == self.offset:
            raise exceptions.PgmFormatError(
                "expected %s" % name, offset=start)
        return int(self.data[start:self.offset])


def decode_pgm(data):
    """Decode binary PGM (P5) bytes into a ``(1, H, W)`` tensor."""
    magic = bytes(data[:2])
    if magic != PGM_MAGIC:
        if magic in NETPBM_MAGICS:
            raise exceptions.UnsupportedFormat(
                "netpbm format %s is not supported; convert to P5 "
                "grayscale" % magic.decode('ascii'), offset=0)
        raise exceptions.PgmFormatError(
            "bad magic %r, expected %r" % (magic, PGM_MAGIC), offset=0)
    scanner = _HeaderScanner(data)
    width = scanner.integer('width')
    height = scanner.integer('height')
    maxval = scanner.integer('maxval')
    if width < 1 or height < 1:
        raise exceptions.PgmFormatError(
            "image dimensions %dx%d must be positive" % (width, height),
            offset=scanner.offset)
    if not 1 <= maxval <= 65535:
        raise exceptions.PgmFormatError(
            "maxval %d outside [1, 65535]" % maxval, offset=scanner.offset)
    if data[scanner.offset:scanner.offset + 1] not in WHITESPACE or \
            scanner.offset >= len(data):
        raise exceptions.PgmFormatError(
            "expected a single whitespace byte after maxval",
            offset=scanner.offset)
    start = scanner.offset + 1
    dtype = np.dtype('u1') if maxval < 256 else np.dtype('>u2')
    size = width * height * dtype.itemsize
    if len(data) - start < size:
        raise exceptions.PgmFormatError(
            "payload has %d bytes, %d expected" % (len(data) - start, size),
            offset=len(data))
    pixels = np.frombuffer(bytes(data[start:start + size]), dtype=dtype)
    if pixels.max() > maxval:
        bad = int(np.argmax(pixels > maxval))
        raise exceptions.PgmFormatError(
            "sample %d exceeds maxval %d" % (pixels[bad], maxval),
            offset=start + bad * dtype.itemsize)
    image = pixels.astype(np.float64) / maxval
    return image.reshape(1, height, width)


def load_pgm(path):
    with open(path, 'rb') as f:
        data = f.read()
    try:
        return decode_pgm(data)
    except exceptions.PgmFormatError as e:
        e.message = "%s: %s" % (path, e.message)
        e.args = (e.message,)
        raise


def _plane(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        if image.shape[0] != 1:
            raise exceptions.ShapeError(
                "expected a single-channel image, got shape %s"
                % (image.shape,), shape=image.shape)
        image = image[0]
    if image.ndim != 2:
        raise exceptions.ShapeError(
            "expected an image of shape (1, H, W), got %s" % (image.shape,),
            shape=image.shape)
    return image


def encode_pgm(image, maxval=255):
    if not 1 <= maxval <= 65535:
        raise exceptions.ConfigError("maxval must be in [1, 65535]")
    plane = _plane(image)
    height, width = plane.shape
    dtype = '>u2' if maxval > 255 else 'u1'
    pixels = np.rint(np.clip(plane, 0.0, 1.0) * maxval).astype(dtype)
    header = ('P5\n%d %d\n%d\n' % (width, height, maxval)).encode('ascii')
    return header + pixels.tobytes()


def write_pgm(path, image, maxval=255):
    with open(path, 'wb') as f:
        f.write(encode_pgm(image, maxval))


def rgb_to_gray(image):
    """``(3, H, W)`` or ``(H, W, 3)`` colour to ``(1, H, W)`` luma."""
    image = np.asarray(image, dtype=np.float64)
    weights = np.asarray(LUMA_WEIGHTS)
    if image.ndim == 3 and image.shape[0] == 3:
        return np.tensordot(weights, image, axes=(0, 0))[np.newaxis]
    if image.ndim == 3 and image.shape[-1] == 3:
        return (image @ weights)[np.newaxis]
    raise exceptions.ShapeError("expected a 3-channel image, got shape %s"
                                % (image.shape,), shape=image.shape)


def bilinear_sample(plane, ys, xs):
    """Sample ``plane`` at fractional coordinates; reads outside the image
    are clamped to the nearest edge pixel."""
    return ndimage.map_coordinates(plane, [ys, xs], order=1, mode='nearest')


def resize_bilinear(image, out_h, out_w):
    """Bilinear resize with half-pixel centres: output pixel ``i`` samples
    input coordinate ``(i + 0.5) * in / out - 0.5``."""
    if out_h < 1 or out_w < 1:
        raise exceptions.ConfigError(
            "resize target %dx%d must be positive" % (out_h, out_w))
    plane = _plane(image)
    height, width = plane.shape
    ys = (np.arange(out_h) + 0.5) * (height / float(out_h)) - 0.5
    xs = (np.arange(out_w) + 0.5) * (width / float(out_w)) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing='ij')
    return bilinear_sample(plane, yy, xx)[np.newaxis]


def hflip(image):
    return np.ascontiguousarray(np.asarray(image)[..., ::-1])


def vflip(image):
    return np.ascontiguousarray(np.asarray(image)[..., ::-1, :])


def crop_resize(image, top, left, height, width):
    """Cut the ``height x width`` window at (top, left) and scale it back to
    the original size."""
    plane = _plane(image)
    full_h, full_w = plane.shape
    if (height < 1 or width < 1 or top < 0 or left < 0 or
            top + height > full_h or left + width > full_w):
        raise exceptions.ConfigError(
            "crop window %dx%d at (%d, %d) exceeds %dx%d image"
            % (height, width, top, left, full_h, full_w))
    window = plane[top:top + height, left:left + width]
    return resize_bilinear(window, full_h, full_w)


def affine_warp(image, scale_x=1.0, scale_y=1.0, shear_degrees=0.0):
    """Stretch and shear about the image centre.

    The forward map is ``x' = scale_x * x + tan(shear) * y``,
    ``y' = scale_y * y``; each output pixel is inverse-mapped and sampled
    bilinearly.
    """
    if scale_x <= 0 or scale_y <= 0:
        raise exceptions.ConfigError("scale factors must be positive")
    plane = _plane(image)
    height, width = plane.shape
    cy = (height - 1) / 2.0
    cx = (width - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(height) - cy, np.arange(width) - cx,
                         indexing='ij')
    src_y = yy / scale_y
    src_x = (xx - math.tan(math.radians(shear_degrees)) * src_y) / scale_x
    return bilinear_sample(plane, src_y + cy, src_x + cx)[np.newaxis]
