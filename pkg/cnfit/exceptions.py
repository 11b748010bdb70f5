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
Exception definitions.
"""


class CnfitException(Exception):
    """
    The base exception class for all exceptions this library raises.

    ``exit_code`` is what the command-line shell exits with when the
    exception reaches it.
    """
    message = "Unexpected failure"
    exit_code = 1

    def __init__(self, message=None, **details):
        self.message = message or self.__class__.message
        self.details = details
        for key, value in details.items():
            setattr(self, key, value)
        super(CnfitException, self).__init__(self.message)

    def __str__(self):
        return self.message


class CommandError(CnfitException):
    """Bad command-line usage."""
    message = "Invalid command"
    exit_code = 1


class ContractViolation(CnfitException):
    """An operation was called in a state it does not support, e.g. a
    backward pass without the forward cache."""
    message = "Contract violation"
    exit_code = 1


class ConfigError(CnfitException):
    """A configuration value or config file is invalid."""
    message = "Invalid configuration"
    exit_code = 2


class ShapeError(CnfitException):
    """Tensor shapes do not fit together."""
    message = "Shape mismatch"
    exit_code = 2


class DataError(CnfitException):
    """Input data is empty, out of range or otherwise unusable."""
    message = "Invalid data"
    exit_code = 2


class PgmFormatError(DataError):
    """A PGM file could not be parsed. ``offset`` is the byte position."""
    message = "Malformed PGM file"

    def __init__(self, message=None, offset=None, **details):
        if offset is not None:
            message = "%s (at byte %d)" % (message or self.message, offset)
        super(PgmFormatError, self).__init__(message, offset=offset,
                                             **details)


class UnsupportedFormat(PgmFormatError):
    """The file is a netpbm variant other than binary graymap (P5)."""
    message = "Unsupported image format"


class CheckpointError(DataError):
    """Base class for checkpoint decoding failures."""
    message = "Invalid checkpoint"


class BadMagic(CheckpointError):
    message = "Not a checkpoint file (bad magic)"


class UnsupportedVersion(CheckpointError):
    """Indicates that the checkpoint was written by an unknown format
    version."""
    message = "Unsupported checkpoint format version"


class ChecksumMismatch(CheckpointError):
    message = "Checkpoint checksum mismatch"


class CheckpointCorrupted(CheckpointError):
    message = "Checkpoint is truncated or corrupted"


class NumericalError(CnfitException):
    """A computation produced an unusable numeric result."""
    message = "Numerical failure"
    exit_code = 3


class NonFiniteLoss(NumericalError):
    message = "Loss became non-finite"


class FactorizationError(NumericalError):
    message = "Covariance matrix could not be factorized"


class TuningError(CnfitException):
    message = "Hyperparameter tuning failed"
    exit_code = 3
