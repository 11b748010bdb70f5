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
Base record type shared by learning-curve rows, tuning trials and table
rows.
"""

import six


class Record(object):
    """
    A record is a named row of results (an epoch of training, a tuning
    trial, a layer of a model). This is pretty much just a bag for
    attributes, so records print directly through ``utils.print_list``.

    :param info: dictionary representing record attributes
    """
    FIELDS = ()

    def __init__(self, info=None, **kwargs):
        info = dict(info or {})
        info.update(kwargs)
        missing = [f for f in self.FIELDS if f not in info]
        if missing:
            raise TypeError("%s missing fields: %s"
                            % (self.__class__.__name__, ', '.join(missing)))
        self._info = info
        self._add_details(info)

    def _add_details(self, info):
        for (k, v) in six.iteritems(info):
            try:
                setattr(self, k, v)
            except AttributeError:
                # In this case we already defined the attribute on the class
                pass

    def to_dict(self):
        return dict((k, getattr(self, k)) for k in self._info)

    def __repr__(self):
        reprkeys = sorted(k for k in self.__dict__.keys() if k[0] != '_')
        info = ", ".join("%s=%s" % (k, getattr(self, k)) for k in reprkeys)
        return "<%s %s>" % (self.__class__.__name__, info)

    def __eq__(self, other):
        if not isinstance(other, self.__class__):
            return False
        return self.to_dict() == other.to_dict()

    def __ne__(self, other):
        return not self.__eq__(other)
