"""Optional operation counting for cost-scaling assertions.

Counting is off unless a :class:`FlopCounter` is active, so the hot paths
only pay a single ``if`` per call.  Counts are rough multiply-add estimates
(contraction: output size times summed size; QR/SVD/eigh: the usual cubic
models), good enough to verify scaling exponents, not wall time.
"""

from __future__ import annotations

from contextlib import contextmanager

_active: list["FlopCounter"] = []


class FlopCounter:
    def __init__(self):
        self.scalar_ops = 0

    def add(self, n):
        self.scalar_ops += int(n)


def add_ops(n):
    if _active:
        for c in _active:
            c.add(n)


@contextmanager
def count_flops():
    """Context manager yielding a :class:`FlopCounter` active in its scope."""
    counter = FlopCounter()
    _active.append(counter)
    try:
        yield counter
    finally:
        _active.remove(counter)
