"""Degenerate-event bookkeeping.

Some operations hit points where a derivative is undefined (vector norm at
zero) or a score is undefined (cosine of a zero vector). The convention is to
substitute a safe value and record the event here instead of failing, so
training can proceed while the incident stays observable.

Counters are thread-local: parallel sweep workers each see their own tally.
"""

from __future__ import annotations

import threading
from collections import Counter

_local = threading.local()


def _counter() -> Counter:
    if not hasattr(_local, "counts"):
        _local.counts = Counter()
    return _local.counts


def record(name: str) -> None:
    _counter()[name] += 1


def counts() -> dict[str, int]:
    return dict(_counter())


def reset() -> None:
    _counter().clear()
