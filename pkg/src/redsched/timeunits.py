"""Integer-nanosecond time helpers.

All durations and timestamps inside the library are ``int`` nanoseconds.
Workload files and CLI flags speak milliseconds.
"""

from __future__ import annotations

NS_PER_MS = 1_000_000
NS_PER_S = 1_000_000_000


def ms(value: float) -> int:
    return int(round(value * NS_PER_MS))


def sec(value: float) -> int:
    return int(round(value * NS_PER_S))


def to_ms(ns: int) -> float:
    return ns / NS_PER_MS


def to_sec(ns: int) -> float:
    return ns / NS_PER_S
