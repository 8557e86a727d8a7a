"""Time-stamped scalar history with linearly interpolated delayed lookups."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DelayBufferError

__all__ = ["HistoryBuffer", "init_history"]


class HistoryBuffer:
    """Append-only record of ``(t, value)`` pairs with bounded memory.

    Samples older than ``t_latest - max_delay`` are evicted, except that one
    sample beyond the horizon is always kept so the oldest requested time stays
    interpolable.  Lookups outside the stored span raise instead of
    extrapolating.
    """

    def __init__(self, max_delay: float, capacity: int = 1024):
        if not max_delay > 0:
            raise ValueError(f"max_delay must be positive, got {max_delay!r}")
        self.max_delay = float(max_delay)
        self._t = np.empty(max(int(capacity), 4))
        self._v = np.empty_like(self._t)
        self._lo = 0
        self._hi = 0

    def __len__(self) -> int:
        return self._hi - self._lo

    @property
    def times(self) -> np.ndarray:
        return self._t[self._lo:self._hi].copy()

    @property
    def values(self) -> np.ndarray:
        return self._v[self._lo:self._hi].copy()

    @property
    def span(self) -> tuple[float, float]:
        if self._hi == self._lo:
            raise DelayBufferError("history buffer is empty")
        return float(self._t[self._lo]), float(self._t[self._hi - 1])

    @property
    def latest(self) -> float:
        return self.span[1]

    def push(self, t: float, value: float) -> None:
        t = float(t)
        if self._hi > self._lo and not t > self._t[self._hi - 1]:
            raise DelayBufferError(
                f"timestamp {t!r} is not after the latest stored time {self._t[self._hi - 1]!r}"
            )
        if self._hi == self._t.size:
            self._make_room()
        self._t[self._hi] = t
        self._v[self._hi] = value
        self._hi += 1
        self._evict()

    def replace_latest(self, value: float) -> None:
        """Overwrite the newest stored value, keeping its timestamp."""
        if self._hi == self._lo:
            raise DelayBufferError("history buffer is empty")
        self._v[self._hi - 1] = value

    def _make_room(self) -> None:
        n = self._hi - self._lo
        if n * 2 > self._t.size:
            t_new = np.empty(self._t.size * 2)
            v_new = np.empty_like(t_new)
        else:
            t_new, v_new = self._t, self._v
        t_new[:n] = self._t[self._lo:self._hi]
        v_new[:n] = self._v[self._lo:self._hi]
        self._t, self._v = t_new, v_new
        self._lo, self._hi = 0, n

    def _evict(self) -> None:
        horizon = self._t[self._hi - 1] - self.max_delay
        # keep index lo such that t[lo] <= horizon < t[lo + 1]
        k = int(np.searchsorted(self._t[self._lo:self._hi], horizon, side="right")) - 1
        if k > 0:
            self._lo += k

    def sample(self, t: float) -> float:
        """Piecewise-linear value at ``t``; exact at stored nodes."""
        lo, hi = self._lo, self._hi
        if hi == lo:
            raise DelayBufferError("history buffer is empty")
        ts = self._t
        if t < ts[lo] or t > ts[hi - 1]:
            raise DelayBufferError(
                f"t={t!r} outside stored span [{ts[lo]!r}, {ts[hi - 1]!r}]"
            )
        k = lo + int(np.searchsorted(ts[lo:hi], t, side="left"))
        if ts[k] == t:
            return float(self._v[k])
        t0, t1 = ts[k - 1], ts[k]
        w = (t - t0) / (t1 - t0)
        return float((1.0 - w) * self._v[k - 1] + w * self._v[k])


def init_history(
    f: Callable[[float], float],
    t_start: float,
    t_end: float,
    dt: float,
    max_delay: float | None = None,
) -> HistoryBuffer:
    """Buffer holding ``f`` sampled on ``t_start, t_start + dt, ..., t_end``.

    The last node is placed exactly at ``t_end`` even when ``dt`` does not
    divide the span.
    """
    if not t_start < t_end:
        raise DelayBufferError(f"empty history span [{t_start!r}, {t_end!r}]")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    m = int(np.ceil((t_end - t_start) / dt - 1e-9))
    grid = t_end - dt * np.arange(m, -1, -1)
    grid[0] = t_start
    if max_delay is None:
        max_delay = t_end - t_start
    buf = HistoryBuffer(max(max_delay, t_end - t_start), capacity=2 * (m + 1))
    for t in grid:
        buf.push(float(t), float(f(float(t))))
    return buf
