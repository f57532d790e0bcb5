"""Front traces shared by both engines."""
from __future__ import annotations

import bisect
import csv
import io
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

JUMP = "jump"
FAILED = "failed-attack"
INFECTION = "infection"
LEFT_FAILED = "left-failed-attack"
LEFT_INFECTION = "left-infection"

TRACE_COLUMNS = ("event_index", "time", "kind", "label_x", "label_i", "site", "r",
                 "iota", "living_count", "ghost_count")

# event tuple layout
# (time, kind, label_x, label_i, site, r_after, iota_before, living_after, ghosts_after)
Event = Tuple[float, str, Optional[int], Optional[int], int, int, int, int, int]


class ResourceCapExceeded(RuntimeError):
    """A run hit its event or walker cap; ``trace`` holds the partial result."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


@dataclass
class FrontTrace:
    """Infection times and the event log of one run.

    ``rho[n-1]`` is the time the front first reached ``r0 + n``.  In the event
    log ``r`` and the two counts are taken right after the event while ``iota``
    is the attacked host's remaining immunity right before it, so every
    infection row carries iota == 1.
    """
    r0: int = 0
    t0: float = 0.0
    rho: List[float] = field(default_factory=list)
    events: List[Event] = field(default_factory=list)
    ghost_counts_at_rho: List[int] = field(default_factory=list)
    living_counts_at_rho: List[int] = field(default_factory=list)
    initial_living: int = 0
    outcome: str = "running"
    final_time: float = 0.0
    # two-sided runs only
    left_rho: List[float] = field(default_factory=list)

    @property
    def front(self) -> int:
        return self.r0 + len(self.rho)

    def r_at(self, t: float) -> int:
        """Front position at time t (right-continuous)."""
        return self.r0 + bisect.bisect_right(self.rho, t)

    def front_path(self):
        """Jump times and front values, starting from (t0, r0)."""
        times = [self.t0] + list(self.rho)
        values = [self.r0 + k for k in range(len(times))]
        return times, values

    @property
    def extinct(self) -> bool:
        return self.outcome == "extinct"

    def rows(self):
        for k, ev in enumerate(self.events):
            t, kind, lx, li, site, r, iota, nl, ng = ev
            yield (k, repr(float(t)), kind, "" if lx is None else lx, "" if li is None else li,
                   site, r, iota, nl, ng)

    def to_csv(self, path_or_buf=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in self.rows():
            w.writerow(row)
        text = buf.getvalue()
        if path_or_buf is not None:
            if hasattr(path_or_buf, "write"):
                path_or_buf.write(text)
            else:
                with open(path_or_buf, "w", newline="") as fh:
                    fh.write(text)
        return text
