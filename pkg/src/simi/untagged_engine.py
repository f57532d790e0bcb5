"""Poisson-clock (untagged) construction.

Every (site, rank, direction, kind) carries a rate-1 Poisson process.  A point
of the rank-n living clock at x moves one living parasite from x when the site
holds at least n of them; only counts are tracked.  Ghost clocks move ghost
counts the same way and are optional, since ghosts never influence the front.

Clocks are realized lazily from keyed streams, so extending the rank range or
the time window never changes points that were already drawn, and two
configurations can be run on the very same clock realization.
"""
from __future__ import annotations

import bisect
import heapq
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from .laws import Environment
from .streams import ROLE_CLOCK, substream, zigzag
from .trace import FAILED, INFECTION, JUMP, LEFT_FAILED, LEFT_INFECTION, FrontTrace, ResourceCapExceeded

LEFT, RIGHT = -1, 1
LIVING, GHOST = 0, 1

ClockKey = Tuple[int, int, int, int]  # (site, rank, direction, kind)


class RankOverflowError(RuntimeError):
    pass


class ClockField:
    """Lazily realized Poisson clocks on [t0, horizon].

    With ``extendable=True`` (the default) ranks and sites are unbounded and the
    horizon only limits :meth:`points`.  A fixed field raises
    :class:`RankOverflowError` when a run needs a rank above ``max_rank``.
    """

    def __init__(self, seed: int, t0: float = 0.0, horizon: float = math.inf,
                 max_rank: int = 1, extendable: bool = True):
        self.seed = int(seed)
        self.t0 = float(t0)
        self.horizon = float(horizon)
        self.max_rank = int(max_rank)
        self.extendable = extendable
        self._times: Dict[ClockKey, List[float]] = {}
        self._rngs: Dict[ClockKey, np.random.Generator] = {}

    def _stream(self, key: ClockKey) -> List[float]:
        ts = self._times.get(key)
        if ts is None:
            site, rank, d, kind = key
            if rank > self.max_rank:
                if not self.extendable:
                    raise RankOverflowError(f"rank {rank} needed at site {site}, field holds {self.max_rank}")
                self.max_rank = rank
            self._rngs[key] = substream(self.seed, ROLE_CLOCK, zigzag(site), rank, 0 if d < 0 else 1, kind)
            ts = []
            self._times[key] = ts
            self._grow(key, ts)
        return ts

    def _grow(self, key, ts, n: int = 16):
        u = self._rngs[key].random(n)
        last = ts[-1] if ts else self.t0
        gaps = -np.log1p(-u)
        ts.extend(np.cumsum(np.concatenate(([last], gaps)))[1:].tolist())

    def next_after(self, key: ClockKey, t: float) -> float:
        """Smallest point of clock ``key`` strictly after t."""
        ts = self._stream(key)
        while ts[-1] <= t:
            self._grow(key, ts, max(16, len(ts)))
        return ts[bisect.bisect_right(ts, t)]

    def points(self, key: ClockKey, lo: Optional[float] = None, hi: Optional[float] = None) -> List[float]:
        lo = self.t0 if lo is None else lo
        hi = self.horizon if hi is None else hi
        if hi <= lo:
            return []
        ts = self._stream(key)
        while ts[-1] <= hi:
            self._grow(key, ts, max(16, len(ts)))
        return ts[bisect.bisect_right(ts, lo):bisect.bisect_right(ts, hi)]

    def dump(self, sites, ranks, lo=None, hi=None) -> Iterator[Tuple[int, int, str, str, float]]:
        """Rows (site, rank, direction, kind, time) for replay debugging."""
        for x in sites:
            for n in range(1, ranks + 1):
                for d in (LEFT, RIGHT):
                    for kind in (LIVING, GHOST):
                        for t in self.points((x, n, d, kind), lo, hi):
                            yield (x, n, "L" if d < 0 else "R", "P" if kind == LIVING else "G", t)


def sample_clocks(sites, max_rank: int, window: Tuple[float, float], seed: int) -> ClockField:
    """A clock field on ``window``; ``sites`` only pre-realizes those keys."""
    lo, hi = window
    cf = ClockField(seed, t0=lo, horizon=hi, max_rank=max_rank)
    for x in sites:
        for n in range(1, max_rank + 1):
            for d in (LEFT, RIGHT):
                for kind in (LIVING, GHOST):
                    cf._stream((x, n, d, kind))
    return cf


# ---------------------------------------------------------------------------


@dataclass
class UntaggedState:
    r: int
    eta: Dict[int, int]
    eta_bar: Dict[int, int] = field(default_factory=dict)
    iota: int = 1
    t: float = 0.0
    r0: int = 0
    # left front, only for the two-sided model
    l: Optional[int] = None
    iota_l: Optional[int] = None

    def copy(self) -> "UntaggedState":
        return UntaggedState(self.r, dict(self.eta), dict(self.eta_bar), self.iota, self.t, self.r0,
                             self.l, self.iota_l)

    @property
    def living(self) -> int:
        return sum(self.eta.values())

    @property
    def ghosts(self) -> int:
        return sum(self.eta_bar.values())


def make_state(eta0: Mapping[int, int], r0: int, env: Environment, t0: float = 0.0) -> UntaggedState:
    eta = {int(x): int(c) for x, c in eta0.items() if c}
    if any(x > r0 for x in eta):
        raise ValueError("living parasites must sit at or left of the front")
    if any(c < 0 for c in eta.values()):
        raise ValueError("negative count")
    return UntaggedState(r=int(r0), eta=eta, eta_bar={}, iota=env.I(r0 + 1), t=float(t0), r0=int(r0))


def make_two_sided(env: Environment, t0: float = 0.0) -> UntaggedState:
    """(l, r, eta) = (0, 0, A_0 delta_0); immunities I_1 on the right, I_{-1} on the left."""
    a0 = env.A(0)
    return UntaggedState(r=0, eta={0: a0} if a0 else {}, eta_bar={}, iota=env.I(1), t=float(t0), r0=0,
                         l=0, iota_l=env.I(-1))


@dataclass
class Stop:
    time: Optional[float] = None
    front: Optional[int] = None


def run(state: UntaggedState, clocks: ClockField, env: Environment, stop: Stop = Stop(),
        ghosts_move: bool = False, log_moves: bool = False, debug: bool = False,
        max_events: Optional[int] = None) -> Tuple[FrontTrace, UntaggedState]:
    """Drive ``state`` (modified in place) with ``clocks`` from ``state.t``."""
    T = math.inf if stop.time is None else float(stop.time)
    target = None if stop.front is None else state.r + int(stop.front)
    cap_ev = math.inf if max_events is None else max_events
    trace = FrontTrace(r0=state.r, t0=state.t, initial_living=state.living)
    eta = state.eta
    bar = state.eta_bar
    two = state.l is not None
    r, iota = state.r, state.iota
    l, iota_l = state.l, state.iota_l
    t = state.t

    heap: list = []
    in_heap = set()
    next_after = clocks.next_after
    push, pop = heapq.heappush, heapq.heappop

    def activate(x, n, kind):
        for d in (LEFT, RIGHT):
            key = (x, n, d, kind)
            if key not in in_heap:
                in_heap.add(key)
                push(heap, (next_after(key, t), x, n, d, kind))

    for x, c in eta.items():
        for n in range(1, c + 1):
            activate(x, n, LIVING)
    if ghosts_move:
        for x, c in bar.items():
            for n in range(1, c + 1):
                activate(x, n, GHOST)

    events = trace.events
    living = sum(eta.values())
    ghosts = sum(bar.values())
    n_ev = 0
    outcome = None
    if living == 0:
        outcome = "extinct"
    elif target is not None and r >= target:
        outcome = "target"

    while outcome is None and heap:
        if heap[0][0] > T:
            outcome = "horizon"
            break
        tau, x, n, d, kind = pop(heap)
        key = (x, n, d, kind)
        in_heap.discard(key)
        counts = eta if kind == LIVING else bar
        c = counts.get(x, 0)
        if n > c:
            continue  # inadmissible point; the rank is re-armed when it refills
        if debug:
            assert c >= n, (key, c)
        n_ev += 1
        if n_ev > cap_ev:
            trace.outcome = "cap"
            raise ResourceCapExceeded(f"event cap {max_events} reached at t={tau}", trace)
        t = tau
        y = x + d
        # one parasite leaves x
        if c == 1:
            del counts[x]
        else:
            counts[x] = c - 1
        if n <= c - 1:
            in_heap.add(key)
            push(heap, (next_after(key, t), x, n, d, kind))
        if kind == GHOST:
            cy = bar.get(y, 0) + 1
            bar[y] = cy
            activate(y, cy, GHOST)
            continue
        if y == r + 1:
            # attack on the host at r+1; the attacker dies there
            living -= 1
            ghosts += 1
            cb = bar.get(y, 0) + 1
            bar[y] = cb
            if ghosts_move:
                activate(y, cb, GHOST)
            if iota == 1:
                r += 1
                a = env.A(r)
                if a:
                    eta[r] = a
                    for k in range(1, a + 1):
                        activate(r, k, LIVING)
                living += a
                iota = env.I(r + 1)
                trace.rho.append(t)
                trace.ghost_counts_at_rho.append(ghosts)
                trace.living_counts_at_rho.append(living)
                events.append((t, INFECTION, None, None, r, r, 1, living, ghosts))
                if target is not None and r >= target:
                    outcome = "target"
            else:
                events.append((t, FAILED, None, None, y, r, iota, living, ghosts))
                iota -= 1
        elif two and y == l - 1:
            living -= 1
            ghosts += 1
            cb = bar.get(y, 0) + 1
            bar[y] = cb
            if ghosts_move:
                activate(y, cb, GHOST)
            if iota_l == 1:
                l -= 1
                a = env.A(l)
                if a:
                    eta[l] = a
                    for k in range(1, a + 1):
                        activate(l, k, LIVING)
                living += a
                iota_l = env.I(l - 1)
                trace.left_rho.append(t)
                events.append((t, LEFT_INFECTION, None, None, l, r, 1, living, ghosts))
            else:
                events.append((t, LEFT_FAILED, None, None, y, r, iota_l, living, ghosts))
                iota_l -= 1
        else:
            cy = eta.get(y, 0) + 1
            eta[y] = cy
            activate(y, cy, LIVING)
            if log_moves:
                events.append((t, JUMP, None, None, y, r, iota, living, ghosts))
        if living == 0:
            outcome = "extinct"

    if outcome is None:
        outcome = "horizon" if T < math.inf else "exhausted"
    if outcome == "horizon":
        t = T
    state.r, state.iota, state.t, state.l, state.iota_l = r, iota, t, l, iota_l
    trace.outcome = outcome
    trace.final_time = t
    return trace, state


# ---------------------------------------------------------------------------
# coupling


def prefix_dominates(eta1: Mapping[int, int], eta2: Mapping[int, int]) -> bool:
    """True iff sum_{k>=x} eta1(k) <= sum_{k>=x} eta2(k) for every x."""
    sites = sorted(set(eta1) | set(eta2), reverse=True)
    s1 = s2 = 0
    for x in sites:
        s1 += eta1.get(x, 0)
        s2 += eta2.get(x, 0)
        if s1 > s2:
            return False
    return True


@dataclass
class CoupledResult:
    trace1: FrontTrace
    trace2: FrontTrace
    dominated: bool
    violations: int


def coupled_run(config1: UntaggedState, config2: UntaggedState, clocks: ClockField, env: Environment,
                t0: Optional[float] = None, stop: Stop = Stop(), **kw) -> CoupledResult:
    """Run both configurations on one clock field and environment.

    ``violations`` counts front levels reached by the first process strictly
    before the second, i.e. times where r1 > r2.  It is only meaningful when
    ``dominated`` holds.
    """
    if config1.r != config2.r or config1.iota != config2.iota:
        raise ValueError("coupled configurations must share r and iota")
    c1, c2 = config1.copy(), config2.copy()
    if t0 is not None:
        c1.t = c2.t = float(t0)
    dom = prefix_dominates(c1.eta, c2.eta)
    tr1, _ = run(c1, clocks, env, stop, **kw)
    tr2, _ = run(c2, clocks, env, stop, **kw)
    return CoupledResult(tr1, tr2, dom, front_order_violations(tr1, tr2))


def front_order_violations(tr1: FrontTrace, tr2: FrontTrace) -> int:
    """Number of levels n at which r1 reaches r0+n strictly earlier than r2 does."""
    bad = 0
    for n, t1 in enumerate(tr1.rho):
        if n >= len(tr2.rho):
            # the second front never got there within its run
            if t1 <= tr2.final_time or tr2.outcome in ("extinct", "exhausted"):
                bad += 1
        elif t1 < tr2.rho[n]:
            bad += 1
    return bad
