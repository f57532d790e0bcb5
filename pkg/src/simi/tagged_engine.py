"""Event-driven simulation of the tagged system.

Each parasite carries a label (x, i): born at site x as the i-th offspring of
the host there.  Its walk is a rate-2 continuous-time simple symmetric random
walk read from the label's own random stream, so the same label follows the
same path in every run that shares the seed, whichever configuration it is
started from.  Dead parasites become ghosts; by default ghosts keep walking.
"""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from .laws import Environment
from .streams import ROLE_WALK, substream, zigzag
from .trace import FAILED, INFECTION, JUMP, FrontTrace, ResourceCapExceeded

Label = Tuple[int, int]


class ScheduleUnderrun(RuntimeError):
    def __init__(self, label, time=None):
        msg = f"schedule exhausted for label {label}"
        if time is not None:
            msg += f" (last scheduled jump at t={time})"
        super().__init__(msg)
        self.label = label


class MissingPathError(KeyError):
    pass


class _Exhausted(Exception):
    pass


# ---------------------------------------------------------------------------
# walk paths


class WalkPath:
    """Cumulative jump times and displacements of one label, relative to birth.

    ``times[j]`` is the time (since birth) of the (j+1)-th jump and ``disp[j]``
    the displacement right after it.  Each jump consumes two uniforms: the
    first gives an Exp(2) waiting time, the second the direction.
    """
    __slots__ = ("label", "times", "disp", "_rng", "_block", "_np")

    def __init__(self, label, rng: Optional[np.random.Generator]):
        self.label = label
        self.times: List[float] = []
        self.disp: List[int] = []
        self._rng = rng
        self._block = 8
        self._np = None

    def extend(self, nsteps: Optional[int] = None) -> None:
        if self._rng is None:
            raise _Exhausted(self.label)
        n = nsteps or self._block
        self._block = min(self._block * 2, 4096)
        u = self._rng.random(2 * n)
        waits = -np.log1p(-u[0::2]) * 0.5
        steps = np.where(u[1::2] < 0.5, 1, -1)
        t0 = self.times[-1] if self.times else 0.0
        d0 = self.disp[-1] if self.disp else 0
        # prepend the running value so the summation order never depends on blocks
        t = np.cumsum(np.concatenate(([t0], waits)))[1:]
        d = np.cumsum(np.concatenate(([d0], steps)))[1:]
        self.times.extend(t.tolist())
        self.disp.extend(d.tolist())
        self._np = None

    def _arrays(self):
        if self._np is None or len(self._np[0]) != len(self.times):
            self._np = (np.asarray(self.times), np.asarray(self.disp))
        return self._np

    def hit(self, k: int, cap: float) -> Optional[float]:
        """First time the displacement equals k, or None if that is after ``cap``."""
        if k == 0:
            return 0.0
        start = 0
        while True:
            if start < len(self.times):
                t, d = self._arrays()
                idx = np.flatnonzero(d[start:] == k)
                if idx.size:
                    tk = float(t[start + idx[0]])
                    return tk if tk <= cap else None
                if t[-1] > cap:
                    return None
            start = len(self.times)
            try:
                self.extend(max(64, len(self.times)))
            except _Exhausted:
                raise ScheduleUnderrun(self.label, self.times[-1] if self.times else None) from None


class WalkFamily:
    """Lazily realized walks for every label, keyed by (seed, x, i)."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._paths: Dict[Label, WalkPath] = {}

    def path(self, label: Label) -> WalkPath:
        p = self._paths.get(label)
        if p is None:
            x, i = label
            p = WalkPath(label, substream(self.seed, ROLE_WALK, zigzag(x), i))
            self._paths[label] = p
        return p

    def __contains__(self, label):
        return True

    def labels(self):
        return list(self._paths)


class ScheduledWalks:
    """Walks read from a fixed table {label: [(wait, direction), ...]}."""

    def __init__(self, schedule: Mapping[Label, Iterable[Tuple[float, int]]]):
        self._paths: Dict[Label, WalkPath] = {}
        for label, steps in schedule.items():
            p = WalkPath(tuple(label), None)
            t, d = 0.0, 0
            for wait, direction in steps:
                if wait < 0 or direction not in (1, -1):
                    raise ValueError(f"bad schedule entry {(wait, direction)} for {label}")
                t += wait
                d += direction
                p.times.append(t)
                p.disp.append(d)
            self._paths[tuple(label)] = p

    def path(self, label: Label) -> WalkPath:
        p = self._paths.get(label)
        if p is None:
            p = WalkPath(label, None)
            self._paths[label] = p
        return p

    def __contains__(self, label):
        return label in self._paths and len(self._paths[label].times) > 0


def read_schedule_csv(path) -> Dict[Label, List[Tuple[float, int]]]:
    """Columns label_x, label_i, wait, direction (L or R); rows in path order."""
    sched: Dict[Label, List[Tuple[float, int]]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            lab = (int(row["label_x"]), int(row["label_i"]))
            d = row["direction"].strip().upper()
            if d not in ("L", "R"):
                raise ValueError(f"direction must be L or R, got {d!r}")
            sched.setdefault(lab, []).append((float(row["wait"]), 1 if d == "R" else -1))
    return sched


def hitting_time(walks, label: Label, k: int, cap: float) -> Optional[float]:
    """tau_k for ``label``: first time its displacement from birth equals k."""
    if isinstance(walks, TaggedState):
        walks = walks.walks
    if isinstance(walks, ScheduledWalks) and label not in walks and k != 0:
        raise MissingPathError(label)
    return walks.path(label).hit(k, cap)


# ---------------------------------------------------------------------------
# state


class Walker:
    __slots__ = ("birth", "start", "j", "pos", "path")

    def __init__(self, birth, start, path):
        self.birth = birth
        self.start = start
        self.j = 0
        self.pos = start
        self.path = path


@dataclass
class TaggedState:
    r: int
    iota: int
    t: float
    r0: int
    living: Dict[Label, Walker] = field(default_factory=dict)
    ghosts: Dict[Label, Walker] = field(default_factory=dict)
    walks: object = None
    initial_living: int = 0

    def living_positions(self) -> Dict[Label, int]:
        return {lab: w.pos for lab, w in self.living.items()}

    def ghost_positions(self) -> Dict[Label, int]:
        return {lab: w.pos for lab, w in self.ghosts.items()}

    def check(self) -> None:
        assert not (self.living.keys() & self.ghosts.keys())
        for (x, _i) in list(self.living) + list(self.ghosts):
            assert x <= self.r
        for w in self.living.values():
            assert w.pos <= self.r


def init(eta0: Mapping[int, int], r0: int, env: Environment, walks=None, t0: float = 0.0,
         seed: Optional[int] = None) -> TaggedState:
    """Living labels (x, 1..eta0[x]) at their birth sites; iota = I_{r0+1}."""
    if not isinstance(eta0, Mapping):
        raise TypeError("eta0 must be a finite mapping site -> count")
    if walks is None:
        walks = WalkFamily(0 if seed is None else seed)
    st = TaggedState(r=int(r0), iota=env.I(r0 + 1), t=float(t0), r0=int(r0), walks=walks)
    for x, c in sorted(eta0.items()):
        if c < 0 or int(c) != c:
            raise ValueError(f"bad count {c} at site {x}")
        if c and x > r0:
            raise ValueError(f"eta0 has mass at {x} > r0={r0}")
        for i in range(1, int(c) + 1):
            st.living[(int(x), i)] = Walker(st.t, int(x), walks.path((int(x), i)))
    st.initial_living = len(st.living)
    return st


@dataclass
class Stop:
    time: Optional[float] = None     # absolute time horizon
    front: Optional[int] = None      # stop after this many infections


def run(state: TaggedState, env: Environment, stop: Stop = Stop(), walks=None,
        ghosts_walk: bool = True, log_jumps: bool = False,
        max_events: Optional[int] = None, max_walkers: Optional[int] = None,
        trace: Optional[FrontTrace] = None) -> Tuple[FrontTrace, TaggedState]:
    """Advance ``state`` until the stop condition, extinction or an exhausted queue.

    ``walks`` defaults to the family the state was initialised with.  Events at
    exactly the horizon are processed; the stop condition is honored right at
    the triggering event.
    """
    if walks is not None:
        state.walks = walks
    walks = state.walks
    if trace is None:
        trace = FrontTrace(r0=state.r, t0=state.t, initial_living=len(state.living))
    T = math.inf if stop.time is None else float(stop.time)
    target = None if stop.front is None else state.r + int(stop.front)
    cap_ev = max_events if max_events is not None else math.inf
    cap_w = max_walkers if max_walkers is not None else math.inf

    living, ghosts = state.living, state.ghosts
    heap: list = []
    push = heapq.heappush
    pop = heapq.heappop

    def schedule(lab, w):
        path = w.path
        j = w.j
        if j >= len(path.times):
            try:
                path.extend()
            except _Exhausted:
                last = w.birth + path.times[-1] if path.times else w.birth
                push(heap, (last, lab[0], lab[1], 1))
                return
        push(heap, (w.birth + path.times[j], lab[0], lab[1], 0))

    for lab, w in living.items():
        schedule(lab, w)
    if ghosts_walk:
        for lab, w in ghosts.items():
            schedule(lab, w)

    events = trace.events
    r, iota = state.r, state.iota
    n_ev = 0
    outcome = None
    t = state.t
    if not living:
        outcome = "extinct"
    elif target is not None and r >= target:
        outcome = "target"

    while outcome is None and heap:
        if heap[0][0] > T:
            outcome = "horizon"
            break
        t, x, i, flag = pop(heap)
        lab = (x, i)
        w = living.get(lab)
        alive = w is not None
        if not alive:
            w = ghosts[lab]
        if flag:
            if alive:
                state.r, state.iota, state.t = r, iota, t
                raise ScheduleUnderrun(lab, t)
            continue
        n_ev += 1
        if n_ev > cap_ev:
            state.r, state.iota, state.t = r, iota, t
            trace.outcome = "cap"
            raise ResourceCapExceeded(f"event cap {max_events} reached at t={t}", trace)
        pos = w.start + w.path.disp[w.j]
        w.j += 1
        w.pos = pos
        if alive and pos == r + 1:
            del living[lab]
            ghosts[lab] = w
            if iota == 1:
                r += 1
                a = env.A(r)
                for k in range(1, a + 1):
                    nl = (r, k)
                    nw = Walker(t, r, walks.path(nl))
                    living[nl] = nw
                    schedule(nl, nw)
                iota = env.I(r + 1)
                trace.rho.append(t)
                trace.ghost_counts_at_rho.append(len(ghosts))
                trace.living_counts_at_rho.append(len(living))
                events.append((t, INFECTION, x, i, r, r, 1, len(living), len(ghosts)))
                if len(living) + len(ghosts) > cap_w:
                    state.r, state.iota, state.t = r, iota, t
                    trace.outcome = "cap"
                    raise ResourceCapExceeded(f"walker cap {max_walkers} reached at t={t}", trace)
                if target is not None and r >= target:
                    outcome = "target"
            else:
                events.append((t, FAILED, x, i, r + 1, r, iota, len(living), len(ghosts)))
                iota -= 1
            if not living:
                outcome = outcome or "extinct"
            elif ghosts_walk:
                schedule(lab, w)
            continue
        if log_jumps:
            events.append((t, JUMP, x, i, pos, r, iota, len(living), len(ghosts)))
        if alive or ghosts_walk:
            schedule(lab, w)

    if outcome is None:
        outcome = "horizon" if T < math.inf else "exhausted"
    if outcome == "horizon":
        t = T
    state.r, state.iota, state.t = r, iota, t
    trace.outcome = outcome
    trace.final_time = t
    return trace, state


def run_scheduled(state_or_eta0, env: Environment, schedule, stop: Stop = Stop(),
                  r0: Optional[int] = None, **kw) -> Tuple[FrontTrace, TaggedState]:
    """Deterministic replay with jump times and directions read from ``schedule``.

    ``schedule`` maps labels to [(wait, direction)] with direction +1 / -1
    (or 'R' / 'L').  A living label whose schedule runs out raises
    :class:`ScheduleUnderrun` as soon as the run needs to advance past its last
    scheduled jump.
    """
    sched = {tuple(k): [(float(w), _dir(d)) for w, d in v] for k, v in schedule.items()}
    walks = ScheduledWalks(sched)
    if isinstance(state_or_eta0, TaggedState):
        state = state_or_eta0
        state.walks = walks
        for lab, w in list(state.living.items()) + list(state.ghosts.items()):
            w.path = walks.path(lab)
    else:
        state = init(state_or_eta0, 0 if r0 is None else r0, env, walks=walks)
    return run(state, env, stop, **kw)


def _dir(d) -> int:
    if d in (1, -1):
        return int(d)
    if isinstance(d, str) and d.upper() in ("L", "R"):
        return 1 if d.upper() == "R" else -1
    raise ValueError(f"bad direction {d!r}")


# ---------------------------------------------------------------------------
# exact identities checked on finished runs


def ghost_identity_violations(trace: FrontTrace, env: Environment) -> int:
    """Count pairs n < n+m where |G(rho_{n+m})| - |G(rho_n)| differs from sum I."""
    g = trace.ghost_counts_at_rho
    bad = 0
    cum = [0]
    for k in range(1, len(g) + 1):
        cum.append(cum[-1] + env.I(trace.r0 + k))
    for n in range(1, len(g) + 1):
        for m in range(1, len(g) - n + 1):
            if g[n + m - 1] - g[n - 1] != cum[n + m] - cum[n]:
                bad += 1
    return bad


def conservation_violations(trace: FrontTrace, env: Environment) -> int:
    """Count logged events breaking living = initial + births - ghosts."""
    births = [0]
    for k in range(1, len(trace.rho) + 1):
        births.append(births[-1] + env.A(trace.r0 + k))
    bad = 0
    for ev in trace.events:
        r, nl, ng = ev[5], ev[7], ev[8]
        if nl != trace.initial_living + births[r - trace.r0] - ng:
            bad += 1
    return bad

