"""Front diagnostics built from good offspring/immunity windows.

Conventions: a window of size k at site n looks at offspring A_{n-1}, ...,
A_{n-k} and immunities I_n, ..., I_{n-k+1}.  Small windows (k < k0) are good
when every offspring is at least m_A and every immunity equals m_I; large
windows compare the sums with beta_A k and beta_I k.

Quantities that depend on the whole future (M, M^i) are only checked up to a
finite horizon, and results say how far they were verified.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .laws import Environment, EnvironmentRangeError, LawSpec, mean, support_min
from .tagged_engine import hitting_time
from .trace import FrontTrace


class UndefinedSmallWindow(ValueError):
    """m_A does not exist, so small windows can never be good."""


@dataclass(frozen=True)
class FrontierParams:
    alpha: float
    beta_A: float
    beta_I: float
    k0: int
    m_I: int
    m_A: Optional[int]


def _ceil(x: float) -> int:
    # guard against 4.000000000001 style round-off
    return math.ceil(x - 1e-9)


def derive_params(alpha: float, beta_A: float, beta_I: float, offspring_law: LawSpec,
                  immunity_law: LawSpec) -> FrontierParams:
    if not alpha > 1:
        raise ValueError(f"alpha must exceed 1, got {alpha}")
    mu_A = mean(offspring_law)
    mu_I = mean(immunity_law)
    for lhs, rhs, name in ((mu_I, beta_I, "mu_I < beta_I"), (beta_I, beta_A, "beta_I < beta_A"),
                           (beta_A, mu_A, "beta_A < mu_A")):
        if not lhs < rhs:
            raise ValueError(f"ordering violated: {name} fails ({lhs} vs {rhs})")
    k0 = _ceil((alpha + 1) / (beta_A - beta_I))
    m_I = support_min(immunity_law, 1)
    m_A = support_min(offspring_law, max(beta_A, 4 + m_I))
    return FrontierParams(alpha, beta_A, beta_I, k0, m_I, m_A)


def z_threshold(K: int, params: FrontierParams) -> int:
    """Number of hits needed for nu_n: m_I K below k0, ceil(beta_I K) from k0 on."""
    if K < params.k0:
        return params.m_I * K
    return _ceil(params.beta_I * K)


def is_good(a_window: Sequence[int], i_window: Sequence[int], k: int, params: FrontierParams) -> bool:
    if k < 1 or len(a_window) != k or len(i_window) != k:
        raise ValueError("windows must both have length k >= 1")
    if k < params.k0:
        if params.m_A is None:
            raise UndefinedSmallWindow("m_A is undefined; small windows have no good configurations")
        return all(a >= params.m_A for a in a_window) and all(i == params.m_I for i in i_window)
    return sum(a_window) >= params.beta_A * k and sum(i_window) <= params.beta_I * k


def compute_K(env: Environment, n: int, params: FrontierParams,
              max_back: Optional[int] = None) -> Optional[int]:
    """K_n, or None when no window of size <= max_back is good.

    Raises :class:`EnvironmentRangeError` if a window would need a site left of
    the realized environment.
    """
    if max_back is None:
        max_back = 10 * params.k0
    sa = 0
    si = 0
    small_ok = params.m_A is not None
    for k in range(1, max_back + 1):
        if n - k < env.x_min or n > env.x_max:
            raise EnvironmentRangeError(f"window of size {k} at {n} leaves [{env.x_min}, {env.x_max}]")
        a = env.A(n - k, auto=False)
        i = env.I(n - k + 1, auto=False)
        sa += a
        si += i
        if k < params.k0:
            if small_ok:
                small_ok = a >= params.m_A and i == params.m_I
                if small_ok:
                    return k
        elif sa >= params.beta_A * k and si <= params.beta_I * k:
            return k
    return None


def compute_K_array(env: Environment, ns: Sequence[int], params: FrontierParams,
                    max_back: Optional[int] = None) -> np.ndarray:
    """Vectorized K_n for many n; censored entries are -1."""
    if max_back is None:
        max_back = 10 * params.k0
    ns = np.asarray(ns, dtype=np.int64)
    lo, hi = int(ns.min()) - max_back, int(ns.max())
    A = env.array("A", lo, hi)
    I = env.array("I", lo, hi)
    out = np.full(len(ns), -1, dtype=np.int64)
    idx = ns - lo
    sa = np.zeros(len(ns), dtype=np.int64)
    si = np.zeros(len(ns), dtype=np.int64)
    small = np.full(len(ns), params.m_A is not None)
    for k in range(1, max_back + 1):
        a = A[idx - k]
        i = I[idx - k + 1]
        sa += a
        si += i
        if k < params.k0:
            if params.m_A is not None:
                small &= (a >= params.m_A) & (i == params.m_I)
                hit = small & (out < 0)
            else:
                continue
        else:
            hit = (sa >= params.beta_A * k) & (si <= params.beta_I * k) & (out < 0)
        out[hit] = k
    return out


def compute_nu(env: Environment, walks, n: int, params: FrontierParams, cap: float,
               K: Optional[int] = None) -> Optional[float]:
    """nu_n: first time Z(K_n) labels of W_n have hit site n; None if later than ``cap``."""
    if K is None:
        K = compute_K(env, n, params, max_back=None)
        if K is None:
            raise ValueError(f"K_{n} is censored; nu_{n} is undefined")
    Z = z_threshold(K, params)
    if Z <= 0:
        return 0.0
    # keep the Z smallest hitting times; the current Z-th smallest caps later searches
    best: List[float] = []  # max-heap via negation
    bound = cap
    for x in range(n - K, n):
        for i in range(1, env.A(x) + 1):
            tau = hitting_time(walks, (x, i), n - x, bound)
            if tau is None:
                continue
            if len(best) < Z:
                heapq.heappush(best, -tau)
            elif tau < -best[0]:
                heapq.heapreplace(best, -tau)
            if len(best) == Z:
                bound = -best[0]
    if len(best) < Z:
        return None
    return -best[0]


@dataclass
class NuRow:
    n: int
    K: Optional[int]
    censored: bool
    nu: Optional[float]
    rho_gap: float
    bound_ok: Optional[bool]


def nu_bound_rows(trace: FrontTrace, env: Environment, walks, params: FrontierParams,
                  cap: float) -> List[NuRow]:
    """Check rho_n - rho_{n-1} <= nu_n for every reached n with K_n <= n (origin r0)."""
    rows = []
    r0 = trace.r0
    prev = trace.t0
    for k, t in enumerate(trace.rho, start=1):
        n = r0 + k
        gap = t - prev
        prev_t, prev = prev, t
        K = compute_K(env, n, params, max_back=k) if env.x_min <= r0 else None
        if K is None:
            rows.append(NuRow(n, None, True, None, gap, None))
            continue
        nu = compute_nu(env, walks, n, params, max(cap, gap), K=K)
        if nu is None:
            # nu exceeds the cap, which is at least the gap
            rows.append(NuRow(n, K, True, None, gap, True))
        else:
            # compare in absolute time: event times are computed as birth + path time
            rows.append(NuRow(n, K, False, nu, gap, t <= prev_t + nu))
    return rows


# ---------------------------------------------------------------------------
# good sites


def predicate_G(a_vec: Sequence[int], i_vec: Sequence[int], params: FrontierParams) -> int:
    """G(a, i) for a = (a_0..a_{n-1}), i = (i_1..i_n)."""
    n = len(a_vec)
    if n < 1 or len(i_vec) != n:
        raise ValueError("need equal lengths n >= 1")
    if params.m_A is None:
        raise UndefinedSmallWindow("predicate G needs m_A, which requires P(A - I >= 4) > 0")
    a_vec, i_vec = list(a_vec), [0] + list(i_vec)
    return int(all(_G_step(a_vec, i_vec, 0, j, params) for j in range(1, n + 1)))


def _G_step(A, I, base: int, j: int, params: FrontierParams) -> bool:
    # condition attached to index j, i.e. site base + j: a_j-1 = A[base + j - 1], i_j = I[base + j]
    n = base + j
    if j < params.k0:
        return I[n] == params.m_I and A[n - 1] >= params.m_A
    k0 = params.k0
    sa = sum(A[n - k0:n])
    si = sum(I[n - k0 + 1:n + 1])
    for size in range(k0, j + 1):
        if size > k0:
            sa += A[n - size]
            si += I[n - size + 1]
        if sa >= params.beta_A * size and si <= params.beta_I * size:
            return True
    return False


@dataclass
class MResult:
    M: int
    verified_to: int
    censored: bool
    L: List[int] = field(default_factory=list)


def find_M(env: Environment, params: FrontierParams, H: int) -> MResult:
    """Last L_k of the recursion L_{k+1} = inf{l >= L_k + k0 : K_l > l - L_k} below H."""
    if env.x_min > 0 or env.x_max < H:
        raise EnvironmentRangeError(f"environment must cover [0, {H}]")
    A = env.array("A", 0, H)
    I = env.array("I", 0, H)
    L = [0]
    cur = 0
    l = cur + params.k0
    while l <= H:
        if not _has_good_window(A, I, l, l - cur, params):
            L.append(l)
            cur = l
            l = cur + params.k0
        else:
            l += 1
    return MResult(cur, H, H - cur < params.k0, L)


def _has_good_window(A, I, n, max_k, params) -> bool:
    """Some k <= max_k makes the window at n good (arrays start at site 0)."""
    k0 = params.k0
    if params.m_A is not None and A[n - 1] >= params.m_A and I[n] == params.m_I:
        return True
    if max_k < k0:
        return False
    sa = A[n - max_k:n][::-1].cumsum()
    si = I[n - max_k + 1:n + 1][::-1].cumsum()
    ks = np.arange(1, max_k + 1)
    good = (sa >= params.beta_A * ks) & (si <= params.beta_I * ks)
    return bool(good[k0 - 1:].any())


def find_M_sequence(env: Environment, params: FrontierParams, H: int,
                    count: Optional[int] = None) -> List[MResult]:
    """M^0, M^1, ... from the nested recursion on G, each verified up to H."""
    if params.m_A is None:
        raise UndefinedSmallWindow("M^i needs m_A, i.e. P(A - I >= 4) > 0")
    if env.x_min > 0 or env.x_max < H:
        raise EnvironmentRangeError(f"environment must cover [0, {H}]")
    A = env.array("A", 0, H).tolist()
    I = env.array("I", 0, H).tolist()
    out = []
    base = 0
    while base <= H and (count is None or len(out) < count):
        Ls = [base]
        cur = base
        l = cur + 1
        while l <= H:
            j = l - cur
            if not _G_step(A, I, cur, j, params):
                Ls.append(l)
                cur = l
            l += 1
        out.append(MResult(cur, H, cur >= H, Ls))
        base = cur + 1
    return out


def remark_check(env: Environment, params: FrontierParams, M: int, H: int, start: int) -> bool:
    """K_{M+n} <= n for all start <= n <= H - M."""
    for n in range(start, H - M + 1):
        K = compute_K(env, M + n, params, max_back=n)
        if K is None:
            return False
    return True


# ---------------------------------------------------------------------------
# speed


@dataclass
class SpeedEstimate:
    slopes: np.ndarray         # replicas x windows
    edges: np.ndarray          # window boundaries
    mean: float
    ci: Tuple[float, float]
    cv: float                  # spread of per-window mean slopes
    excluded: int
    used: int


def window_slopes(trace: FrontTrace, edges: Sequence[float], dt: float = 1.0) -> np.ndarray:
    """Least-squares slope of r_t on each window [edges[k], edges[k+1]], sampled every dt."""
    rho = np.asarray(trace.rho)
    out = []
    for a, b in zip(edges[:-1], edges[1:]):
        t = np.arange(a, b + dt / 2, dt)
        r = trace.r0 + np.searchsorted(rho, t, side="right")
        tc = t - t.mean()
        out.append(float(np.dot(tc, r - r.mean()) / np.dot(tc, tc)))
    return np.array(out)


def front_speed(traces: Sequence[FrontTrace], t_start: float, t_end: float, n_windows: int = 10,
                dt: float = 1.0, confidence: float = 0.95, n_resamples: int = 2000,
                seed: int = 0) -> SpeedEstimate:
    """Windowed slopes of r_t over [t_start, t_end] and a bootstrap CI of their mean.

    Traces that died out before ``t_end`` are excluded and counted.  With a
    single surviving replica the bootstrap resamples its windows instead.
    """
    if n_windows < 2:
        raise ValueError("need at least two windows")
    edges = np.linspace(t_start, t_end, n_windows + 1)
    kept = []
    excluded = 0
    for tr in traces:
        if tr.outcome == "extinct" and tr.final_time < t_end:
            excluded += 1
            continue
        kept.append(window_slopes(tr, edges, dt))
    if not kept:
        return SpeedEstimate(np.empty((0, n_windows)), edges, math.nan, (math.nan, math.nan),
                             math.nan, excluded, 0)
    S = np.vstack(kept)
    per_rep = S.mean(axis=1)
    sample = per_rep if len(per_rep) >= 2 else S[0]
    m = float(sample.mean())
    if np.ptp(sample) == 0:
        ci = (m, m)
    else:
        res = stats.bootstrap((sample,), np.mean, confidence_level=confidence, n_resamples=n_resamples,
                              method="percentile", random_state=np.random.default_rng(seed))
        ci = (float(res.confidence_interval.low), float(res.confidence_interval.high))
    wm = S.mean(axis=0)
    cv = float(wm.std(ddof=1) / wm.mean()) if wm.mean() != 0 else math.inf
    return SpeedEstimate(S, edges, m, ci, cv, excluded, len(kept))
