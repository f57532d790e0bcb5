"""Exact and numerical oracles.

Extinction probabilities for geometric immunity, the survival lower bound,
exponentials of power series (Sparre-Andersen coefficients), the state
functionals f_theta / d_theta and the generator growth constants.

Functions that take rational inputs (``Fraction`` parameters) return exact
rationals; everything else runs in floating point.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .laws import (Deterministic, Empirical, Environment, Geometric, LawError, LawSpec, PowerTail,
                   mean)

LATTICE_CAP = 10 ** 8


# ---------------------------------------------------------------------------
# extinction with geometric immunity


def extinction_fixed_point(a: int, p: float, tol: float = 1e-12) -> float:
    """Root of y = (p y + 1 - p)^a inside (0, 1), or 1 when p a <= 1."""
    if a < 1 or not (0 < p <= 1):
        raise ValueError("need a >= 1 and p in (0, 1]")
    if p == 1:
        return 0.0
    if p * a <= 1:
        return 1.0

    def g(y):
        return (p * y + 1 - p) ** a - y

    # g > 0 at 0 and g < 0 just below 1 in the supercritical case
    lo, hi = 0.0, 1.0 - 1e-9
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    y = 0.5 * (lo + hi)
    for _ in range(20):
        d = a * p * (p * y + 1 - p) ** (a - 1) - 1
        step = g(y) / d
        y -= step
        if abs(step) < 1e-17:
            break
    if abs(g(y)) > tol:
        raise ArithmeticError(f"fixed point residual {g(y)} exceeds {tol}")
    return y


def extinction_terms_closed(a: int, p, N: int) -> List:
    """Terms (1/n) C(an, n-1) p^(n-1) (1-p)^(n(a-1)+1), n = 1..N (exact for rational p)."""
    exact = isinstance(p, (Fraction, int))
    out = []
    for n in range(1, N + 1):
        if exact:
            p = Fraction(p)
            out.append(Fraction(math.comb(a * n, n - 1), n) * p ** (n - 1) * (1 - p) ** (n * (a - 1) + 1))
        else:
            # log-space to survive large binomials
            lt = (math.lgamma(a * n + 1) - math.lgamma(n) - math.lgamma(a * n - n + 2) - math.log(n)
                  + (n - 1) * math.log(p) + (n * (a - 1) + 1) * math.log1p(-p)) if p < 1 else None
            out.append(0.0 if lt is None else math.exp(lt))
    return out


def _bounded_pmf(law: LawSpec) -> Dict[int, object]:
    if isinstance(law, Deterministic):
        return {int(law.v): Fraction(1)}
    if isinstance(law, Empirical):
        return dict(law.pmf_map)
    raise LawError(f"{law} does not have bounded support; the convolution lattice would be unbounded")


def hitting_time_pmf(offspring: LawSpec, p, m: int, N: int) -> List:
    """P(tau = n | A_0 = m) for n = 1..N, tau the first n with m + sum_{k<=n} A~_k B_k = n."""
    return _hitting_terms(offspring, p, [m], N)[m]


def _hitting_terms(offspring: LawSpec, p, ms: Sequence[int], N: int) -> Dict[int, List]:
    pmf = _bounded_pmf(offspring)
    exact = isinstance(p, (Fraction, int)) and all(isinstance(v, (Fraction, int)) for v in pmf.values())
    if N * max(max(pmf), 1) > LATTICE_CAP:
        raise MemoryError("convolution lattice exceeds cap")
    if exact:
        p = Fraction(p)
        one = Fraction(1)
    else:
        p = float(p)
        pmf = {k: float(v) for k, v in pmf.items()}
        one = 1.0
    # law of X = A~ * B
    X: Dict[int, object] = {0: one - p}
    for k, v in pmf.items():
        X[k] = X.get(k, 0) + p * v
    X = {k: v for k, v in X.items() if v}
    # dist[s] = P(sum of n copies of X = s), truncated at N
    out = {m: [] for m in ms}
    if exact:
        dist = {0: one}
        for n in range(1, N + 1):
            nd: Dict[int, object] = {}
            for s, ps in dist.items():
                for k, pk in X.items():
                    t = s + k
                    if t <= N:
                        nd[t] = nd.get(t, 0) + ps * pk
            dist = nd
            for m in ms:
                need = n - m
                out[m].append(Fraction(m, n) * dist.get(need, 0) if need >= 0 else Fraction(0))
    else:
        kern = np.zeros(max(X) + 1)
        for k, v in X.items():
            kern[k] = v
        dist = np.zeros(N + 1)
        dist[0] = 1.0
        for n in range(1, N + 1):
            dist = np.convolve(dist, kern)[:N + 1]
            for m in ms:
                need = n - m
                out[m].append(m / n * dist[need] if need >= 0 else 0.0)
    return out


def extinction_series(offspring: LawSpec, p, N: int, closed: Optional[bool] = None):
    """Partial sum (n <= N) of the hitting-time series for the extinction probability.

    The initial mass is A_0 conditioned on A_0 > 0.  For a deterministic
    offspring law the closed binomial form is used; pass ``closed=False`` to
    force the convolution form.
    """
    if closed is None:
        closed = isinstance(offspring, Deterministic)
    if closed:
        if not isinstance(offspring, Deterministic):
            raise LawError("closed form needs a deterministic offspring law")
        terms = extinction_terms_closed(int(offspring.v), p, N)
        return sum(terms) if not isinstance(terms[0], float) else math.fsum(terms)
    pmf = _bounded_pmf(offspring)
    pos = {m: v for m, v in pmf.items() if m > 0}
    z = sum(pos.values())
    terms = _hitting_terms(offspring, p, list(pos), N)
    total = 0
    for m, w in pos.items():
        s = sum(terms[m]) if not isinstance(terms[m][0], float) else math.fsum(terms[m])
        total += (w / z) * s
    return total


# ---------------------------------------------------------------------------
# survival


def survival_prefix_check(mass: int, env: Environment, n: int, r0: int = 0) -> bool:
    """Whether mass + sum_{k<j} A_{r0+k} >= sum_{k<=j} I_{r0+k} holds for every j <= n."""
    if n <= 0:
        return True
    env.extend_to(r0 + 1, r0 + n)
    I = env.array("I", r0 + 1, r0 + n)
    A = env.array("A", r0 + 1, r0 + n)
    have = mass + np.concatenate(([0], np.cumsum(A[:-1])))
    return bool(np.all(have >= np.cumsum(I)))


def _difference_pmf(A: LawSpec, I: LawSpec, trunc: int):
    """Sub-probability pmf of D = A - I on an offset grid, plus the truncated mass of I."""
    pa = _bounded_pmf(A) if not isinstance(A, (Geometric, PowerTail)) else None
    if pa is None:
        raise LawError("offspring law must have bounded support")
    if isinstance(I, (Geometric, PowerTail)):
        pi = {k: float(I.pmf(k)) for k in range(1, trunc + 1)}
        lost = float(I.tail(trunc + 1))
    else:
        pi = {k: float(v) for k, v in _bounded_pmf(I).items()}
        lost = 0.0
    lo = min(pa) - max(pi)
    hi = max(pa) - min(pi)
    kern = np.zeros(hi - lo + 1)
    for a, va in pa.items():
        for i, vi in pi.items():
            kern[a - i - lo] += float(va) * vi
    return kern, lo, lost


def deficit_probabilities(A: LawSpec, I: LawSpec, N: int, trunc: int = 200) -> np.ndarray:
    """Upper estimates of q_n = P(A_1 + ... + A_n < I_1 + ... + I_n), n = 1..N.

    Exact for bounded laws.  For unbounded immunity the law is cut at
    ``trunc`` and the cut mass is counted as a deficit, so each entry is an
    upper bound on q_n (within float rounding).
    """
    kern, lo, lost = _difference_pmf(A, I, trunc)
    q = np.empty(N)
    dist = np.array([1.0])
    off = 0  # value of dist[0]
    for n in range(1, N + 1):
        dist = np.convolve(dist, kern)
        off += lo
        neg = -off  # index of value 0
        below = dist[:max(0, min(neg, len(dist)))].sum()
        q[n - 1] = min(1.0, below + (1.0 - (1.0 - lost) ** n))
        # keep the grid from growing without bound: mass far above 0 never returns below 0
        # within the remaining steps only if the step is bounded below by lo
        cut_hi = neg + (N - n) * (-lo) + 1
        if lo < 0 and cut_hi < len(dist):
            dist = dist[:cut_hi].copy()
    return q


def _chernoff_rate(A: LawSpec, I: LawSpec) -> Optional[float]:
    """inf_l E[exp(-l (A - I))]; None if I has no exponential moment."""
    if isinstance(I, PowerTail):
        return None
    pa = _bounded_pmf(A)
    if isinstance(I, Geometric):
        p = float(I.p)
        lmax = -math.log1p(-p) if p < 1 else 50.0

        def mgf_i(l):
            return p * math.exp(l) / (1 - (1 - p) * math.exp(l)) if p < 1 else math.exp(l)
    else:
        pi = _bounded_pmf(I)
        lmax = 50.0

        def mgf_i(l):
            return sum(float(v) * math.exp(l * k) for k, v in pi.items())

    def f(l):
        return sum(float(v) * math.exp(-l * k) for k, v in pa.items()) * mgf_i(l)

    res = minimize_scalar(f, bounds=(1e-9, lmax * (1 - 1e-6)), method="bounded")
    return float(min(res.fun, 1.0))


@dataclass
class SurvivalBound:
    partial: float            # delta0 * exp(-sum_{n<=N} q_n / n)
    certified: Optional[float]  # partial with the tail of the series bounded (None if unavailable)
    exponent: float
    remainder: Optional[float]
    q: np.ndarray


def survival_lower_bound(A: LawSpec, I: LawSpec, delta0: float, N: int = 200,
                         indexing: str = "lemma", trunc: int = 200) -> SurvivalBound:
    """Lower bound delta0 exp(-sum_n q_n / n) on the survival probability.

    ``indexing`` selects the inner event: "lemma" is sum_{k=1}^n A_k <
    sum_{j=2}^{n+1} I_j, "remark" is sum_{k=1}^n A_{k-1} < sum_{j=1}^n I_j.  Both
    compare n fresh offspring values with n fresh immunities, so the
    probabilities coincide; the remark form with delta0 = 1 is the exact
    survival probability when the initial mass is distributed as A.
    """
    if indexing not in ("lemma", "remark"):
        raise ValueError("indexing must be 'lemma' or 'remark'")
    mA, mI = mean(A), mean(I)
    if mA <= mI:
        raise ValueError(f"mean offspring {mA} <= mean immunity {mI}: survival only with infinite initial mass")
    q = deficit_probabilities(A, I, N, trunc)
    expo = float(np.sum(q / np.arange(1, N + 1)))
    partial = delta0 * math.exp(-expo)
    rho = _chernoff_rate(A, I)
    rem = None
    cert = None
    if rho is not None and rho < 1:
        rem = rho ** (N + 1) / ((N + 1) * (1 - rho))
        cert = delta0 * math.exp(-(expo + rem))
    return SurvivalBound(partial, cert, expo, rem, q)


def delta0_for_mass(mass: int, I: LawSpec) -> float:
    """P(mass >= I)."""
    return float(1 - I.tail(mass + 1))


# ---------------------------------------------------------------------------
# power series


@dataclass
class PowerSeries:
    coeffs: list

    def __getitem__(self, n):
        return self.coeffs[n]

    def __len__(self):
        return len(self.coeffs)


def exp_power_series(w: Sequence) -> PowerSeries:
    """Coefficients of exp(sum_{n>=1} w_n s^n) up to s^N, with w = (w_1, ..., w_N).

    Uses n c_n = sum_{k=1}^n k w_k c_{n-k}; exact when the w_n are rationals.
    """
    N = len(w)
    exact = all(isinstance(x, (int, Fraction)) for x in w)
    c = [Fraction(1) if exact else 1.0]
    for n in range(1, N + 1):
        s = sum((k * w[k - 1] * c[n - k] for k in range(1, n + 1)), Fraction(0) if exact else 0.0)
        c.append(s / n)
    return PowerSeries(c)


def _sum_law_exact(pmf: Mapping[int, object], n: int) -> Dict[int, object]:
    dist = {0: Fraction(1) if all(isinstance(v, (int, Fraction)) for v in pmf.values()) else 1.0}
    for _ in range(n):
        nd: Dict[int, object] = {}
        for s, ps in dist.items():
            for k, pk in pmf.items():
                nd[s + k] = nd.get(s + k, 0) + ps * pk
        dist = nd
    return dist


def sparre_andersen_weights(law: LawSpec, beta, N: int, side: str = "below",
                            mc_samples: int = 0, seed: int = 0):
    """w_n = P(S_n < beta n) / n (side "below") or P(S_n > beta n) / n (side "above").

    Bounded laws are handled exactly; an unbounded law needs ``mc_samples`` and
    returns (w, standard errors).
    """
    try:
        pmf = _bounded_pmf(law)
    except LawError:
        pmf = None
    if pmf is None:
        if mc_samples <= 0:
            raise LawError("unbounded step law: pass mc_samples for a Monte Carlo estimate")
        rng = np.random.default_rng(seed)
        x = law.from_uniform(rng.random((mc_samples, N)))
        s = np.cumsum(x, axis=1)
        n = np.arange(1, N + 1)
        ev = s < float(beta) * n if side == "below" else s > float(beta) * n
        f = ev.mean(axis=0)
        se = np.sqrt(f * (1 - f) / mc_samples)
        return list(f / n), list(se / n)
    w = []
    dist = {0: Fraction(1)}
    for n in range(1, N + 1):
        nd: Dict[int, object] = {}
        for s, ps in dist.items():
            for k, pk in pmf.items():
                nd[s + k] = nd.get(s + k, 0) + ps * pk
        dist = nd
        if side == "below":
            pr = sum((v for s, v in dist.items() if s < beta * n), 0)
        else:
            pr = sum((v for s, v in dist.items() if s > beta * n), 0)
        w.append(pr / n if isinstance(pr, (int, Fraction)) else float(pr) / n)
    return w


def sparre_andersen_all_positive(law: LawSpec, beta, N: int, side: str = "below") -> List:
    """P(N_n = n), n = 0..N: all n partial sums of (beta - X) (side "below") or of
    (X - beta) (side "above") are positive."""
    w = sparre_andersen_weights(law, beta, N, side)
    return exp_power_series(w).coeffs


def all_positive_bruteforce(pmf: Mapping[int, object], beta, n: int, side: str = "below"):
    """Exhaustive oracle for P(all partial sums positive) over every step sequence."""
    items = list(pmf.items())
    total = Fraction(0)
    for seq in itertools.product(items, repeat=n):
        s = 0
        ok = True
        pr = Fraction(1)
        for j, (x, px) in enumerate(seq, start=1):
            s += x
            pr *= px
            if (side == "below" and not beta * j - s > 0) or (side == "above" and not s - beta * j > 0):
                ok = False
                break
        if ok:
            total += pr
    return total


# ---------------------------------------------------------------------------
# state functionals


def _living_counts(state) -> Dict[int, int]:
    if hasattr(state, "eta"):
        return dict(state.eta)
    out: Dict[int, int] = {}
    for w in state.living.values():
        out[w.pos] = out.get(w.pos, 0) + 1
    return out


def f_theta(state, theta: float) -> float:
    """sum_x eta(x) e^{theta (x - r)} over living parasites."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    r = state.r
    return math.fsum(c * math.exp(theta * (x - r)) for x, c in _living_counts(state).items())


def growth_f_theta(state, theta: float) -> float:
    """sum of e^{theta F} over living and ghost labels (absolute positions)."""
    if hasattr(state, "eta"):
        vals = [(x, c) for x, c in state.eta.items()] + [(x, c) for x, c in state.eta_bar.items()]
        return math.fsum(c * math.exp(theta * x) for x, c in vals)
    return math.fsum(math.exp(theta * w.pos) for w in itertools.chain(state.living.values(),
                                                                      state.ghosts.values()))


def d_theta(s1, s2, theta: float) -> float:
    """Distance between two states of the same kind.

    Count states: |r-r'| + |iota-iota'| (+ left-front terms) +
    sum_x |eta(x) - eta'(x)| e^{theta (x - min(r, r'))}.  Tagged states:
    |r-r'| + |iota-iota'| + sum over labels of the living and ghost terms.
    """
    if hasattr(s1, "eta"):
        d = abs(s1.r - s2.r) + abs(s1.iota - s2.iota)
        if s1.l is not None or s2.l is not None:
            d += abs((s1.l or 0) - (s2.l or 0)) + abs((s1.iota_l or 0) - (s2.iota_l or 0))
        m = min(s1.r, s2.r)
        for x in set(s1.eta) | set(s2.eta):
            d += abs(s1.eta.get(x, 0) - s2.eta.get(x, 0)) * math.exp(theta * (x - m))
        return d
    d = abs(s1.r - s2.r) + abs(s1.iota - s2.iota)
    labels = set(s1.living) | set(s2.living) | set(s1.ghosts) | set(s2.ghosts)
    for lab in labels:
        a = math.exp(theta * (s1.living[lab].pos - s1.r)) if lab in s1.living else 0.0
        b = math.exp(theta * (s2.living[lab].pos - s2.r)) if lab in s2.living else 0.0
        g1 = s1.ghosts[lab].pos if lab in s1.ghosts else 0
        g2 = s2.ghosts[lab].pos if lab in s2.ghosts else 0
        d += abs(a - b) + abs(g1 - g2)
    return d


def growth_bounds(theta: float, mean_A: float):
    """(lambda1, lambda2) = (e^t + e^-t - 2, e^-t - 2 + (1 + E[A]) e^t)."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    l1 = math.exp(theta) + math.exp(-theta) - 2
    l2 = math.exp(-theta) - 2 + (1 + mean_A) * math.exp(theta)
    return l1, l2


def front_tail_bound(gamma: float, theta: float, t: float, f_value: float, r: float,
                     mean_A: float) -> float:
    """min(1, e^{-c t} f e^{-theta r}) with c = gamma theta - lambda2; 1 when c <= 0."""
    _, l2 = growth_bounds(theta, mean_A)
    c = gamma * theta - l2
    if c <= 0:
        return 1.0
    return min(1.0, math.exp(-c * t) * f_value * math.exp(-theta * r))
