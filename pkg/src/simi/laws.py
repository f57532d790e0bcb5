"""Immunity and offspring laws, samplers, exact moments and quenched environments.

Four families are supported:

* ``Deterministic(v)``      point mass at v
* ``Geometric(p)``          P(X = k) = p (1-p)^(k-1), k >= 1
* ``PowerTail(s, a)``       P(X >= n) = ((n-1)/s + 1)^(-a), n >= 1
* ``Empirical(pmf)``        finite pmf {value: probability}

All samplers work by inversion of a uniform, which keeps environments
extension-stable: site x always consumes the same uniform.
"""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Optional, Union

import numpy as np

from .streams import ROLE_ENV, substream, zigzag

Number = Union[int, float, Fraction]

ROLE_A = 0
ROLE_I = 1
BLOCK = 256


class LawError(ValueError):
    pass


class InfiniteMeanError(LawError):
    pass


class EnvironmentRangeError(IndexError):
    """Raised when a site outside the realized environment is requested."""


# ---------------------------------------------------------------------------
# law families


@dataclass(frozen=True)
class Deterministic:
    v: int

    def __post_init__(self):
        if int(self.v) != self.v or self.v < 0:
            raise LawError(f"Deterministic value must be a nonneg integer, got {self.v}")

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        return np.full(np.shape(u), int(self.v), dtype=np.int64)

    def tail(self, n: int) -> float:
        return 1.0 if self.v >= n else 0.0

    def pmf(self, n: int) -> float:
        return 1.0 if n == self.v else 0.0

    def support_min(self, k) -> Optional[int]:
        return int(self.v) if self.v >= k else None

    def max_value(self) -> Optional[int]:
        return int(self.v)

    def __str__(self):
        return f"det:{self.v}"


@dataclass(frozen=True)
class Geometric:
    p: Number

    def __post_init__(self):
        if not (0 < self.p <= 1):
            raise LawError(f"Geometric parameter must lie in (0,1], got {self.p}")

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        p = float(self.p)
        u = np.asarray(u, dtype=float)
        if p >= 1.0:
            return np.ones(u.shape, dtype=np.int64)
        # 1-u lies in (0,1]; P(k >= n) = P(1-u < (1-p)^(n-1))
        k = np.ceil(np.log1p(-u) / math.log1p(-p))
        return np.maximum(k, 1).astype(np.int64)

    def tail(self, n: int):
        if n <= 1:
            return 1.0 if not isinstance(self.p, Fraction) else Fraction(1)
        return (1 - self.p) ** (n - 1)

    def pmf(self, n: int):
        if n < 1:
            return 0.0
        return self.p * (1 - self.p) ** (n - 1)

    def support_min(self, k) -> Optional[int]:
        return max(1, math.ceil(k))

    def max_value(self) -> Optional[int]:
        return 1 if self.p == 1 else None

    def __str__(self):
        return f"geom:{self.p}"


@dataclass(frozen=True)
class PowerTail:
    s: float
    a: float

    def __post_init__(self):
        if not self.s > 0:
            raise LawError(f"PowerTail scale must be positive, got {self.s}")
        if not self.a > 1:
            raise LawError(f"PowerTail exponent must exceed 1, got {self.a}")

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        v = 1.0 - np.asarray(u, dtype=float)  # in (0,1]
        x = np.floor(1.0 + self.s * (v ** (-1.0 / self.a) - 1.0))
        # overflow guard for astronomically small v
        x = np.minimum(x, 2.0 ** 62)
        return np.maximum(x, 1).astype(np.int64)

    def tail(self, n: int) -> float:
        if n <= 1:
            return 1.0
        return ((n - 1) / self.s + 1.0) ** (-self.a)

    def pmf(self, n: int) -> float:
        if n < 1:
            return 0.0
        return self.tail(n) - self.tail(n + 1)

    def support_min(self, k) -> Optional[int]:
        return max(1, math.ceil(k))

    def max_value(self) -> Optional[int]:
        return None

    def __str__(self):
        return f"powertail:{self.s}:{self.a}"


@dataclass(frozen=True)
class Empirical:
    pmf_map: Dict[int, Number] = field(default_factory=dict)

    def __post_init__(self):
        if not self.pmf_map:
            raise LawError("Empirical pmf is empty")
        clean = {}
        for k, v in self.pmf_map.items():
            if int(k) != k or k < 0:
                raise LawError(f"Empirical support must be nonneg integers, got {k}")
            if v < 0:
                raise LawError(f"negative probability {v} at {k}")
            if v > 0:
                clean[int(k)] = v
        total = sum(clean.values())
        if abs(float(total) - 1.0) > 1e-12:
            warnings.warn(f"Empirical pmf sums to {float(total)!r}; renormalizing", stacklevel=3)
            clean = {k: v / total for k, v in clean.items()}
        object.__setattr__(self, "pmf_map", dict(sorted(clean.items())))
        vals = np.array(list(self.pmf_map.keys()), dtype=np.int64)
        cdf = np.cumsum([float(v) for v in self.pmf_map.values()])
        object.__setattr__(self, "_vals", vals)
        object.__setattr__(self, "_cdf", cdf)

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self._cdf, np.asarray(u, dtype=float), side="right")
        return self._vals[np.minimum(idx, len(self._vals) - 1)]

    def tail(self, n: int):
        return sum(v for k, v in self.pmf_map.items() if k >= n)

    def pmf(self, n: int):
        return self.pmf_map.get(n, 0)

    def support_min(self, k) -> Optional[int]:
        for v in self.pmf_map:
            if v >= k:
                return v
        return None

    def max_value(self) -> Optional[int]:
        return max(self.pmf_map)

    def __str__(self):
        body = ",".join(f"{k}:{v}" for k, v in self.pmf_map.items())
        return f"pmf:{{{body}}}"


LawSpec = Union[Deterministic, Geometric, PowerTail, Empirical]


# ---------------------------------------------------------------------------
# functional interface


def sample(law: LawSpec, rng: np.random.Generator, size=None):
    """Draw from ``law`` using ``rng``.  Returns an int when size is None."""
    if size is None:
        return int(law.from_uniform(np.array([rng.random()]))[0])
    return law.from_uniform(rng.random(size))


def tail(law: LawSpec, n: int):
    """P(X >= n)."""
    return law.tail(n)


def pmf(law: LawSpec, n: int):
    return law.pmf(n)


def support_min(law: LawSpec, k) -> Optional[int]:
    """m(X, k): the smallest support point j >= k, or None."""
    return law.support_min(k)


def _hurwitz_zeta(a: float, q: float, terms: int = 64) -> float:
    # direct sum of the first terms, then Euler-Maclaurin on the remainder
    s = math.fsum((n + q) ** (-a) for n in range(terms))
    x = terms + q
    tail = x ** (1 - a) / (a - 1) + 0.5 * x ** (-a)
    # Bernoulli corrections B2/2!, B4/4!, B6/6!, B8/8!
    coeffs = (1 / 12, -1 / 720, 1 / 30240, -1 / 1209600)
    rising = a
    power = x ** (-a - 1)
    tail += coeffs[0] * rising * power
    for j, c in enumerate(coeffs[1:], start=1):
        rising *= (a + 2 * j - 1) * (a + 2 * j)
        power /= x * x
        tail += c * rising * power
    return s + tail


def mean(law: LawSpec, strict: bool = False) -> float:
    """Expectation of ``law``.

    PowerTail uses E[X] = sum_n P(X >= n) = s^a * zeta(a, s).  An exponent at or
    below 1 has no finite mean.  With ``strict=True`` the exponent must exceed 2
    (the finite-variance regime assumed by the survival lemmas), otherwise
    :class:`InfiniteMeanError` is raised.
    """
    if isinstance(law, Deterministic):
        return float(law.v)
    if isinstance(law, Geometric):
        return 1.0 / float(law.p)
    if isinstance(law, Empirical):
        return float(sum(k * v for k, v in law.pmf_map.items()))
    if isinstance(law, PowerTail):
        if law.a <= 1 or (strict and law.a <= 2):
            raise InfiniteMeanError(f"PowerTail exponent {law.a} too small for a finite-mean context")
        return law.s ** law.a * _hurwitz_zeta(law.a, law.s)
    raise LawError(f"unknown law {law!r}")


def exact_pmf(law: LawSpec, upto: Optional[int] = None) -> Dict[int, Number]:
    """Exact pmf as a dict for bounded laws; Geometric is truncated at ``upto``."""
    if isinstance(law, Deterministic):
        return {int(law.v): Fraction(1)}
    if isinstance(law, Empirical):
        return dict(law.pmf_map)
    if upto is None:
        raise LawError(f"{law} has unbounded support; give a truncation point")
    return {k: law.pmf(k) for k in range(1, upto + 1)}


# ---------------------------------------------------------------------------
# parsing

_NUM = r"[-+]?[0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?(?:/[0-9]+)?"


def _num(tok: str) -> Number:
    tok = tok.strip()
    if "/" in tok:
        return Fraction(tok)
    if re.fullmatch(r"[-+]?[0-9]+", tok):
        return int(tok)
    return float(tok)


def parse_law(text: str) -> LawSpec:
    """Parse ``det:4``, ``geom:0.9``, ``powertail:3:2.1`` or ``pmf:{0:0.1,4:0.9}``."""
    t = text.strip().replace(" ", "")
    try:
        kind, _, rest = t.partition(":")
        kind = kind.lower()
        if kind == "det":
            return Deterministic(int(rest))
        if kind == "geom":
            return Geometric(_num(rest))
        if kind == "powertail":
            s, a = rest.split(":")
            return PowerTail(float(s), float(a))
        if kind == "pmf":
            if not (rest.startswith("{") and rest.endswith("}")):
                raise LawError("pmf needs braces")
            items = {}
            for part in rest[1:-1].split(","):
                k, v = part.split(":")
                items[int(k)] = _num(v)
            return Empirical(items)
    except LawError:
        raise
    except (ValueError, ZeroDivisionError) as exc:
        raise LawError(f"cannot parse law {text!r}: {exc}") from None
    raise LawError(f"unknown law family in {text!r}")


def check_immunity(law: LawSpec) -> None:
    if isinstance(law, Deterministic) and law.v < 1:
        raise LawError("immunity law must be supported on {1,2,...}")
    if isinstance(law, Empirical) and min(law.pmf_map) < 1:
        raise LawError("immunity law must be supported on {1,2,...}")


# ---------------------------------------------------------------------------
# environment


class Environment:
    """Quenched (A_x, I_x), realized lazily in blocks of sites.

    Site x of role r reads uniform number x mod BLOCK of the stream keyed by
    (seed, ROLE_ENV, r, zigzag(x // BLOCK)), so the value at a site does not
    depend on which range was requested first.
    """

    def __init__(self, offspring: LawSpec, immunity: LawSpec, seed: int,
                 x_min: int = 0, x_max: int = 0, overrides: Optional[dict] = None):
        check_immunity(immunity)
        self.offspring_law = offspring
        self.immunity_law = immunity
        self.seed = int(seed)
        self._blocks: Dict[tuple, list] = {}
        self.x_min = int(x_min)
        self.x_max = int(x_max)
        # overrides: {"A": {x: v}, "I": {x: v}} for hand-built environments
        self._ovA = dict((overrides or {}).get("A", {}))
        self._ovI = dict((overrides or {}).get("I", {}))
        if self.x_max < self.x_min:
            raise EnvironmentRangeError("empty site range")

    def _block(self, role: int, b: int) -> list:
        key = (role, b)
        blk = self._blocks.get(key)
        if blk is None:
            law = self.offspring_law if role == ROLE_A else self.immunity_law
            u = substream(self.seed, ROLE_ENV, role, zigzag(b)).random(BLOCK)
            blk = law.from_uniform(u).tolist()
            self._blocks[key] = blk
        return blk

    def extend_to(self, lo: int, hi: int) -> None:
        self.x_min = min(self.x_min, int(lo))
        self.x_max = max(self.x_max, int(hi))

    def covers(self, lo: int, hi: int) -> bool:
        return self.x_min <= lo and hi <= self.x_max

    def _get(self, role: int, x: int, auto: bool) -> int:
        if not (self.x_min <= x <= self.x_max):
            if not auto:
                raise EnvironmentRangeError(f"site {x} outside [{self.x_min}, {self.x_max}]")
            self.extend_to(x, x)
        ov = self._ovA if role == ROLE_A else self._ovI
        if x in ov:
            return ov[x]
        b, off = divmod(x, BLOCK)
        return self._block(role, b)[off]

    def A(self, x: int, auto: bool = True) -> int:
        return self._get(ROLE_A, x, auto)

    def I(self, x: int, auto: bool = True) -> int:
        return self._get(ROLE_I, x, auto)

    def array(self, role: str, lo: int, hi: int, auto: bool = False) -> np.ndarray:
        """Values on sites lo..hi inclusive as an int64 array."""
        if not auto and not self.covers(lo, hi):
            raise EnvironmentRangeError(f"[{lo}, {hi}] not inside [{self.x_min}, {self.x_max}]")
        self.extend_to(lo, hi)
        r = ROLE_A if role == "A" else ROLE_I
        ov = self._ovA if r == ROLE_A else self._ovI
        out = np.empty(hi - lo + 1, dtype=np.int64)
        b0, b1 = lo // BLOCK, hi // BLOCK
        for b in range(b0, b1 + 1):
            s = max(lo, b * BLOCK)
            e = min(hi, (b + 1) * BLOCK - 1)
            blk = self._block(r, b)
            out[s - lo:e - lo + 1] = blk[s - b * BLOCK:e - b * BLOCK + 1]
        for x, v in ov.items():
            if lo <= x <= hi:
                out[x - lo] = v
        return out

    @property
    def offspring(self) -> Dict[int, int]:
        return {x: self.A(x) for x in range(self.x_min, self.x_max + 1)}

    @property
    def immunities(self) -> Dict[int, int]:
        return {x: self.I(x) for x in range(self.x_min, self.x_max + 1)}

    @classmethod
    def from_values(cls, A: Dict[int, int], I: Dict[int, int], fill_A: int = 0, fill_I: int = 1):
        """Hand-built environment; sites not listed take the fill values."""
        sites = list(A) + list(I)
        env = cls(Deterministic(fill_A), Deterministic(fill_I), seed=0,
                  x_min=min(sites, default=0), x_max=max(sites, default=0),
                  overrides={"A": A, "I": I})
        return env

    def __repr__(self):
        return (f"Environment(A={self.offspring_law}, I={self.immunity_law}, seed={self.seed}, "
                f"range=[{self.x_min}, {self.x_max}])")


def sample_environment(site_range, offspring_law: LawSpec, immunity_law: LawSpec, seed: int) -> Environment:
    lo, hi = site_range
    return Environment(offspring_law, immunity_law, seed, lo, hi)
