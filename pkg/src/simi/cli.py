"""Command line entry point: ``simi <experiment> [--config F] [--seed S] [--replicas N] [--out DIR]``.

Exit codes: 0 success, 1 configuration error, 2 invariant violated,
3 resource cap reached (partial results are written with a PARTIAL marker).
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from functools import partial
from typing import Dict, List, Optional

import numpy as np

from . import analytics as an
from . import frontier as fr
from . import tagged_engine as te
from . import untagged_engine as ue
from .laws import Deterministic, Environment, Geometric, LawError, mean, parse_law
from .streams import ROLE_AUX, derive_seed, replica_seed
from .trace import ResourceCapExceeded

EXPERIMENTS = ("simulate", "extinction", "speed", "couple", "frontier-scan", "example-nonmonotone",
               "two-sided")

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT, EXIT_CAP = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "simulate"
    A: str = "det:4"                 # offspring law
    I: str = "geom:0.9"              # immunity law
    eta0: str = "A0"                 # "A0" (A_0 parasites at r0) or "x:c,x:c"
    r0: int = 0
    replicas: int = 100
    seed: int = 1
    time_horizon: float = 100.0
    front_target: int = 0            # 0 = none
    site_horizon: int = 20000        # survival verification depth (sites)
    ghosts: bool = False
    alpha: float = 2.0
    beta_A: float = 3.0
    beta_I: float = 2.0
    max_back: int = 0                # 0 = 10 k0
    nu_cap: float = 50.0
    M_horizon: int = 300
    windows: int = 5
    speed_from: float = 0.5          # analysis starts at this fraction of the horizon
    survival_n: int = 200            # prefix depth for the extinction experiment
    series_terms: int = 200
    lam: float = 0.0                 # corridor slope for two-sided runs
    max_events: int = 50_000_000
    max_walkers: int = 5_000_000
    workers: int = 1
    plot: bool = True
    out: str = "out"

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if self.time_horizon <= 0 or self.front_target < 0 or self.site_horizon <= 0:
            raise ConfigError("horizons must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.laws()
        except LawError as exc:
            raise ConfigError(str(exc)) from None
        self.initial(Environment(Deterministic(0), Deterministic(1), 0, 0, 0))

    def laws(self):
        return parse_law(self.A), parse_law(self.I)

    def initial(self, env: Environment) -> Dict[int, int]:
        if self.eta0.strip().upper() == "A0":
            a0 = env.A(self.r0)
            return {self.r0: a0} if a0 else {}
        out = {}
        try:
            for part in self.eta0.split(","):
                if part.strip():
                    x, c = part.split(":")
                    out[int(x)] = out.get(int(x), 0) + int(c)
        except ValueError:
            raise ConfigError(f"bad eta0 {self.eta0!r}") from None
        if any(x > self.r0 for x in out) or any(c < 0 for c in out.values()):
            raise ConfigError("eta0 must be nonnegative and supported left of r0")
        return out


def _coerce(value: str, typ):
    if typ is bool or typ == "bool":
        v = value.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(value)
    if typ in (int, "int"):
        return int(float(value)) if "e" in value.lower() else int(value.replace("_", ""))
    if typ in (float, "float"):
        return float(value)
    return value.strip()


def load_config(path: Optional[str], overrides: Dict[str, object]) -> ExperimentConfig:
    """Plain text ``key = value`` lines; ``#`` starts a comment."""
    cfg = ExperimentConfig()
    types = {f.name: f.type for f in fields(cfg)}
    if path:
        try:
            fh = open(path)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        with fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                k, v = (s.strip() for s in line.split("=", 1))
                k = k.replace("-", "_")
                if k not in types:
                    raise ConfigError(f"{path}:{lineno}: unknown key {k!r}")
                try:
                    setattr(cfg, k, _coerce(v, types[k]))
                except ValueError:
                    raise ConfigError(f"{path}:{lineno}: bad value {v!r} for {k}") from None
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg


def describe() -> str:
    lines = ["# experiment config keys and defaults (key = value)"]
    for f in fields(ExperimentConfig):
        lines.append(f"{f.name} = {getattr(ExperimentConfig(), f.name)}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# helpers


def _env_seed(cfg, i):
    return derive_seed(replica_seed(cfg.seed, i), ROLE_AUX, 0)


def _walk_seed(cfg, i):
    return derive_seed(replica_seed(cfg.seed, i), ROLE_AUX, 1)


def _clock_seed(cfg, i):
    return derive_seed(replica_seed(cfg.seed, i), ROLE_AUX, 2)


def _map(func, items, workers):
    if workers <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, items, chunksize=max(1, len(items) // (4 * workers))))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _plot_fronts(path, traces, horizon, title):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "simi"
    fig, ax = plt.subplots(figsize=(7, 4))
    for tr in traces:
        t, r = tr.front_path()
        t = list(t) + [min(horizon, tr.final_time)]
        r = list(r) + [r[-1]]
        ax.step(t, r, where="post", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("r_t")
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _partial_marker(out, msg):
    with open(os.path.join(out, "PARTIAL"), "w") as fh:
        fh.write(msg + "\n")


# ---------------------------------------------------------------------------
# replicas (top level so they pickle)


def _tagged_replica(cfg: ExperimentConfig, i: int, condition: bool = False):
    A, I = cfg.laws()
    env = Environment(A, I, _env_seed(cfg, i))
    eta0 = cfg.initial(env)
    mass = sum(eta0.values())
    survives = an.survival_prefix_check(mass, env, cfg.site_horizon, cfg.r0)
    if condition and not survives:
        return i, None, survives
    st = te.init(eta0, cfg.r0, env, seed=_walk_seed(cfg, i))
    stop = te.Stop(time=cfg.time_horizon, front=cfg.front_target or None)
    try:
        tr, _ = te.run(st, env, stop, ghosts_walk=cfg.ghosts, max_events=cfg.max_events,
                       max_walkers=cfg.max_walkers)
    except ResourceCapExceeded as exc:
        return i, exc.trace, survives
    return i, tr, survives


def _frontier_replica(cfg: ExperimentConfig, params, i: int):
    A, I = cfg.laws()
    env = Environment(A, I, _env_seed(cfg, i))
    eta0 = {cfg.r0: env.A(cfg.r0)}
    walks = te.WalkFamily(_walk_seed(cfg, i))
    st = te.init(eta0, cfg.r0, env, walks=walks)
    stop = te.Stop(time=cfg.time_horizon, front=cfg.front_target or 30)
    tr, _ = te.run(st, env, stop, ghosts_walk=False, max_events=cfg.max_events)
    rows = fr.nu_bound_rows(tr, env, walks, params, cfg.nu_cap)
    env.extend_to(0, cfg.M_horizon)
    Mres = fr.find_M(env, params, cfg.M_horizon)
    Mseq = fr.find_M_sequence(env, params, cfg.M_horizon, count=20) if params.m_A is not None else []
    return i, rows, Mres, Mseq


def _couple_replica(cfg: ExperimentConfig, i: int):
    A, I = cfg.laws()
    env = Environment(A, I, _env_seed(cfg, i))
    rng = np.random.default_rng(derive_seed(replica_seed(cfg.seed, i), ROLE_AUX, 3))
    eta2, eta1 = dominated_pair(rng, cfg.r0, env.A(cfg.r0))
    clocks = ue.ClockField(_clock_seed(cfg, i))
    c1 = ue.make_state(eta1, cfg.r0, env)
    c2 = ue.make_state(eta2, cfg.r0, env)
    res = ue.coupled_run(c1, c2, clocks, env, stop=ue.Stop(time=cfg.time_horizon, front=cfg.front_target or None),
                         max_events=cfg.max_events)
    return i, res


def dominated_pair(rng: np.random.Generator, r: int, base: int):
    """A random configuration and a prefix-dominated one (parasites removed or moved left)."""
    eta2: Dict[int, int] = {}
    for _ in range(max(1, base + int(rng.integers(0, 4)))):
        x = r - int(rng.integers(0, 4))
        eta2[x] = eta2.get(x, 0) + 1
    eta1 = dict(eta2)
    for _ in range(int(rng.integers(1, 4))):
        occupied = [x for x, c in eta1.items() if c]
        if not occupied:
            break
        x = occupied[int(rng.integers(0, len(occupied)))]
        eta1[x] -= 1
        if rng.random() < 0.5:
            y = x - int(rng.integers(1, 3))
            eta1[y] = eta1.get(y, 0) + 1
    return eta2, {x: c for x, c in eta1.items() if c}


def _two_sided_replica(cfg: ExperimentConfig, i: int):
    A, I = cfg.laws()
    env = Environment(A, I, _env_seed(cfg, i), -1, 1)
    st = ue.make_two_sided(env)
    clocks = ue.ClockField(_clock_seed(cfg, i))
    tr, st = ue.run(st, clocks, env, ue.Stop(time=cfg.time_horizon), max_events=cfg.max_events)
    T = cfg.time_horizon
    alive = st.living > 0
    k = math.floor(cfg.lam * T)
    corridor = alive and st.r >= k and st.l <= -k
    return i, alive, corridor, st.r, st.l


# ---------------------------------------------------------------------------
# experiments


def run_experiment(cfg: ExperimentConfig) -> int:
    cfg.validate()
    os.makedirs(cfg.out, exist_ok=True)
    handler = {
        "simulate": exp_simulate,
        "extinction": exp_extinction,
        "speed": exp_speed,
        "couple": exp_couple,
        "frontier-scan": exp_frontier,
        "example-nonmonotone": exp_example,
        "two-sided": exp_two_sided,
    }[cfg.experiment]
    return handler(cfg)


def exp_simulate(cfg: ExperimentConfig) -> int:
    res = _map(partial(_tagged_replica, cfg), list(range(cfg.replicas)), cfg.workers)
    code = EXIT_OK
    rows, rho_rows, traces = [], [], []
    for i, tr, surv in res:
        if tr.outcome == "cap":
            code = EXIT_CAP
        rows.append((i, tr.outcome, tr.front, tr.final_time, int(surv)))
        rho_rows.extend((i, n, t) for n, t in enumerate(tr.rho, start=1))
        traces.append(tr)
    _write_csv(os.path.join(cfg.out, "summary.csv"), ("replica", "outcome", "front", "final_time",
                                                      "survives_prefix"), rows)
    _write_csv(os.path.join(cfg.out, "rho.csv"), ("replica", "n", "rho"), rho_rows)
    traces[0].to_csv(os.path.join(cfg.out, "trace_0.csv"))
    if cfg.plot:
        _plot_fronts(os.path.join(cfg.out, "fronts.svg"), traces[:20], cfg.time_horizon,
                     f"A={cfg.A}, I={cfg.I}")
    ext = sum(1 for r in rows if r[1] == "extinct")
    print(f"simulate: {cfg.replicas} replicas, {ext} extinct, mean front {np.mean([r[2] for r in rows]):.2f}")
    if code == EXIT_CAP:
        _partial_marker(cfg.out, "resource cap reached in at least one replica")
    return code


def exp_extinction(cfg: ExperimentConfig) -> int:
    A, I = cfg.laws()
    if not isinstance(A, Deterministic) or not isinstance(I, Geometric):
        raise ConfigError("extinction needs A = det:a and I = geom:p")
    a, p = int(A.v), float(I.p)
    y_fixed = an.extinction_fixed_point(a, p)
    y_series = float(an.extinction_series(A, p, cfg.series_terms))
    dead = 0
    for i in range(cfg.replicas):
        env = Environment(A, I, _env_seed(cfg, i))
        if not an.survival_prefix_check(a, env, cfg.survival_n, cfg.r0):
            dead += 1
    y_mc = dead / cfg.replicas
    se = math.sqrt(max(y_fixed * (1 - y_fixed), 1e-300) / cfg.replicas)
    _write_csv(os.path.join(cfg.out, "extinction.csv"), ("a", "p", "y_fixed", "y_series_N", "y_mc", "mc_se"),
               [(a, p, y_fixed, y_series, y_mc, se)])
    ok = abs(y_mc - y_fixed) <= 3 * se
    print(f"extinction: fixed {y_fixed:.10f}  series({cfg.series_terms}) {y_series:.10f}  "
          f"mc {y_mc:.6f} +- {se:.6f}  within 3 SE: {'yes' if ok else 'no'}")
    return EXIT_OK


def exp_speed(cfg: ExperimentConfig) -> int:
    res = _map(partial(_tagged_replica, cfg, condition=True), list(range(cfg.replicas)), cfg.workers)
    traces = [tr for _, tr, _ in res if tr is not None]
    dropped = sum(1 for _, tr, _ in res if tr is None)
    code = EXIT_CAP if any(tr.outcome == "cap" for tr in traces) else EXIT_OK
    if not traces:
        print("speed: no surviving environment among the replicas")
        return EXIT_OK
    T = cfg.time_horizon
    est = fr.front_speed(traces, cfg.speed_from * T, T, cfg.windows, seed=cfg.seed)
    rows = []
    for j, row in enumerate(est.slopes):
        rows.extend((j, w, s) for w, s in enumerate(row))
    _write_csv(os.path.join(cfg.out, "slopes.csv"), ("replica", "window", "slope"), rows)
    _write_csv(os.path.join(cfg.out, "speed_summary.csv"),
               ("replicas_used", "dropped_nonsurviving", "excluded_extinct", "mean_slope", "ci_low", "ci_high", "cv"),
               [(est.used, dropped, est.excluded, est.mean, est.ci[0], est.ci[1], est.cv)])
    if cfg.plot:
        _plot_fronts(os.path.join(cfg.out, "fronts.svg"), traces[:20], T,
                     f"r_t, A={cfg.A}, I={cfg.I}, surviving replicas")
    print(f"speed: {est.used} surviving replicas, mean slope {est.mean:.4f}, "
          f"95% CI [{est.ci[0]:.4f}, {est.ci[1]:.4f}], window CV {est.cv:.3f}")
    if code == EXIT_CAP:
        _partial_marker(cfg.out, "resource cap reached in at least one replica")
    return code


def exp_couple(cfg: ExperimentConfig) -> int:
    res = _map(partial(_couple_replica, cfg), list(range(cfg.replicas)), cfg.workers)
    rows = []
    bad = 0
    for i, r in res:
        rows.append((i, int(r.dominated), r.violations, r.trace1.front, r.trace2.front))
        if r.dominated and r.violations:
            bad += 1
    _write_csv(os.path.join(cfg.out, "couple.csv"), ("replica", "dominated", "violations", "r1", "r2"), rows)
    print(f"couple: {len(rows)} coupled runs, {bad} with r1 > r2 under prefix domination")
    return EXIT_ASSERT if bad else EXIT_OK


def exp_frontier(cfg: ExperimentConfig) -> int:
    A, I = cfg.laws()
    try:
        params = fr.derive_params(cfg.alpha, cfg.beta_A, cfg.beta_I, A, I)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    res = _map(partial(_frontier_replica, cfg, params), list(range(cfg.replicas)), cfg.workers)
    nu_rows, m_rows = [], []
    bad = 0
    for i, rows, Mres, Mseq in res:
        for r in rows:
            nu_rows.append((i, r.n, "" if r.K is None else r.K, int(r.censored),
                            "" if r.nu is None else r.nu, r.rho_gap, "" if r.bound_ok is None else int(r.bound_ok)))
            if r.bound_ok is False:
                bad += 1
        m_rows.append((i, "M", Mres.M, Mres.verified_to))
        for k, m in enumerate(Mseq):
            m_rows.append((i, k, m.M, m.verified_to))
    _write_csv(os.path.join(cfg.out, "nu.csv"), ("replica", "n", "K_n", "censored", "nu_n", "rho_gap", "bound_ok"),
               nu_rows)
    _write_csv(os.path.join(cfg.out, "M.csv"), ("replica", "i", "M_i", "verified_horizon"), m_rows)
    unc = sum(1 for r in nu_rows if r[3] == 0)
    print(f"frontier-scan: k0={params.k0} m_I={params.m_I} m_A={params.m_A}; "
          f"{unc} uncensored sites, {bad} bound violations")
    return EXIT_ASSERT if bad else EXIT_OK


EXAMPLE_SCHEDULE = {
    (0, 1): [(1, 1), (1, 1)],
    (0, 2): [(11, 1)],
    (1, 1): [(4, 1), (1.5, 1), (4, 1)],
    (1, 2): [(5, 1), (1, 1), (4, 1)],
    (2, 1): [(3, 1), (1, 1)],
    (2, 2): [(9, 1)],
    (3, 1): [(6, 1)],
    (3, 2): [(6, 1)],
}


def example_environment() -> Environment:
    return Environment.from_values(A={1: 2, 2: 2, 3: 2, 4: 2}, I={2: 1, 3: 1, 4: 1, 5: 1})


def example_times():
    """Times at which the front reaches 4 from w1 and from w2."""
    env = example_environment()
    tr1, _ = te.run_scheduled({1: 2}, env, EXAMPLE_SCHEDULE, te.Stop(front=3), r0=1)
    tr2, _ = te.run_scheduled({0: 2, 1: 2}, env, EXAMPLE_SCHEDULE, te.Stop(front=3), r0=1)
    return tr1, tr2


def exp_example(cfg: ExperimentConfig) -> int:
    tr1, tr2 = example_times()
    T1, T2 = tr1.rho[-1], tr2.rho[-1]
    r9_1, r9_2 = tr1.r_at(9), tr2.r_at(9)
    print(f"T_1={T1:g}")
    print(f"T_2={T2:g}")
    print(f"r_9(w1)={r9_1}  r_9(w2)={r9_2}")
    with open(os.path.join(cfg.out, "example_w1.csv"), "w") as fh:
        tr1.to_csv(fh)
    with open(os.path.join(cfg.out, "example_w2.csv"), "w") as fh:
        tr2.to_csv(fh)
    ok = T1 == 8 and T2 == 9.5 and r9_1 >= 4 and r9_2 <= 3
    return EXIT_OK if ok else EXIT_ASSERT


def exp_two_sided(cfg: ExperimentConfig) -> int:
    res = _map(partial(_two_sided_replica, cfg), list(range(cfg.replicas)), cfg.workers)
    n = len(res)
    s = sum(1 for r in res if r[1])
    c = sum(1 for r in res if r[2])
    lo, hi = binomial_ci(s, n, 0.99)
    _write_csv(os.path.join(cfg.out, "two_sided.csv"), ("replica", "alive", "corridor", "r", "l"),
               [(i, int(a), int(b), r, l) for i, a, b, r, l in res])
    _write_csv(os.path.join(cfg.out, "two_sided_summary.csv"),
               ("replicas", "survival_freq", "ci99_low", "ci99_high", "corridor_freq"),
               [(n, s / n, lo, hi, c / n)])
    print(f"two-sided: survival {s}/{n} = {s / n:.4f} (99% CI [{lo:.4f}, {hi:.4f}]), corridor {c / n:.4f}")
    return EXIT_OK


def binomial_ci(k: int, n: int, level: float):
    from scipy.stats import binomtest
    ci = binomtest(k, n).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simi", description="Spatial infection with host immunity: simulation and checks")
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--replicas", type=int)
        sp.add_argument("--out")
        sp.add_argument("--workers", type=int)
    sub.add_parser("describe", help="print config keys and defaults")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "describe":
        print(describe())
        return EXIT_OK
    try:
        cfg = load_config(args.config, {"seed": args.seed, "replicas": args.replicas, "out": args.out,
                                        "workers": args.workers})
        cfg.experiment = args.command
        return run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceCapExceeded as exc:
        print(f"resource cap: {exc}", file=sys.stderr)
        return EXIT_CAP


if __name__ == "__main__":
    sys.exit(main())
