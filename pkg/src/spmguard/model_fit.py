"""Epidemic curves from attack traces, AIC model selection on the rate
equations, and ABC-SMC posteriors from homogeneous-mixing simulations."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr

from .epidemic import (MODELS, ParameterError, SIIDRParams, Trajectory, _model_name,
                       ode_solve, simulate_well_mixed)
from .graph import FitError, Graph

PARAM_NAMES = {
    "SI": ("beta",),
    "SIS": ("beta", "mu"),
    "SIR": ("beta", "mu"),
    "SIIDR": ("beta", "mu", "gamma1", "gamma2"),
}
N_PARAMS = {m: len(p) for m, p in PARAM_NAMES.items()}


class TraceError(ValueError):
    """Unusable trace input (no malicious events, bad CSV, ...)."""


@dataclass(frozen=True, order=True)
class TraceEvent:
    timestamp: float
    src: int
    dst: int
    malicious: bool


@dataclass(eq=False)
class EpidemicCurve:
    """Cumulative count of distinct infected hosts per bin; bin k covers
    [t0 + k*bin_width, t0 + (k+1)*bin_width)."""

    bin_width: float
    infected_count: np.ndarray
    n_hosts: int
    t_end: float
    t0: float = 0.0
    infection_times: dict = field(default_factory=dict)

    @property
    def n_points(self) -> int:
        return int(self.infected_count.shape[0])

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.n_points) * self.bin_width

    @property
    def total_infected(self) -> int:
        return int(self.infected_count[-1])

    def validate(self) -> None:
        c = self.infected_count
        if c.ndim != 1 or c.shape[0] == 0:
            raise TraceError("curve must be a non-empty 1-D array")
        if c[0] < 1 or np.any(np.diff(c) < 0) or c.max() > self.n_hosts:
            raise TraceError("curve must be non-decreasing, start >= 1 and stay <= n_hosts")


def passes_threshold(curve: EpidemicCurve, min_fraction: float = 0.2,
                     min_count: int | None = None) -> bool:
    """Exclusion rule for weak outbreaks: keep a curve only if enough hosts
    were ever infected."""
    need = math.ceil(min_fraction * curve.n_hosts - 1e-9)
    if min_count is not None:
        need = max(need, min_count)
    return curve.total_infected >= need


def _sorted_events(events) -> list[TraceEvent]:
    evs = sorted(TraceEvent(float(e.timestamp), int(e.src), int(e.dst), bool(e.malicious))
                 for e in events)
    if not evs:
        raise TraceError("empty trace")
    return evs


def infection_times(events) -> dict[int, float]:
    """Host -> timestamp of its first malicious outbound event."""
    first: dict[int, float] = {}
    for e in _sorted_events(events):
        if e.malicious and e.src not in first:
            first[e.src] = e.timestamp
    return first


def reconstruct(events, bin_width: float = 1.0, n_hosts: int | None = None) -> EpidemicCurve:
    """Bin first-attack times from the first malicious event to the last
    event of any kind. ``n_hosts`` defaults to the hosts seen in the trace."""
    if not bin_width > 0:
        raise TraceError("bin_width must be positive")
    evs = _sorted_events(events)
    first = infection_times(evs)
    if not first:
        raise TraceError("trace has no malicious events")
    hosts = {e.src for e in evs} | {e.dst for e in evs}
    if n_hosts is None:
        n_hosts = len(hosts)
    elif n_hosts < len(first):
        raise TraceError(f"n_hosts={n_hosts} is below the {len(first)} infected hosts")
    t0 = min(first.values())
    t_end = evs[-1].timestamp
    nbins = int(math.floor((t_end - t0) / bin_width + 1e-9)) + 1
    idx = np.floor((np.array(sorted(first.values())) - t0) / bin_width + 1e-9).astype(np.int64)
    counts = np.cumsum(np.bincount(idx, minlength=nbins)[:nbins])
    curve = EpidemicCurve(bin_width, counts.astype(np.int64), int(n_hosts), t_end, t0, first)
    curve.validate()
    return curve


def _cv(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or x.mean() == 0:
        return math.nan
    return float(x.std() / x.mean())


@dataclass
class DeltaTDiagnostics:
    inter_attack_dts: dict
    last_attack_to_end_dts: dict
    single_attack_hosts: list
    inter_attack_cv: float
    last_to_end_cv: float


def delta_t_diagnostics(events) -> DeltaTDiagnostics:
    """Gaps between consecutive attacks of each host, and from each host's
    last attack to the end of the trace, with coefficients of variation."""
    evs = _sorted_events(events)
    t_end = evs[-1].timestamp
    attacks: dict[int, list] = {}
    for e in evs:
        if e.malicious:
            attacks.setdefault(e.src, []).append(e.timestamp)
    if not attacks:
        raise TraceError("trace has no malicious events")
    inter, last, single = {}, {}, []
    for h in sorted(attacks):
        ts = np.unique(attacks[h])
        last[h] = float(t_end - ts[-1])
        if ts.shape[0] < 2:
            single.append(h)
        else:
            inter[h] = np.diff(ts).tolist()
    pooled = [d for v in inter.values() for d in v]
    return DeltaTDiagnostics(inter, last, single, _cv(pooled), _cv(list(last.values())))


def emit_trace(g: Graph, traj: Trajectory, dt: float | None = None) -> list[TraceEvent]:
    """Malicious events of a recorded graph run: in step t every active node
    probes each neighbour at time t*dt. Needs ``record_active=True``."""
    if traj.active_history is None:
        raise TraceError("trajectory was simulated without record_active=True")
    dt = traj.params.dt if dt is None else dt
    out = []
    for t, active in enumerate(traj.active_history):
        for v in active.tolist():
            for u in g.neighbors(v).tolist():
                out.append(TraceEvent(t * dt, v, u, True))
    return out


def well_mixed_trace(n: int, model: str, params: SIIDRParams, i0: int = 1,
                     max_steps: int = 1000, seed: int = 0, dt: float | None = None):
    """Homogeneous-mixing run that also logs every contact as a malicious
    event. Consumes the same uniform stream as ``simulate_well_mixed``, so
    counts agree for equal seeds.

    Returns ``(events, counts, infection_step)``.
    """
    model = _model_name(model)
    params.validate(model)
    dt = params.dt if dt is None else dt
    sis = model == "SIS"
    size = 4096
    while True:
        u = np.random.default_rng(seed).random(size)
        res = _trace_run(n, i0, u, params, sis, max_steps, dt)
        if res is not None:
            return res
        size *= 4


def _trace_run(n, i0, u, p, sis, max_steps, dt):
    state = np.zeros(n, dtype=np.int8)
    state[:i0] = 1
    inf_step = np.full(n, -1, dtype=np.int64)
    inf_step[:i0] = 0
    counts = [np.bincount(state, minlength=4)]
    events = []
    pos = 0
    for t in range(max_steps):
        active = np.flatnonzero(state == 1)
        dormant = np.flatnonzero(state == 2)
        if active.size + dormant.size == 0:
            break
        if pos + 3 * active.size + dormant.size > u.shape[0]:
            return None
        hit = np.zeros(n, dtype=bool)
        for i in active.tolist():
            u1, u2 = u[pos], u[pos + 1]
            pos += 2
            if n < 2:
                continue
            tgt = int(u1 * (n - 1))
            if tgt >= i:
                tgt += 1
            events.append(TraceEvent(t * dt, i, tgt, True))
            if state[tgt] == 0 and u2 < p.beta:
                hit[tgt] = True
        new = state.copy()
        v = u[pos:pos + active.size]
        pos += active.size
        new[active[v < p.mu]] = 0 if sis else 3
        new[active[(v >= p.mu) & (v < p.mu + p.gamma1)]] = 2
        w = u[pos:pos + dormant.size]
        pos += dormant.size
        new[dormant[w < p.gamma2]] = 1
        new[hit] = 1
        fresh = hit & (inf_step < 0)
        inf_step[fresh] = t + 1
        state = new
        counts.append(np.bincount(state, minlength=4))
    return events, np.array(counts, dtype=np.int64), inf_step


# ---------------------------------------------------------------- fitting

@dataclass
class FitResult:
    model: str
    params: SIIDRParams
    rss: float
    aic: float
    n_points: int
    converged: bool = True
    perfect: bool = False
    message: str = ""

    @property
    def k(self) -> int:
        return N_PARAMS[self.model]


def aic_gaussian(rss: float, n: int, k: int) -> float:
    """n ln(RSS/n) + 2k; -inf for an exact fit."""
    if rss <= 0:
        return -math.inf
    return n * math.log(rss / n) + 2 * k


def _to_params(model, theta, dt=1.0):
    kw = dict(zip(PARAM_NAMES[model], (float(x) for x in theta)))
    return SIIDRParams(dt=dt, **kw)


def _feasible(theta) -> bool:
    if np.any(theta < 0) or np.any(theta > 1):
        return False
    return len(theta) < 2 or theta[1] + (theta[2] if len(theta) > 2 else 0.0) <= 1.0


def model_cumulative(model: str, params: SIIDRParams, n: float, i0: float,
                     t_points: np.ndarray, ode_dt: float = 0.5) -> np.ndarray:
    """Ever-infected count predicted by the rate equations at ``t_points``
    (model time, a uniform grid starting at 0).

    Without reinfection this is n - S. Under SIS the never-infected pool X
    obeys dX = -b X I / n, integrated along the solved I(t).
    """
    t_points = np.asarray(t_points, dtype=np.float64)
    span = float(t_points[-1]) if t_points.size > 1 else 0.0
    step = float(t_points[1] - t_points[0]) if t_points.size > 1 else 1.0
    sub = max(1, int(math.ceil(step / ode_dt - 1e-9)))
    h = step / sub
    sol = ode_solve(model, params, n, i0, span, dt=h) if span > 0 else None
    if sol is None:
        return np.full(t_points.shape, float(i0))
    if model == "SIS":
        inf = sol.y[:, 1]
        integral = np.concatenate([[0.0], np.cumsum((inf[1:] + inf[:-1]) * 0.5 * h)])
        cum = n - (n - i0) * np.exp(-params.beta * integral / n)
    else:
        cum = sol.cumulative
    return cum[::sub][:t_points.shape[0]]


_GRID = {
    "beta": np.array([0.02, 0.05, 0.1, 0.2, 0.35, 0.6, 0.9]),
    "mu": np.array([0.0, 0.02, 0.05, 0.1, 0.25, 0.5]),
    "gamma1": np.array([0.0, 0.2, 0.5, 0.8]),
    "gamma2": np.array([0.02, 0.1, 0.3, 0.7]),
}


def fit_model(curve: EpidemicCurve, model: str, time_unit: float | None = None,
              grid: dict | None = None, starts=(), n_starts: int = 3,
              max_iter: int = 2000, ode_dt: float = 0.5) -> FitResult:
    """Least-squares fit of the rate equations to a cumulative curve.

    Nelder-Mead runs from the ``n_starts`` best points of a coarse grid and
    from any extra ``starts``, then restarts once from the overall best.
    ``time_unit`` is the duration of one model step in trace seconds
    (default: one bin).
    """
    model = _model_name(model)
    k = N_PARAMS[model]
    y = np.asarray(curve.infected_count, dtype=np.float64)
    n_pts = y.shape[0]
    if n_pts < k + 2:
        raise FitError(f"{model} needs at least {k + 2} curve points, got {n_pts}")
    time_unit = curve.bin_width if time_unit is None else time_unit
    t = np.arange(n_pts) * (curve.bin_width / time_unit)
    n, i0 = float(curve.n_hosts), float(y[0])
    names = PARAM_NAMES[model]
    grid = {**_GRID, **(grid or {})}

    def rss(theta):
        theta = np.asarray(theta, dtype=np.float64)
        if not _feasible(theta):
            return 1e30
        pred = model_cumulative(model, _to_params(model, theta), n, i0, t, ode_dt)
        return float(((pred - y) ** 2).sum())

    scored = []
    for theta in itertools.product(*(grid[p] for p in names)):
        scored.append((rss(theta), theta))
    scored.sort(key=lambda s: s[0])
    cands = [np.array(th, dtype=np.float64) for _, th in scored[:n_starts]]
    cands += [np.asarray(s, dtype=np.float64) for s in starts]
    opts = {"maxiter": max_iter * k, "xatol": 1e-7, "fatol": 1e-10}
    best_x, best_val, ok, msg = cands[0], scored[0][0], False, "grid point"
    for x0 in cands:
        res = minimize(rss, x0, method="Nelder-Mead", options=opts)
        if res.fun < best_val:
            best_x, best_val, ok, msg = res.x, res.fun, bool(res.success), str(res.message)
    res = minimize(rss, best_x, method="Nelder-Mead", options=opts)
    if res.fun <= best_val:
        best_x, best_val, ok, msg = res.x, res.fun, bool(res.success), str(res.message)
    params = _to_params(model, np.clip(best_x, 0.0, 1.0), dt=time_unit)
    aic = aic_gaussian(best_val, n_pts, k)
    return FitResult(model, params, float(best_val), aic, n_pts, ok, best_val <= 0, msg)


def _nested_start(model: str, sub: FitResult):
    """Embed a submodel optimum into ``model``'s parameter vector."""
    p = sub.params
    full = {"beta": p.beta, "mu": p.mu, "gamma1": 0.0, "gamma2": 0.1}
    return [full[name] for name in PARAM_NAMES[model]]


def fit_all(curve: EpidemicCurve, models=MODELS, **kw) -> dict[str, FitResult]:
    """Fit each model; nested models also start from their submodel's optimum
    (SI inside SIS/SIR, SIR inside SIIDR)."""
    models = [_model_name(m) for m in models]
    out: dict[str, FitResult] = {}
    nest = {"SIS": ("SI",), "SIR": ("SI",), "SIIDR": ("SIR", "SI")}
    for m in sorted(models, key=lambda m: N_PARAMS[m]):
        starts = [_nested_start(m, out[s]) for s in nest.get(m, ()) if s in out]
        out[m] = fit_model(curve, m, starts=starts, **kw)
    return {m: out[m] for m in models}


# ---------------------------------------------------------------- ABC-SMC

@dataclass
class Posterior:
    model: str
    names: tuple
    particles: np.ndarray          # P x d
    weights: np.ndarray
    distances: np.ndarray
    tolerance_schedule: list
    acceptance_rates: list
    variances: list                # weighted variance per generation
    aborted: bool = False
    message: str = ""

    def mean(self) -> dict:
        m = self.weights @ self.particles
        return dict(zip(self.names, m.tolist()))

    def variance(self) -> dict:
        return dict(zip(self.names, _wvar(self.particles, self.weights).tolist()))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(self.names) + ["weight", "distance"])
            for row, wt, d in zip(self.particles, self.weights, self.distances):
                w.writerow([repr(float(x)) for x in row] + [repr(float(wt)), repr(float(d))])


def _wvar(x, w):
    m = w @ x
    return w @ (x - m) ** 2


def curve_steps(curve: EpidemicCurve, time_unit: float | None = None) -> np.ndarray:
    """Model step index of every curve bin."""
    time_unit = curve.bin_width if time_unit is None else time_unit
    return np.rint(np.arange(curve.n_points) * curve.bin_width / time_unit).astype(np.int64)


def simulated_distance(curve, steps, model, params, seed, i0=None) -> float:
    """Population-normalised RMSE between the observed cumulative curve and
    one homogeneous-mixing run sampled at ``steps``."""
    i0 = int(curve.infected_count[0]) if i0 is None else i0
    _, cum = simulate_well_mixed(curve.n_hosts, model, params, i0, int(steps[-1]), seed)
    sim = cum[np.minimum(steps, cum.shape[0] - 1)]
    diff = (sim - curve.infected_count) / curve.n_hosts
    return float(np.sqrt(np.mean(diff ** 2)))


def _check_priors(model, priors):
    names = PARAM_NAMES[model]
    if priors is None:
        priors = {}
    lo = np.array([float(priors.get(p, (0.0, 1.0))[0]) for p in names])
    hi = np.array([float(priors.get(p, (0.0, 1.0))[1]) for p in names])
    if np.any(lo < 0) or np.any(hi > 1) or np.any(lo > hi):
        raise ParameterError("priors must be bounded intervals inside [0, 1]")
    extra = set(priors) - set(names)
    if extra:
        raise ParameterError(f"{model} has no parameters {sorted(extra)}")
    return names, lo, hi


def _sample_prior(rng, lo, hi, size):
    out = np.empty((0, lo.shape[0]))
    while out.shape[0] < size:
        draw = lo + (hi - lo) * rng.random((2 * size, lo.shape[0]))
        ok = np.array([_feasible(d) for d in draw])
        out = np.vstack([out, draw[ok]])
    return out[:size]


def _seed_for(seed, gen, idx) -> int:
    return int(np.random.SeedSequence([seed, gen, idx]).generate_state(1, np.uint64)[0] >> 1)


def abc_smc(curve: EpidemicCurve, model: str = "SIIDR", priors: dict | None = None,
            generations: int = 6, population: int = 1000, seed: int = 0,
            quantile: float = 0.3, time_unit: float | None = None,
            min_acceptance: float = 1e-3, batch: int = 256) -> Posterior:
    """Population Monte Carlo ABC with uniform priors.

    Generation 0 samples the prior and accepts everything; later tolerances
    are the ``quantile`` of the previous accepted distances, kept strictly
    decreasing. Each proposal gets its own seed derived from (seed,
    generation, proposal index), so results do not depend on evaluation
    order.
    """
    model = _model_name(model)
    if population < 1:
        raise ParameterError("population must be positive")
    curve.validate()
    names, lo, hi = _check_priors(model, priors)
    d = len(names)
    width = hi - lo
    free = width > 0
    steps = curve_steps(curve, time_unit)
    rng = np.random.default_rng(seed)

    def run(theta, gen, idx):
        return simulated_distance(curve, steps, model, _to_params(model, theta), _seed_for(seed, gen, idx))

    parts = _sample_prior(rng, lo, hi, population)
    dist = np.array([run(th, 0, i) for i, th in enumerate(parts)])
    w = np.full(population, 1.0 / population)
    tol = [math.inf]
    acc = [1.0]
    var = [_wvar(parts, w)]
    for gen in range(1, generations):
        eps = float(np.quantile(dist, quantile))
        if eps >= tol[-1]:
            eps = np.nextafter(tol[-1], -math.inf)
        sd = np.sqrt(2.0 * _wvar(parts, w))
        new_p, new_d, tried = [], [], 0
        cap = int(math.ceil(population / min_acceptance))
        while len(new_p) < population and tried < cap:
            idx = rng.choice(population, size=batch, p=w)
            prop = parts[idx] + rng.normal(size=(batch, d)) * sd
            for th in prop:
                if len(new_p) >= population or tried >= cap:
                    break
                if not _feasible(th) or np.any(th < lo) or np.any(th > hi):
                    continue  # truncation to the prior support
                dd = run(th, gen, tried)
                tried += 1
                if dd <= eps:
                    new_p.append(th)
                    new_d.append(dd)
        rate = len(new_p) / max(tried, 1)
        if len(new_p) < population:
            post = Posterior(model, names, parts, w, dist, tol, acc, var, True,
                             f"generation {gen}: acceptance {rate:.2e} below {min_acceptance:g}")
            return post
        new_p = np.array(new_p)
        # truncated Gaussian kernel, normalised over the prior box
        sdf = np.where(free, sd, 1.0)
        mass = np.prod(np.where(free, ndtr((hi - parts) / sdf) - ndtr((lo - parts) / sdf), 1.0),
                       axis=1)
        z = (new_p[:, None, :] - parts[None, :, :]) / sdf
        dens = np.exp(-0.5 * (z[:, :, free] ** 2).sum(axis=2)) / mass[None, :]
        new_w = 1.0 / (dens @ w)
        parts, dist, w = new_p, np.array(new_d), new_w / new_w.sum()
        tol.append(eps)
        acc.append(rate)
        var.append(_wvar(parts, w))
    return Posterior(model, names, parts, w, dist, tol, acc, var)


# ---------------------------------------------------------------- IO

TRACE_COLUMNS = ("timestamp", "src", "dst", "malicious")
_TRUE = {"1", "true", "yes", "t"}
_FALSE = {"0", "false", "no", "f"}


def read_trace(path) -> list[TraceEvent]:
    out = []
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(rows, None)
        if header is None or tuple(h.strip() for h in header) != TRACE_COLUMNS:
            raise TraceError(f"{path}: header must be {','.join(TRACE_COLUMNS)}")
        for lineno, row in enumerate(rows, start=2):
            if not row:
                continue
            try:
                ts, src, dst, mal = (c.strip() for c in row)
                flag = mal.lower()
                if flag not in _TRUE | _FALSE:
                    raise ValueError(f"bad malicious flag {mal!r}")
                out.append(TraceEvent(float(ts), int(src), int(dst), flag in _TRUE))
            except ValueError as exc:
                raise TraceError(f"{path}:{lineno}: {exc}") from None
    return out


def write_trace(path, events) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for e in events:
            w.writerow([repr(float(e.timestamp)), e.src, e.dst, int(e.malicious)])
