"""Discrete-time stochastic SI/SIS/SIR/SIIDR on graphs, homogeneous-mixing
runs, RK4 rate equations and die-out diagnostics."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .graph import Graph

MODELS = ("SI", "SIS", "SIR", "SIIDR")


class ParameterError(ValueError):
    pass


class OdeInstabilityError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SIIDRParams:
    """Per-step probabilities of one attack variant.

    ``dt`` only converts step indices to model time; no rescaling of the
    probabilities is applied.
    """

    beta: float
    mu: float = 0.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    dt: float = 1.0

    def validate(self, model: str = "SIIDR") -> None:
        model = _model_name(model)
        for name in ("beta", "mu", "gamma1", "gamma2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name}={v} is outside [0, 1]")
        if self.mu + self.gamma1 > 1.0 + 1e-12:
            raise ParameterError("mu + gamma1 must not exceed 1")
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if model == "SI" and (self.mu or self.gamma1 or self.gamma2):
            raise ParameterError("SI uses beta only; mu, gamma1, gamma2 must be 0")
        if model in ("SIS", "SIR") and (self.gamma1 or self.gamma2):
            raise ParameterError(f"{model} requires gamma1 = gamma2 = 0")

    def as_dict(self) -> dict:
        return {"beta": self.beta, "mu": self.mu, "gamma1": self.gamma1,
                "gamma2": self.gamma2, "dt": self.dt}


def _model_name(model: str) -> str:
    m = str(model).upper()
    if m not in MODELS:
        raise ParameterError(f"unknown model {model!r}; expected one of {MODELS}")
    return m


@dataclass(eq=False)
class Trajectory:
    """Counts per step: column order S, I, ID, R. Row 0 is the initial state."""

    counts: np.ndarray
    ever: np.ndarray
    infection_times: np.ndarray
    model: str
    params: SIIDRParams
    seed: int | None
    patient_zero: np.ndarray
    absorbed: bool
    active_history: list | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return int(self.counts[0].sum())

    @property
    def steps(self) -> int:
        return self.counts.shape[0] - 1

    @property
    def infected(self) -> np.ndarray:
        return self.counts[:, 1] + self.counts[:, 2]

    @property
    def footprint(self) -> np.ndarray:
        return self.ever / self.n

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.counts.shape[0]) * self.params.dt


def _pick_patient_zero(g: Graph, patient_zero, rng):
    if isinstance(patient_zero, str):
        if patient_zero != "random":
            raise ParameterError("patient_zero must be a node id, a list of ids or 'random'")
        alive = np.flatnonzero(g.alive)
        if alive.shape[0] == 0:
            raise ParameterError("no non-hardened node available for patient zero")
        return np.array([rng.choice(alive)], dtype=np.int64)
    p0 = np.unique(np.atleast_1d(np.asarray(patient_zero, dtype=np.int64)))
    if p0.size == 0 or p0.min() < 0 or p0.max() >= g.n_nodes:
        raise ParameterError(f"patient zero {patient_zero!r} out of range 0..{g.n_nodes - 1}")
    return p0


def simulate(g: Graph, model: str, params: SIIDRParams, patient_zero="random",
             max_steps: int = 1000, seed: int = 0, record_active: bool = False) -> Trajectory:
    """One synchronous stochastic run.

    Each step, from the start-of-step states: every (I, S) edge transmits
    with probability beta; every I node draws one uniform and recovers below
    mu, goes dormant below mu + gamma1, else stays active; every dormant
    node reactivates with probability gamma2. Dormant nodes do not transmit.
    The run stops at ``max_steps`` or when no I or ID node is left.
    """
    model = _model_name(model)
    params.validate(model)
    rng = np.random.default_rng(seed)
    p0 = _pick_patient_zero(g, patient_zero, rng)
    n = g.n_nodes
    deg = g.degrees
    sis = model == "SIS"
    state = np.zeros(n, dtype=np.int8)
    state[p0] = K.I
    inf_time = np.full(n, -1, dtype=np.int64)
    inf_time[p0] = 0
    counts = [np.bincount(state, minlength=4)]
    ever = [p0.shape[0]]
    n_ever = p0.shape[0]
    history = [] if record_active else None
    absorbed = False
    for t in range(max_steps):
        active = np.flatnonzero(state == K.I)
        dormant = np.flatnonzero(state == K.ID)
        if active.shape[0] == 0 and dormant.shape[0] == 0:
            absorbed = True
            break
        if record_active:
            history.append(active)
        u_inf = rng.random(int(deg[active].sum()))
        u_exit = rng.random(active.shape[0])
        u_act = rng.random(dormant.shape[0])
        state, newly = K.epidemic_step(g.indptr, g.indices, state, active, dormant,
                                       u_inf, u_exit, u_act, params.beta, params.mu,
                                       params.gamma1, params.gamma2, sis)
        if newly.shape[0]:
            first = newly[inf_time[newly] < 0]
            inf_time[first] = t + 1
            n_ever += first.shape[0]
        counts.append(np.bincount(state, minlength=4))
        ever.append(n_ever)
    else:
        absorbed = not np.any((state == K.I) | (state == K.ID))
    return Trajectory(
        counts=np.array(counts, dtype=np.int64),
        ever=np.array(ever, dtype=np.int64),
        infection_times=inf_time,
        model=model,
        params=params,
        seed=seed,
        patient_zero=p0,
        absorbed=absorbed,
        active_history=history,
    )


@dataclass(eq=False)
class EnsembleResult:
    """Per-step aggregates over runs, padded with each run's final state."""

    model: str
    params: SIIDRParams
    seeds: np.ndarray
    max_steps: int
    n: int
    infected: np.ndarray        # runs x T, I + ID
    footprint: np.ndarray       # runs x T
    compartments: np.ndarray    # runs x T x 4
    absorbed: np.ndarray        # per run
    absorption_step: np.ndarray  # per run, -1 if never absorbed

    @property
    def runs(self) -> int:
        return self.seeds.shape[0]

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.infected.shape[1]) * self.params.dt

    @property
    def mean_infected(self) -> np.ndarray:
        return self.infected.mean(axis=0)

    @property
    def mean_footprint(self) -> np.ndarray:
        return self.footprint.mean(axis=0)

    @property
    def final_footprint(self) -> float:
        return float(self.footprint[:, -1].mean())

    @property
    def died_out_fraction(self) -> float:
        return float(self.absorbed.mean())

    def quantiles(self, which: str, qs=(0.05, 0.5, 0.95)) -> np.ndarray:
        data = {"infected": self.infected, "footprint": self.footprint}[which]
        return np.quantile(data, qs, axis=0)


def _run_chunk(args):
    g, model, params, seeds, patient_zero, max_steps = args
    return [simulate(g, model, params, patient_zero, max_steps, int(s)) for s in seeds]


def _pad(rows, length):
    out = np.empty((len(rows), length) + rows[0].shape[1:], dtype=rows[0].dtype)
    for r, row in enumerate(rows):
        out[r, :row.shape[0]] = row
        out[r, row.shape[0]:] = row[-1]
    return out


def ensemble(g: Graph, model: str, params: SIIDRParams, runs: int = 500, seed0: int = 0,
             patient_zero="random", max_steps: int = 1000, jobs: int = 1) -> EnsembleResult:
    """Independent runs with seeds seed0 .. seed0+runs-1.

    Results are stacked in seed order, so serial and parallel execution give
    identical aggregates.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    model = _model_name(model)
    params.validate(model)
    seeds = np.arange(seed0, seed0 + runs, dtype=np.int64)
    if jobs > 1 and runs > 1:
        chunks = np.array_split(seeds, min(jobs * 4, runs))
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = ex.map(_run_chunk, [(g, model, params, c, patient_zero, max_steps)
                                        for c in chunks])
            trajs = [t for part in parts for t in part]
    else:
        trajs = _run_chunk((g, model, params, seeds, patient_zero, max_steps))
    length = max(t.counts.shape[0] for t in trajs)
    comp = _pad([t.counts for t in trajs], length)
    ever = _pad([t.ever for t in trajs], length)
    n = g.n_nodes
    return EnsembleResult(
        model=model,
        params=params,
        seeds=seeds,
        max_steps=max_steps,
        n=n,
        infected=comp[:, :, 1] + comp[:, :, 2],
        footprint=ever / n,
        compartments=comp,
        absorbed=np.array([t.absorbed for t in trajs]),
        absorption_step=np.array([t.steps if t.absorbed else -1 for t in trajs]),
    )


def simulate_well_mixed(n: int, model: str, params: SIIDRParams, i0: int = 1,
                        max_steps: int = 1000, seed: int = 0):
    """Homogeneous-mixing run: each active host makes one uniformly random
    contact per step, transmitting with probability beta.

    Returns ``(counts, cumulative_infected)`` truncated at absorption.
    """
    model = _model_name(model)
    params.validate(model)
    if not 0 < i0 <= n:
        raise ParameterError("need 0 < i0 <= n")
    size = 4096
    while True:
        u = np.random.default_rng(seed).random(size)
        counts, cum, steps, _, ok = K.well_mixed_run(
            int(n), int(i0), u, params.beta, params.mu, params.gamma1, params.gamma2,
            model == "SIS", int(max_steps))
        if ok:
            return counts[:steps + 1], cum[:steps + 1]
        size *= 4


@dataclass(eq=False)
class OdeSolution:
    time: np.ndarray
    y: np.ndarray   # T x 4: S, I, ID, R
    model: str
    params: SIIDRParams
    n: float

    @property
    def cumulative(self) -> np.ndarray:
        """Ever-infected count, n - S, for models without reinfection."""
        return self.n - self.y[:, 0]


def ode_solve(model: str, params: SIIDRParams, n: float, i0: float, t_end: float,
              dt: float = 0.1) -> OdeSolution:
    """Fixed-step RK4 on the homogeneous-mixing rate equations.

    dS = -b S I / n,  dI = b S I / n - (m + g1) I + g2 D,  dD = g1 I - g2 D,
    dR = m I; SIS routes recoveries back to S.
    """
    model = _model_name(model)
    params.validate(model)
    if n < 1 or not 0 < i0 <= n:
        raise ParameterError("need n >= 1 and 0 < i0 <= n")
    steps = int(math.ceil(t_end / dt - 1e-9))
    y0 = np.array([n - i0, i0, 0.0, 0.0])
    y = K.rk4_integrate(y0, params.beta, params.mu, params.gamma1, params.gamma2,
                        model == "SIS", float(n), float(dt), steps)
    _check_ode(y, n)
    return OdeSolution(np.arange(steps + 1) * dt, y, model, params, float(n))


def _check_ode(y, n):
    if not np.all(np.isfinite(y)):
        raise OdeInstabilityError("non-finite state; use a smaller dt")
    if y.min() < -1e-9 * n:
        raise OdeInstabilityError(f"negative compartment {y.min():.3g}; use a smaller dt")
    drift = np.abs(y.sum(axis=1) - n).max()
    if drift > 1e-8 * n:
        raise OdeInstabilityError(f"population drift {drift:.3g}; use a smaller dt")


@dataclass(frozen=True)
class DieOutReport:
    slope: float
    intercept: float
    r2: float
    died_out_fraction: float | None
    slope_defined: bool
    window: tuple[int, int]


def die_out_check(curve, died_out_fraction: float | None = None) -> DieOutReport:
    """Least-squares line through log(mean infected) after the peak.

    ``curve`` is an ``EnsembleResult`` or a 1-D array of mean infected
    counts. The fit window runs from the peak to the last positive value.
    """
    if isinstance(curve, EnsembleResult):
        died_out_fraction = curve.died_out_fraction
        curve = curve.mean_infected
    y = np.asarray(curve, dtype=np.float64)
    if not np.any(y > 0):
        return DieOutReport(math.nan, math.nan, math.nan,
                            1.0 if died_out_fraction is None else died_out_fraction,
                            False, (0, 0))
    if int((y > 0).sum()) < 10:
        raise ValueError("die-out check needs at least 10 steps with positive infected count")
    peak = int(np.argmax(y))
    pos = np.flatnonzero(y[peak:] > 0)
    last = peak + int(pos[-1])
    # stop at the first zero after the peak
    zero = np.flatnonzero(y[peak:last + 1] <= 0)
    if zero.size:
        last = peak + int(zero[0]) - 1
    t = np.arange(peak, last + 1, dtype=np.float64)
    ly = np.log(y[peak:last + 1])
    if t.shape[0] < 2:
        return DieOutReport(math.nan, math.nan, math.nan, died_out_fraction, False,
                            (peak, last))
    slope, intercept = np.polyfit(t, ly, 1)
    resid = ly - (slope * t + intercept)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return DieOutReport(float(slope), float(intercept), r2, died_out_fraction, True,
                        (peak, last))
