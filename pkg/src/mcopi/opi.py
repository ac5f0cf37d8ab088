"""Monte Carlo optimistic policy iteration.

Each iteration computes the greedy policy for the current value estimate,
simulates one trajectory from a random start, forms first-visit tail-cost
estimates, and blends them into the estimate with a diminishing step
size. Both update modes are provided: updating every state the
trajectory visited, and updating only the sampled start state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernel
from .errors import HorizonWithoutAbsorption, InvariantViolation
from .mdp import DISCOUNTED, InitialDistribution, Mdp
from .solvers import OptimalActionSets, evaluate_policy_exact, reach_probabilities
from .structure import analyze, build_reachability_graph, reachable_mask

TRAJECTORY_UPDATE = "trajectory"
FIRST_STATE_ONLY = "first-state"

VISIT_BASED = "visit"
TIME_BASED = "time"


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent counter-based generator for (seed, *key)."""
    entropy = (int(seed),) + tuple(int(k) for k in key)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def _clone(rng: np.random.Generator) -> np.random.Generator:
    out = np.random.Generator(np.random.Philox())
    out.bit_generator.state = rng.bit_generator.state
    return out


@dataclass(frozen=True)
class StepSchedule:
    """Diminishing step-size rule gamma_t(i).

    mode "time" uses beta(t); mode "visit" uses beta(n_t(i)) where n_t(i)
    counts the previous iterations that updated state i. The family is
    beta(k) = c/(k+1) ("harmonic") or c/(k+1)**rho ("power") with
    rho in (0.5, 1], which keeps the sum divergent and the squared sum
    finite; c in (0, 1] keeps every step inside (0, 1].
    """

    mode: str
    family: str = "harmonic"
    c: float = 1.0
    rho: float = 1.0

    def __post_init__(self):
        if self.mode not in (VISIT_BASED, TIME_BASED):
            raise InvariantViolation(f"unknown schedule mode {self.mode!r}")
        if self.family not in ("harmonic", "power"):
            raise InvariantViolation(f"unknown schedule family {self.family!r}")
        if not 0.0 < self.c <= 1.0:
            raise InvariantViolation(
                f"schedule coefficient must be in (0, 1], got {self.c}")
        if self.family == "harmonic":
            if self.rho != 1.0:
                raise InvariantViolation("harmonic schedules fix rho = 1")
        elif not 0.5 < self.rho <= 1.0:
            raise InvariantViolation(
                f"power schedules need rho in (0.5, 1], got {self.rho}")

    def beta(self, k: int) -> float:
        return self.c / (k + 1.0) ** self.rho

    def label(self) -> str:
        if self.family == "harmonic":
            return f"{self.mode}:harmonic:{self.c:g}"
        return f"{self.mode}:power:{self.c:g},{self.rho:g}"


@dataclass(frozen=True)
class OpiConfig:
    """Knobs of one OPI run."""

    update_mode: str = TRAJECTORY_UPDATE
    schedule: StepSchedule = StepSchedule(VISIT_BASED)
    seed: int = 0
    epsilon_bias: float = 1e-6
    max_iterations: int = 1000
    record_history: bool = False
    history_stride: int = 10
    stop_at_optimal: bool = False
    check_invariants: bool = True

    def __post_init__(self):
        if self.update_mode not in (TRAJECTORY_UPDATE, FIRST_STATE_ONLY):
            raise InvariantViolation(
                f"unknown update mode {self.update_mode!r}")
        if not self.epsilon_bias > 0.0:
            raise InvariantViolation("epsilon_bias must be positive")
        if self.max_iterations < 1:
            raise InvariantViolation("max_iterations must be at least 1")
        if self.history_stride < 1:
            raise InvariantViolation("history_stride must be at least 1")


def truncation_horizon(mdp: Mdp, epsilon_bias: float) -> int:
    """Number of steps after which the omitted discounted tail is at most
    epsilon_bias: alpha**H * c_max / (1 - alpha) <= epsilon_bias."""
    alpha = mdp.discount
    c_max = mdp.max_cost
    if c_max == 0.0:
        return 1
    h = math.ceil(math.log(epsilon_bias * (1.0 - alpha) / c_max)
                  / math.log(alpha))
    return max(1, h)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Realized path. Exactly one of absorbed_at / horizon is set:
    absorbed_at is the index of the absorbing step, horizon the step
    budget that truncated the walk."""

    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray
    absorbed_at: int | None
    horizon: int | None

    def __len__(self) -> int:
        return int(self.states.shape[0])


def simulate_trajectory(mdp: Mdp, mu, start: int, rng: np.random.Generator,
                        epsilon_bias: float = 1e-6,
                        max_steps: int | None = None) -> Trajectory:
    """Simulate under mu from start until a zero-cost absorbing state or
    the step budget.

    Discounted problems truncate once the bias horizon (see
    truncation_horizon) many steps have been recorded past the latest
    first visit, so every first-visit tail estimate the trajectory can
    feed omits at most epsilon_bias. Undiscounted problems have no
    horizon; they must absorb within the step budget (default: one more
    than the number of states) or the structure was never validated and
    HorizonWithoutAbsorption is raised.
    """
    view = _kernel.sparse_view(mdp)
    discounted = mdp.problem_class == DISCOUNTED
    if discounted:
        window = truncation_horizon(mdp, epsilon_bias)
        budget = (mdp.num_states + 1) * window
    else:
        window = 0
        budget = max_steps if max_steps is not None else mdp.num_states + 1
    mu = np.asarray(mu, dtype=np.int64)
    states = np.empty(budget, dtype=np.int64)
    actions = np.empty(budget, dtype=np.int64)
    costs = np.empty(budget)
    first_seen = np.zeros(mdp.num_states, dtype=np.bool_)
    length, absorbed = _kernel._walk(
        view.sa_offset, view.cost, view.indptr, view.targets,
        view.cum_probs, view.absorbing_row, mu, int(start), budget, window,
        first_seen, rng, states, actions, costs)
    if not absorbed and not discounted:
        raise HorizonWithoutAbsorption(
            f"trajectory from state {start} ran {length} steps without "
            f"absorbing; validate the structure first")
    return Trajectory(
        states=states[:length].copy(), actions=actions[:length].copy(),
        costs=costs[:length].copy(),
        absorbed_at=length - 1 if absorbed else None,
        horizon=None if absorbed else window)


@dataclass(frozen=True, eq=False)
class TailEstimates:
    """First-visit tail costs: estimates[i] is the discounted cost summed
    from the first index at which the trajectory hits i."""

    estimates: dict[int, float]
    hit_index: dict[int, int]


def first_visit_tail_costs(traj: Trajectory, discount: float) -> TailEstimates:
    """One backward pass: tail(k) = cost_k + discount * tail(k+1)."""
    length = len(traj)
    tails = np.empty(length)
    tail = 0.0
    for k in range(length - 1, -1, -1):
        tail = traj.costs[k] + discount * tail
        tails[k] = tail
    estimates: dict[int, float] = {}
    hit_index: dict[int, int] = {}
    for k in range(length):
        i = int(traj.states[k])
        if i not in hit_index:
            hit_index[i] = k
            estimates[i] = float(tails[k])
    return TailEstimates(estimates=estimates, hit_index=hit_index)


@dataclass(frozen=True, eq=False)
class OpiRunState:
    """Snapshot of a run: iteration counter, value estimate, per-state
    visit counts, the greedy policy for the current estimate, and the
    generator state that will drive the next iteration."""

    t: int
    J: np.ndarray
    visit_counts: np.ndarray
    mu: np.ndarray
    rng: np.random.Generator


def _identity_clusters(n: int) -> np.ndarray:
    return np.arange(n, dtype=np.int64)


def _greedy_from(mdp: Mdp, values: np.ndarray,
                 cluster_of: np.ndarray | None = None) -> np.ndarray:
    view = _kernel.sparse_view(mdp)
    if cluster_of is None:
        cluster_of = _identity_clusters(mdp.num_states)
    mu = np.empty(mdp.num_states, dtype=np.int64)
    _kernel._greedy(view.sa_offset, view.cost, view.indptr, view.targets,
                    view.probs, view.discount, cluster_of, values, mu)
    return mu


def initial_run_state(mdp: Mdp, config: OpiConfig,
                      rng: np.random.Generator | None = None) -> OpiRunState:
    """Fresh state: the value estimate starts at exactly zero."""
    J = np.zeros(mdp.num_states)
    return OpiRunState(
        t=0, J=J, visit_counts=np.zeros(mdp.num_states, dtype=np.int64),
        mu=_greedy_from(mdp, J),
        rng=rng if rng is not None else stream(config.seed))


def _step_budget(mdp: Mdp, p: InitialDistribution, config: OpiConfig):
    """(max_steps, window, undiscounted flag).

    Discounted trajectories extend until `window` steps follow the latest
    first visit (max_steps is an unreachable hard cap); undiscounted
    budgets come from the validated structure: transient states plus the
    absorbing step.
    """
    if mdp.problem_class == DISCOUNTED:
        window = truncation_horizon(mdp, config.epsilon_bias)
        return (mdp.num_states + 1) * window, window, False
    report = analyze(mdp, p)
    return len(report.transient_states) + 1, 0, True


_NO_HISTORY = np.zeros((0, 0))
_NO_ROWS = np.zeros(0, dtype=np.bool_)


def _raise_for_status(status: int):
    if status == _kernel.STATUS_NO_ABSORPTION:
        raise HorizonWithoutAbsorption(
            "a trajectory exceeded its step budget without absorbing; "
            "validate the structure first")
    if status == _kernel.STATUS_COUNT_EXCEEDS_T:
        raise InvariantViolation("visit count exceeded the iteration counter")
    if status == _kernel.STATUS_STEP_NOT_MONOTONE:
        raise InvariantViolation(
            "visit-based step size fell below the time-based step size")


def opi_iteration(state: OpiRunState, mdp: Mdp, p: InitialDistribution,
                  config: OpiConfig) -> OpiRunState:
    """One iteration. The input snapshot is left untouched; the returned
    snapshot carries the advanced generator state."""
    budget, window, undiscounted = _step_budget(mdp, p, config)
    view = _kernel.sparse_view(mdp)
    theta = state.J.copy()
    counts = state.visit_counts.copy()
    mu = np.empty(mdp.num_states, dtype=np.int64)
    rng = _clone(state.rng)
    p_cum = _cumulative(p.p)
    status, done, _, _ = _kernel.run_loop(
        view.sa_offset, view.cost, view.indptr, view.targets, view.probs,
        view.cum_probs, view.absorbing_row, view.discount,
        _identity_clusters(mdp.num_states), theta, counts,
        state.t, 1,
        config.schedule.mode == TIME_BASED, config.schedule.c,
        config.schedule.rho, config.update_mode == FIRST_STATE_ONLY,
        budget, window, undiscounted, p_cum,
        _NO_ROWS, _NO_ROWS, False, False, config.check_invariants,
        _NO_HISTORY, 0, mu, rng)
    _raise_for_status(status)
    return OpiRunState(t=state.t + done, J=theta, visit_counts=counts,
                       mu=_greedy_from(mdp, theta), rng=rng)


def _cumulative(p: np.ndarray) -> np.ndarray:
    cum = np.cumsum(p)
    cum[-1] = 1.0
    return cum


def _optimal_row_mask(mdp: Mdp, oracle: OptimalActionSets) -> np.ndarray:
    view = _kernel.sparse_view(mdp)
    mask = np.zeros(view.cost.shape[0], dtype=np.bool_)
    for i in range(mdp.num_states):
        lo = int(view.sa_offset[i])
        for a in oracle.sets[i]:
            mask[lo + a] = True
    return mask


@dataclass(frozen=True, eq=False)
class RunResult:
    """Outcome of a full run."""

    final_J: np.ndarray
    final_policy: np.ndarray
    visit_counts: np.ndarray
    iterations_run: int
    iterations_to_optimal: int | None
    history_t: np.ndarray | None = None
    history: np.ndarray | None = None
    final_sup_error: float | None = None


def run_opi(mdp: Mdp, p: InitialDistribution, config: OpiConfig,
            oracle: OptimalActionSets | None = None,
            jstar: np.ndarray | None = None,
            rng: np.random.Generator | None = None) -> RunResult:
    """Run up to config.max_iterations iterations from J = 0.

    With an oracle, records the first iteration whose greedy policy picks
    an oracle action at every state reachable from supp(p) (the recorded
    value survives later wandering); config.stop_at_optimal ends the run
    there. With jstar, reports the final sup-norm error.
    """
    budget, window, undiscounted = _step_budget(mdp, p, config)
    view = _kernel.sparse_view(mdp)
    n = mdp.num_states
    theta = np.zeros(n)
    counts = np.zeros(n, dtype=np.int64)
    mu = np.empty(n, dtype=np.int64)
    if rng is None:
        rng = stream(config.seed)
    if oracle is not None:
        opt_rows = _optimal_row_mask(mdp, oracle)
        check_states = reachable_mask(build_reachability_graph(mdp), p)
        detect = True
    else:
        opt_rows = _NO_ROWS
        check_states = _NO_ROWS
        detect = False
    if config.record_history:
        records = config.max_iterations // config.history_stride
        history = np.zeros((records, n))
        stride = config.history_stride
    else:
        history = _NO_HISTORY
        stride = 0
    status, done, first_opt, hist_rows = _kernel.run_loop(
        view.sa_offset, view.cost, view.indptr, view.targets, view.probs,
        view.cum_probs, view.absorbing_row, view.discount,
        _identity_clusters(n), theta, counts,
        0, config.max_iterations,
        config.schedule.mode == TIME_BASED, config.schedule.c,
        config.schedule.rho, config.update_mode == FIRST_STATE_ONLY,
        budget, window, undiscounted, _cumulative(p.p),
        opt_rows, check_states, detect,
        config.stop_at_optimal, config.check_invariants,
        history, stride, mu, rng)
    _raise_for_status(status)
    history_t = None
    hist = None
    if config.record_history:
        hist = history[:hist_rows].copy()
        history_t = (np.arange(hist_rows, dtype=np.int64) + 1) * config.history_stride
    return RunResult(
        final_J=theta,
        final_policy=_greedy_from(mdp, theta),
        visit_counts=counts,
        iterations_run=int(done),
        iterations_to_optimal=None if first_opt < 0 else int(first_opt),
        history_t=history_t,
        history=hist,
        final_sup_error=None if jstar is None
        else float(np.max(np.abs(theta - jstar))))


@dataclass(frozen=True, eq=False)
class DiagnosticsTable:
    """Per-state sampling statistics under a fixed policy, paired with
    the exact values they estimate. The conditional-on-visit sample mean
    of the first-visit tail cost should match the exact policy value, and
    the visit frequency should match the exact visit probability."""

    samples: int
    visit_count: np.ndarray
    visit_freq: np.ndarray
    mean_estimate: np.ndarray
    stderr: np.ndarray
    j_exact: np.ndarray
    q_exact: np.ndarray


def estimator_diagnostics(mdp: Mdp, mu, p: InitialDistribution,
                          samples: int, rng: np.random.Generator | None = None,
                          epsilon_bias: float = 1e-9) -> DiagnosticsTable:
    """Draw independent trajectories under mu and compare the first-visit
    estimator and visit frequencies against their exact counterparts."""
    mu = np.asarray(mu, dtype=np.int64)
    report = analyze(mdp, p)
    view = _kernel.sparse_view(mdp)
    if mdp.problem_class == DISCOUNTED:
        window = truncation_horizon(mdp, epsilon_bias)
        budget, undiscounted = (mdp.num_states + 1) * window, False
    else:
        window = 0
        budget, undiscounted = len(report.transient_states) + 1, True
    if rng is None:
        rng = stream(0)
    n = mdp.num_states
    visit_count = np.zeros(n, dtype=np.int64)
    tail_sum = np.zeros(n)
    tail_sumsq = np.zeros(n)
    status = _kernel.diagnostics_loop(
        view.sa_offset, view.cost, view.indptr, view.targets,
        view.cum_probs, view.absorbing_row, view.discount, mu,
        _cumulative(p.p), int(samples), budget, window, undiscounted, rng,
        visit_count, tail_sum, tail_sumsq)
    _raise_for_status(status)
    mean = np.full(n, np.nan)
    stderr = np.full(n, np.nan)
    visited = visit_count > 0
    mean[visited] = tail_sum[visited] / visit_count[visited]
    twice = visit_count > 1
    var = np.zeros(n)
    var[twice] = np.maximum(
        0.0,
        (tail_sumsq[twice] - visit_count[twice] * mean[twice] ** 2)
        / (visit_count[twice] - 1))
    stderr[twice] = np.sqrt(var[twice] / visit_count[twice])
    return DiagnosticsTable(
        samples=int(samples),
        visit_count=visit_count,
        visit_freq=visit_count / float(samples),
        mean_estimate=mean,
        stderr=stderr,
        j_exact=evaluate_policy_exact(mdp, mu, report=report),
        q_exact=reach_probabilities(mdp, mu, p, report))
