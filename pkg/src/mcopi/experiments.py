"""Benchmark MDP generators and the update-mode comparison harness.

Both benchmark families start from a DAG with a single sink (state 0)
and per-state reward labels. Rewards become costs by negation plus the
smallest uniform shift that keeps costs nonnegative; a uniform per-step
shift moves every policy's value by the same constant, so greedy
decisions and optimal-action sets are untouched.

The harness runs the trajectory-update and start-state-only variants on
paired, independent RNG streams and reports the distribution of
iterations until the greedy policy first becomes optimal.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvariantViolation, MdpFormatError
from .mdp import DISCOUNTED, InitialDistribution, Mdp
from .opi import FIRST_STATE_ONLY, TRAJECTORY_UPDATE, OpiConfig, run_opi, stream
from .solvers import policy_iteration

EXPERIMENT_1 = "exp1"
EXPERIMENT_2 = "exp2"

MODES = (TRAJECTORY_UPDATE, FIRST_STATE_ONLY)

DEFAULT_CHOSEN_PROB = 0.6
DEFAULT_SAFE_PROB = 0.8
DEFAULT_PENALTY = 1.0
DEFAULT_ALPHA = 0.9
DEFAULT_CAP = 1_000_000


@dataclass(frozen=True, eq=False)
class BaseGraph:
    """Acyclic skeleton: directed edges with sink 0, reward label per state."""

    num_states: int
    edges: tuple[tuple[int, int], ...]
    rewards: tuple[float, ...]

    def out_neighbors(self) -> list[list[int]]:
        out = [[] for _ in range(self.num_states)]
        for i, j in self.edges:
            out[i].append(j)
        return [sorted(set(nbrs)) for nbrs in out]


def _check_base_graph(graph: BaseGraph):
    n = graph.num_states
    if len(graph.rewards) != n:
        raise InvariantViolation(
            f"need one reward per state: {len(graph.rewards)} given for {n}")
    if graph.rewards[0] != 0.0:
        raise InvariantViolation("the sink carries no reward label")
    out = graph.out_neighbors()
    if out[0]:
        raise InvariantViolation("state 0 must be the unique sink")
    for i in range(1, n):
        if not out[i]:
            raise InvariantViolation(f"state {i} has no out-edge")
        if i in out[i]:
            raise InvariantViolation(f"state {i} has a self-loop")
    for i, j in graph.edges:
        if not (0 <= i < n and 0 <= j < n):
            raise InvariantViolation(f"edge ({i}, {j}) outside 0..{n - 1}")
    # Topological check (sink excluded, every walk must terminate).
    indegree = [0] * n
    for i in range(n):
        for j in out[i]:
            indegree[j] += 1
    ready = [i for i in range(n) if indegree[i] == 0]
    seen = 0
    while ready:
        v = ready.pop()
        seen += 1
        for j in out[v]:
            indegree[j] -= 1
            if indegree[j] == 0:
                ready.append(j)
    if seen != n:
        raise InvariantViolation("base graph has a cycle")
    return out


def random_base_graph(n: int, max_out_degree: int, seed: int,
                      window: int = 4, reward_range: int = 10) -> BaseGraph:
    """Random layered-ish DAG: state i points to 1..max_out_degree states
    among its `window` immediate predecessors, which keeps paths long
    enough for trajectory-wide updates to matter. Rewards are integers in
    [0, reward_range)."""
    if n < 2:
        raise InvariantViolation("need at least a sink and one more state")
    rng = stream(seed, 101)
    edges = []
    for i in range(1, n):
        lo = max(0, i - window)
        pool = np.arange(lo, i)
        d = int(rng.integers(1, min(max_out_degree, pool.size) + 1))
        targets = rng.choice(pool, size=d, replace=False)
        for j in sorted(int(t) for t in targets):
            edges.append((i, j))
    rewards = [0.0] + [float(rng.integers(0, reward_range))
                       for _ in range(n - 1)]
    return BaseGraph(num_states=n, edges=tuple(edges), rewards=tuple(rewards))


def load_base_graph(path) -> BaseGraph:
    """Graph file: {"num_states": n, "edges": [[i, j], ...],
    "rewards": [r0, r1, ...]}."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MdpFormatError(
                f"{path}: parse error at line {exc.lineno}, column "
                f"{exc.colno}: {exc.msg}") from exc
    try:
        graph = BaseGraph(
            num_states=int(doc["num_states"]),
            edges=tuple((int(i), int(j)) for i, j in doc["edges"]),
            rewards=tuple(float(r) for r in doc["rewards"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise MdpFormatError(f"{path}: bad graph file: {exc}") from exc
    _check_base_graph(graph)
    return graph


# Shipped desk-scale benchmark graphs (20 states, sink 0). Frozen from
# random_base_graph draws so results are reproducible without regenerating.
DEFAULT_EXP1_GRAPH = BaseGraph(
    num_states=20,
    edges=((1, 0), (2, 0), (2, 1), (3, 1), (3, 2), (4, 0), (4, 2), (4, 3),
           (5, 2), (5, 4), (6, 3), (6, 5), (7, 4), (7, 5), (7, 6), (8, 5),
           (8, 7), (9, 6), (9, 8), (10, 7), (10, 9), (11, 8), (11, 10),
           (12, 9), (12, 11), (13, 10), (13, 12), (14, 11), (14, 13),
           (15, 12), (15, 14), (16, 13), (16, 15), (17, 14), (17, 16),
           (18, 15), (18, 17), (19, 16), (19, 18)),
    rewards=(0.0, 4.0, 7.0, 1.0, 8.0, 2.0, 9.0, 3.0, 6.0, 5.0,
             2.0, 7.0, 1.0, 8.0, 4.0, 6.0, 3.0, 9.0, 5.0, 2.0))

DEFAULT_EXP2_GRAPH = BaseGraph(
    num_states=18,
    edges=((1, 0), (2, 1), (3, 1), (4, 1), (4, 2), (4, 3), (5, 1), (5, 2),
           (5, 3), (6, 2), (6, 4), (7, 4), (7, 5), (8, 5), (8, 6), (9, 5),
           (9, 7), (9, 8), (10, 8), (10, 9), (11, 7), (12, 11), (13, 9),
           (13, 10), (13, 11), (14, 11), (15, 11), (15, 14), (16, 12),
           (16, 13), (17, 14), (17, 15)),
    rewards=(0.0, 1.0, 0.0, 5.0, 5.0, 8.0, 5.0, 8.0, 5.0, 3.0, 1.0, 0.0,
             8.0, 6.0, 1.0, 9.0, 9.0, 2.0))


@dataclass(frozen=True, eq=False)
class GeneratorSpec:
    """Recipe for one benchmark MDP.

    exp1 attaches one action per edge: probability chosen_prob of taking
    the edge, remainder split uniformly over the other out-neighbors
    (deterministic when there is only one edge). exp2 attaches a second,
    safer action per edge (safe_prob to the chosen edge) whose reward is
    lower by `penalty`.
    """

    mode: str
    graph: BaseGraph
    chosen_prob: float = DEFAULT_CHOSEN_PROB
    safe_prob: float = DEFAULT_SAFE_PROB
    penalty: float = DEFAULT_PENALTY
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.mode not in (EXPERIMENT_1, EXPERIMENT_2):
            raise InvariantViolation(f"unknown experiment mode {self.mode!r}")
        if not 0.0 < self.chosen_prob <= 1.0 or not 0.0 < self.safe_prob <= 1.0:
            raise InvariantViolation("edge probabilities must be in (0, 1]")


@dataclass(frozen=True, eq=False)
class GeneratedExperiment:
    """Benchmark MDP plus the recorded reward-to-cost shift."""

    mdp: Mdp
    initial: InitialDistribution
    shift: float
    spec: GeneratorSpec


def _edge_action(n: int, targets: list[int], chosen: int, prob: float) -> np.ndarray:
    row = np.zeros(n)
    if len(targets) == 1:
        row[targets[0]] = 1.0
        return row
    others = [j for j in targets if j != chosen]
    row[chosen] = prob
    for j in others:
        row[j] = (1.0 - prob) / len(others)
    return row


def generate_experiment_mdp(spec: GeneratorSpec) -> GeneratedExperiment:
    """Materialize the benchmark MDP; start states are uniform over all
    states.

    The sink must carry start mass: its shifted cost makes its value
    shift/(1-alpha) rather than zero, and the start-state-only update
    mode can only learn that value from trajectories that begin there.
    """
    out = _check_base_graph(spec.graph)
    n = spec.graph.num_states
    rewards = spec.graph.rewards
    shift = max(rewards)
    costs = []
    transitions = []
    for i in range(n):
        if i == 0:
            row = np.zeros(n)
            row[0] = 1.0
            costs.append(np.array([shift - rewards[0]]))
            transitions.append(row.reshape(1, n))
            continue
        targets = out[i]
        c = []
        P = []
        for j in targets:
            P.append(_edge_action(n, targets, j, spec.chosen_prob))
            c.append(shift - rewards[i])
            if spec.mode == EXPERIMENT_2:
                P.append(_edge_action(n, targets, j, spec.safe_prob))
                c.append(shift - (rewards[i] - spec.penalty))
        costs.append(np.asarray(c))
        transitions.append(np.vstack(P))
    mdp = Mdp(num_states=n, costs=tuple(costs), transitions=tuple(transitions),
              problem_class=DISCOUNTED, alpha=spec.alpha)
    p = np.full(n, 1.0 / n)
    return GeneratedExperiment(
        mdp=mdp, initial=InitialDistribution(p), shift=float(shift), spec=spec)


@dataclass(frozen=True)
class TrialOutcome:
    trial: int
    mode: str
    iterations_to_optimal: int | None  # None when censored at the cap


@dataclass(frozen=True, eq=False)
class ModeSummary:
    mode: str
    converged: int
    censored: int
    mean: float | None
    median: float | None
    q25: float | None
    q75: float | None


@dataclass(frozen=True, eq=False)
class ComparisonResult:
    """Iterations-to-optimal distributions for both update modes under
    paired trial indices and independent per-(mode, trial) RNG streams."""

    trials: int
    seed: int
    cap: int
    schedule_label: str
    outcomes: tuple[TrialOutcome, ...]
    summaries: tuple[ModeSummary, ...]

    def iterations(self, mode: str) -> list[int]:
        return [o.iterations_to_optimal for o in self.outcomes
                if o.mode == mode and o.iterations_to_optimal is not None]

    def summary(self, mode: str) -> ModeSummary:
        for s in self.summaries:
            if s.mode == mode:
                return s
        raise KeyError(mode)


def _trial_count() -> int:
    env = os.environ.get("OPI_THREADS")
    cpus = os.cpu_count() or 1
    if env is None:
        return cpus
    try:
        return max(1, int(env))
    except ValueError:
        return cpus


def _summarize(mode: str, values: list[int | None]) -> ModeSummary:
    good = np.array([v for v in values if v is not None], dtype=float)
    censored = sum(1 for v in values if v is None)
    if good.size == 0:
        return ModeSummary(mode=mode, converged=0, censored=censored,
                           mean=None, median=None, q25=None, q75=None)
    return ModeSummary(
        mode=mode, converged=int(good.size), censored=censored,
        mean=float(np.mean(good)), median=float(np.median(good)),
        q25=float(np.quantile(good, 0.25)), q75=float(np.quantile(good, 0.75)))


def run_comparison(mdp: Mdp, p: InitialDistribution, trials: int,
                   base_config: OpiConfig) -> ComparisonResult:
    """Run both update modes for `trials` paired trials each.

    Trial i of mode m draws from the stream (seed, m, i), so re-running
    with the same arguments reproduces the result exactly and trials can
    run concurrently (capped by OPI_THREADS).
    """
    jstar, _, oracle = policy_iteration(mdp)
    jobs = []
    for mode_idx, mode in enumerate(MODES):
        config = replace(base_config, update_mode=mode, stop_at_optimal=True)
        for trial in range(trials):
            jobs.append((mode_idx, mode, trial, config))

    def _run(job):
        mode_idx, mode, trial, config = job
        rng = stream(base_config.seed, mode_idx, trial)
        result = run_opi(mdp, p, config, oracle=oracle, jstar=jstar, rng=rng)
        return TrialOutcome(trial=trial, mode=mode,
                            iterations_to_optimal=result.iterations_to_optimal)

    workers = min(len(jobs), _trial_count())
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run, jobs))
    else:
        outcomes = [_run(job) for job in jobs]

    summaries = tuple(
        _summarize(mode, [o.iterations_to_optimal for o in outcomes
                          if o.mode == mode])
        for mode in MODES)
    return ComparisonResult(
        trials=trials, seed=base_config.seed, cap=base_config.max_iterations,
        schedule_label=base_config.schedule.label(),
        outcomes=tuple(outcomes), summaries=summaries)


def histogram_rows(result: ComparisonResult, bins: int = 30):
    """Equal-width histogram over the pooled uncensored iteration counts;
    rows are (mode, bin_lo, bin_hi, count)."""
    pooled = [v for mode in MODES for v in result.iterations(mode)]
    rows = []
    if not pooled:
        return rows
    lo = float(min(pooled))
    hi = float(max(pooled))
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    for mode in MODES:
        counts, _ = np.histogram(np.array(result.iterations(mode), dtype=float),
                                 bins=edges)
        for b in range(bins):
            rows.append((mode, float(edges[b]), float(edges[b + 1]),
                         int(counts[b])))
    return rows
