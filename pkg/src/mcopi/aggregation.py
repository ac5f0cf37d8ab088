"""Cluster-aggregated OPI.

When groups of states are known to share one optimal value, the value
table shrinks to one parameter per cluster. The run then updates a
cluster's parameter from the tail cost of the first visited member. This
is sound on layered structures: clusters sit inside single layers
(states with equal maximum distance to the absorbing set), every edge
drops strictly in layer, so a trajectory meets each cluster at most once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernel
from .errors import InvariantViolation, StructureViolation
from .mdp import InitialDistribution, Mdp
from .opi import _cumulative, _greedy_from, _optimal_row_mask, _raise_for_status, \
    _step_budget, _NO_HISTORY, _NO_ROWS, FIRST_STATE_ONLY, TIME_BASED, \
    OpiConfig, stream
from .solvers import OptimalActionSets
from .structure import StructureReport, build_reachability_graph, \
    reachable_mask


@dataclass(frozen=True, eq=False)
class ClusterMap:
    """Partition of states into clusters plus layer bookkeeping.

    state_layer[i] is the maximum number of steps from i to the absorbing
    set along the reachability graph (0 for absorbing states); a cluster's
    layer is the common layer of its members once validated.
    """

    num_states: int
    cluster_of: np.ndarray
    members: tuple[tuple[int, ...], ...]
    layer: tuple[int, ...]
    state_layer: np.ndarray

    @property
    def num_clusters(self) -> int:
        return len(self.members)


def singleton_clusters(n: int) -> list[list[int]]:
    return [[i] for i in range(n)]


def build_cluster_map(mdp: Mdp, clusters: list[list[int]],
                      report: StructureReport) -> ClusterMap:
    """Resolve raw cluster lists against the MDP structure.

    Requires a partition of the states and an acyclic transient subgraph
    (layers are meaningless otherwise). Longest distances to the absorbing
    set are computed by dynamic programming along the topological order.
    """
    n = mdp.num_states
    cluster_of = np.full(n, -1, dtype=np.int64)
    for c, members in enumerate(clusters):
        for i in members:
            if not 0 <= i < n:
                raise InvariantViolation(
                    f"cluster {c} names state {i} outside 0..{n - 1}")
            if cluster_of[i] != -1:
                raise InvariantViolation(
                    f"state {i} appears in clusters {cluster_of[i]} and {c}")
            cluster_of[i] = c
    missing = np.flatnonzero(cluster_of < 0)
    if missing.size:
        raise InvariantViolation(
            f"states {missing.tolist()} belong to no cluster")
    if not report.assumption3_ok:
        raise StructureViolation(
            f"layers are undefined on a cyclic transient subgraph "
            f"(cycle {list(report.transient_cycle)})")

    graph = build_reachability_graph(mdp)
    state_layer = np.zeros(n, dtype=np.int64)
    for i in report.transient_states:
        state_layer[i] = 1 + max(state_layer[j] for j in graph.out_neighbors[i])
    layer = tuple(int(max(state_layer[i] for i in members))
                  for members in clusters)
    cluster_of.setflags(write=False)
    state_layer.setflags(write=False)
    return ClusterMap(
        num_states=n, cluster_of=cluster_of,
        members=tuple(tuple(sorted(m)) for m in clusters),
        layer=layer, state_layer=state_layer)


@dataclass(frozen=True, eq=False)
class ClusterValidation:
    ok: bool
    violations: tuple[str, ...]


def validate_clusters(mdp: Mdp, clusters: ClusterMap,
                      report: StructureReport, jstar: np.ndarray,
                      tol: float = 1e-9,
                      check_values: bool = True) -> ClusterValidation:
    """Check the aggregation requirements.

    (a) the clusters partition the states, (b) every non-transient state
    is absorbing, (c) members of a cluster share one layer and absorbing
    states are never mixed with transient ones, (d) members share the
    optimal value within tol (skippable for large models via
    check_values), and (e) every cluster is reachable from the start
    distribution the report was built with.
    """
    violations = []
    covered = sorted(i for members in clusters.members for i in members)
    if covered != list(range(mdp.num_states)):
        violations.append("clusters do not partition the states")
    for cls in report.recurrent_classes:
        if len(cls) > 1:
            violations.append(
                f"recurrent class {list(cls)} is not a single absorbing "
                f"state")
    absorbing = {i for cls in report.recurrent_classes for i in cls}
    for c, members in enumerate(clusters.members):
        layers = {int(clusters.state_layer[i]) for i in members}
        if len(layers) > 1:
            violations.append(
                f"cluster {c} mixes layers {sorted(layers)}: members "
                f"{list(members)}")
        kinds = {i in absorbing for i in members}
        if len(kinds) > 1:
            violations.append(
                f"cluster {c} mixes absorbing and transient states")
    if check_values:
        for c, members in enumerate(clusters.members):
            vals = [float(jstar[i]) for i in members]
            spread = max(vals) - min(vals)
            if spread > tol:
                violations.append(
                    f"cluster {c} members disagree on the optimal value by "
                    f"{spread:g} (> {tol:g})")
    unreachable = set(report.unreachable_states)
    for c, members in enumerate(clusters.members):
        if all(i in unreachable for i in members):
            violations.append(
                f"cluster {c} is unreachable from the start distribution")
    return ClusterValidation(ok=not violations, violations=tuple(violations))


@dataclass(frozen=True, eq=False)
class ThetaVector:
    """Cluster-level run state: one value and one visit count per cluster.
    The implied state values are theta[cluster_of[i]]."""

    theta: np.ndarray
    visit_counts: np.ndarray


@dataclass(frozen=True, eq=False)
class AggregatedRunResult:
    """Outcome of an aggregated run. J is exactly theta[cluster_of]."""

    theta: np.ndarray
    J: np.ndarray
    cluster_counts: np.ndarray
    final_policy: np.ndarray
    iterations_run: int
    iterations_to_optimal: int | None
    history_t: np.ndarray | None = None
    history: np.ndarray | None = None
    max_cluster_error: float | None = None

    @property
    def params(self) -> ThetaVector:
        return ThetaVector(theta=self.theta, visit_counts=self.cluster_counts)


def cluster_reach_probabilities(q: np.ndarray, clusters: ClusterMap) -> np.ndarray:
    """Diagnostic: per-cluster visit probability as the sum of member
    visit probabilities (members are never shared between trajectories'
    layers, so the events are disjoint)."""
    out = np.zeros(clusters.num_clusters)
    for c, members in enumerate(clusters.members):
        out[c] = sum(float(q[i]) for i in members)
    return np.minimum(out, 1.0)


def run_opi_aggregated(mdp: Mdp, p: InitialDistribution,
                       clusters: ClusterMap, config: OpiConfig,
                       oracle: OptimalActionSets | None = None,
                       jstar: np.ndarray | None = None,
                       rng: np.random.Generator | None = None,
                       ) -> AggregatedRunResult:
    """Aggregated OPI from theta = 0.

    The greedy policy is computed against J(i) = theta[cluster_of[i]];
    each iteration updates every cluster the trajectory touched using the
    tail cost at the first visited member, with the step size driven by
    the cluster's own visit count (or by t in time mode). With singleton
    clusters this is the plain trajectory-update run, bit for bit.
    """
    view = _kernel.sparse_view(mdp)
    n = mdp.num_states
    k = clusters.num_clusters
    budget, window, undiscounted = _step_budget(mdp, p, config)
    theta = np.zeros(k)
    counts = np.zeros(k, dtype=np.int64)
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
        history = np.zeros((records, k))
        stride = config.history_stride
    else:
        history = _NO_HISTORY
        stride = 0
    status, done, first_opt, hist_rows = _kernel.run_loop(
        view.sa_offset, view.cost, view.indptr, view.targets, view.probs,
        view.cum_probs, view.absorbing_row, view.discount,
        clusters.cluster_of, theta, counts,
        0, config.max_iterations,
        config.schedule.mode == TIME_BASED, config.schedule.c,
        config.schedule.rho, config.update_mode == FIRST_STATE_ONLY,
        budget, window, undiscounted, _cumulative(p.p),
        opt_rows, check_states, detect,
        config.stop_at_optimal, config.check_invariants,
        history, stride, mu, rng)
    _raise_for_status(status)
    max_err = None
    if jstar is not None:
        ref = np.array([float(jstar[members[0]]) for members in clusters.members])
        max_err = float(np.max(np.abs(theta - ref)))
    history_t = None
    hist = None
    if config.record_history:
        hist = history[:hist_rows].copy()
        history_t = (np.arange(hist_rows, dtype=np.int64) + 1) * config.history_stride
    return AggregatedRunResult(
        theta=theta,
        J=theta[clusters.cluster_of],
        cluster_counts=counts,
        final_policy=_greedy_from(mdp, theta, clusters.cluster_of),
        iterations_run=int(done),
        iterations_to_optimal=None if first_opt < 0 else int(first_opt),
        history_t=history_t,
        history=hist,
        max_cluster_error=max_err)
