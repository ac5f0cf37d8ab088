"""Exact dynamic-programming solvers used as oracles.

Value functions are plain float vectors and policies are plain int
vectors (action index per state). All argmins break ties toward the
lowest action index so results are fully deterministic.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .errors import MaxIterationsExceeded, NonContractive, StructureViolation
from .mdp import DISCOUNTED, GAME, InitialDistribution, Mdp
from .structure import StructureReport, analyze

DIRECT_SOLVE_MAX_STATES = 2000
EVAL_RESIDUAL_TOL = 1e-10
OPTIMALITY_RESIDUAL_TOL = 1e-9
TIE_TOL = 1e-9

ValueFunction = np.ndarray
Policy = np.ndarray


@dataclass(frozen=True, eq=False)
class OptimalActionSets:
    """Per state, every action whose backup at J* sits within the tie
    tolerance of the minimum. Used to decide whether a greedy policy is
    optimal without insisting on one particular minimizer."""

    sets: tuple[tuple[int, ...], ...]

    def contains(self, state: int, action: int) -> bool:
        return action in self.sets[state]

    def covers(self, policy: Policy, mask=None) -> bool:
        """True when policy picks an optimal action at every state
        (or every state selected by mask)."""
        for i, acts in enumerate(self.sets):
            if mask is not None and not mask[i]:
                continue
            if int(policy[i]) not in acts:
                return False
        return True


_STACK_CACHE: "weakref.WeakKeyDictionary[Mdp, tuple]" = \
    weakref.WeakKeyDictionary()


def _stacked(mdp: Mdp):
    """(costs, transition matrix, row offsets) with one row per
    state-action pair, rows of state i at offsets[i]..offsets[i+1]."""
    cached = _STACK_CACHE.get(mdp)
    if cached is not None:
        return cached
    offsets = np.zeros(mdp.num_states + 1, dtype=np.int64)
    for i in range(mdp.num_states):
        offsets[i + 1] = offsets[i] + mdp.num_actions(i)
    C = np.concatenate(mdp.costs)
    P = np.vstack(mdp.transitions)
    C.setflags(write=False)
    P.setflags(write=False)
    stacked = (C, P, offsets)
    _STACK_CACHE[mdp] = stacked
    return stacked


def _backups(mdp: Mdp, J: ValueFunction) -> np.ndarray:
    """One-step backup of every state-action row: c + discount * P @ J."""
    C, P, _ = _stacked(mdp)
    return C + mdp.discount * (P @ J)


def apply_policy_bellman(mdp: Mdp, mu: Policy, J: ValueFunction) -> ValueFunction:
    """One-step backup of J under a fixed policy."""
    _, _, offsets = _stacked(mdp)
    vals = _backups(mdp, J)
    rows = offsets[:-1] + np.asarray(mu, dtype=np.int64)
    return vals[rows]


def apply_bellman(mdp: Mdp, J: ValueFunction) -> tuple[ValueFunction, Policy]:
    """Optimal one-step backup of J and the corresponding greedy policy."""
    _, _, offsets = _stacked(mdp)
    vals = _backups(mdp, J)
    n = mdp.num_states
    TJ = np.empty(n)
    greedy = np.empty(n, dtype=np.int64)
    for i in range(n):
        lo, hi = offsets[i], offsets[i + 1]
        a = int(np.argmin(vals[lo:hi]))
        greedy[i] = a
        TJ[i] = vals[lo + a]
    return TJ, greedy


def greedy_policy(mdp: Mdp, J: ValueFunction) -> Policy:
    return apply_bellman(mdp, J)[1]


def _dag_order_or_raise(mdp: Mdp, report: StructureReport | None):
    """Structure check shared by the undiscounted solvers: transient part
    acyclic, recurrent part absorbing. Returns the report."""
    if report is None:
        p_any = np.zeros(mdp.num_states)
        p_any[0] = 1.0
        report = analyze(mdp, InitialDistribution(p_any))
    if not report.assumption3_ok:
        raise NonContractive(
            f"undiscounted problem with a transient cycle "
            f"{list(report.transient_cycle)}: values may be infinite")
    return report


def _zero_cost_class_or_raise(mdp: Mdp, cls, chosen_costs):
    for i in cls:
        if chosen_costs[i] != 0.0:
            raise NonContractive(
                f"undiscounted problem accumulates nonzero cost forever in "
                f"recurrent class {list(cls)} (state {i})")


def evaluate_policy_exact(mdp: Mdp, mu: Policy,
                          report: StructureReport | None = None) -> ValueFunction:
    """Exact value of a fixed policy.

    Discounted problems are solved directly (partial-pivot linear solve up
    to 2000 states, fixed-point iteration beyond). Undiscounted problems
    require a DAG-to-absorbing structure and are solved by backward
    substitution in reverse topological order.
    """
    n = mdp.num_states
    mu = np.asarray(mu, dtype=np.int64)
    C, P, offsets = _stacked(mdp)
    rows = offsets[:-1] + mu
    c_mu = C[rows]
    P_mu = P[rows]

    if mdp.problem_class == DISCOUNTED:
        if n <= DIRECT_SOLVE_MAX_STATES:
            A = np.eye(n) - mdp.discount * P_mu
            return np.linalg.solve(A, c_mu)
        J = np.zeros(n)
        for _ in range(10_000_000):
            TJ = apply_policy_bellman(mdp, mu, J)
            if float(np.max(np.abs(TJ - J))) < EVAL_RESIDUAL_TOL:
                return TJ
            J = TJ
        raise MaxIterationsExceeded(
            "policy evaluation did not reach the residual tolerance")

    report = _dag_order_or_raise(mdp, report)
    J = np.zeros(n)
    for cls in report.recurrent_classes:
        _zero_cost_class_or_raise(mdp, cls, c_mu)
    for i in report.transient_states:
        J[i] = c_mu[i] + mdp.discount * float(P_mu[i] @ J)
    return J


def value_iteration(mdp: Mdp, tol: float = 1e-8,
                    max_iterations: int = 1_000_000,
                    report: StructureReport | None = None) -> ValueFunction:
    """Optimal value function.

    Discounted: fixed-point iteration stopped once the one-step change is
    below tol*(1-alpha)/(2*alpha), which bounds the distance to the fixed
    point by tol. Undiscounted (SSP/game): exact backward induction over
    the reverse topological order of the validated DAG structure.
    """
    n = mdp.num_states
    if mdp.problem_class == DISCOUNTED:
        alpha = mdp.discount
        threshold = tol * (1.0 - alpha) / (2.0 * alpha)
        J = np.zeros(n)
        for _ in range(max_iterations):
            TJ, _ = apply_bellman(mdp, J)
            if float(np.max(np.abs(TJ - J))) < threshold:
                return TJ
            J = TJ
        raise MaxIterationsExceeded(
            f"value iteration did not converge in {max_iterations} sweeps")

    report = _dag_order_or_raise(mdp, report)
    C, P, offsets = _stacked(mdp)
    J = np.zeros(n)
    for cls in report.recurrent_classes:
        # A closed class accumulates its own costs forever; a finite
        # minimum requires a zero-cost action everywhere in it (and for
        # the sign-flipped game form, no negative-cost escape either).
        for i in cls:
            lo, hi = offsets[i], offsets[i + 1]
            best = float(np.min(C[lo:hi]))
            if best != 0.0 or (mdp.problem_class == GAME
                               and float(np.max(C[lo:hi])) != 0.0):
                raise NonContractive(
                    f"recurrent class {list(cls)} has nonzero costs; "
                    f"undiscounted values are not finite")
    for i in report.transient_states:
        lo, hi = offsets[i], offsets[i + 1]
        vals = C[lo:hi] + mdp.discount * (P[lo:hi] @ J)
        J[i] = float(np.min(vals))
    return J


def policy_iteration(mdp: Mdp,
                     report: StructureReport | None = None,
                     max_iterations: int = 10_000,
                     ) -> tuple[ValueFunction, Policy, OptimalActionSets]:
    """Alternate exact policy evaluation with greedy improvement until the
    policy is stable; returns the optimal value, one optimal policy, and
    the per-state sets of actions within TIE_TOL of the optimal backup."""
    if mdp.problem_class != DISCOUNTED:
        report = _dag_order_or_raise(mdp, report)
    J0 = np.zeros(mdp.num_states)
    mu = greedy_policy(mdp, J0)
    for _ in range(max_iterations):
        J = evaluate_policy_exact(mdp, mu, report=report)
        _, improved = apply_bellman(mdp, J)
        if np.array_equal(improved, mu):
            return J, mu, optimal_action_sets(mdp, J)
        mu = improved
    raise MaxIterationsExceeded(
        f"policy iteration did not stabilize in {max_iterations} rounds")


def optimal_action_sets(mdp: Mdp, jstar: ValueFunction,
                        tie_tol: float = TIE_TOL) -> OptimalActionSets:
    """All actions attaining the optimal backup at jstar within tie_tol."""
    _, _, offsets = _stacked(mdp)
    vals = _backups(mdp, jstar)
    sets = []
    for i in range(mdp.num_states):
        lo, hi = offsets[i], offsets[i + 1]
        best = float(np.min(vals[lo:hi]))
        sets.append(tuple(int(a) for a in range(hi - lo)
                          if vals[lo + a] <= best + tie_tol))
    return OptimalActionSets(sets=tuple(sets))


def reach_probabilities(mdp: Mdp, mu: Policy, p: InitialDistribution,
                        report: StructureReport) -> np.ndarray:
    """Probability of ever visiting each state under a fixed policy.

    Transient states are handled in forward topological order; because
    each one can be visited at most once, last-step arrival events are
    disjoint and the visit probability is an exact sum. Entering a
    recurrent class means visiting all of it, so every member gets the
    class entry probability.
    """
    if not report.assumption2_ok or not report.assumption3_ok:
        raise StructureViolation(
            "reach probabilities need action-independent supports and an "
            "acyclic transient subgraph")
    n = mdp.num_states
    mu = np.asarray(mu, dtype=np.int64)
    acc = np.array(p.p, dtype=float)
    q = np.zeros(n)
    for i in reversed(report.transient_states):
        q[i] = min(1.0, float(acc[i]))
        acc += q[i] * mdp.transitions[i][mu[i]]
    for cls in report.recurrent_classes:
        entry = min(1.0, float(sum(acc[i] for i in cls)))
        for i in cls:
            q[i] = entry
    return q
