"""Compiled inner loops for trajectory simulation and value updates.

Everything here operates on a flat sparse view of the MDP so a single
kernel serves the plain, SSP, game, and aggregated runs; the aggregated
run with singleton clusters is then the exact same computation as the
plain run, float op for float op. The kernels draw from a numpy
Generator directly, so results are identical whether or not the JIT is
active.

Status codes returned by the kernels:
  0  ok
  1  an undiscounted trajectory hit its step cap without absorbing
  2  a visit count exceeded the iteration counter
  3  a visit-based step size fell below the time-based one
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
from numba import njit

from .mdp import Mdp

STATUS_OK = 0
STATUS_NO_ABSORPTION = 1
STATUS_COUNT_EXCEEDS_T = 2
STATUS_STEP_NOT_MONOTONE = 3


@dataclass(frozen=True, eq=False)
class SparseView:
    """CSR-style layout: one row per (state, action); row r of state i is
    r = sa_offset[i] + a. cum_probs is the within-row running sum used
    for inverse-CDF sampling, with the final entry forced to 1."""

    num_states: int
    sa_offset: np.ndarray      # (n+1,) int64
    cost: np.ndarray           # (rows,) float64
    indptr: np.ndarray         # (rows+1,) int64
    targets: np.ndarray        # (nnz,) int64
    probs: np.ndarray          # (nnz,) float64
    cum_probs: np.ndarray      # (nnz,) float64
    absorbing_row: np.ndarray  # (rows,) bool: self-loop w.p. 1, cost 0
    discount: float


_VIEW_CACHE: "weakref.WeakKeyDictionary[Mdp, SparseView]" = \
    weakref.WeakKeyDictionary()


def sparse_view(mdp: Mdp) -> SparseView:
    view = _VIEW_CACHE.get(mdp)
    if view is not None:
        return view
    n = mdp.num_states
    sa_offset = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        sa_offset[i + 1] = sa_offset[i] + mdp.num_actions(i)
    rows = int(sa_offset[-1])
    cost = np.empty(rows)
    indptr = np.zeros(rows + 1, dtype=np.int64)
    targets_parts = []
    probs_parts = []
    absorbing = np.zeros(rows, dtype=np.bool_)
    r = 0
    for i in range(n):
        P = mdp.transitions[i]
        for a in range(P.shape[0]):
            nz = np.flatnonzero(P[a] > 0.0)
            cost[r] = mdp.costs[i][a]
            targets_parts.append(nz.astype(np.int64))
            probs_parts.append(P[a, nz])
            indptr[r + 1] = indptr[r] + nz.size
            absorbing[r] = (nz.size == 1 and int(nz[0]) == i
                            and P[a, nz[0]] == 1.0 and cost[r] == 0.0)
            r += 1
    targets = np.concatenate(targets_parts)
    probs = np.concatenate(probs_parts)
    cum = np.empty_like(probs)
    for rr in range(rows):
        lo, hi = indptr[rr], indptr[rr + 1]
        cum[lo:hi] = np.cumsum(probs[lo:hi])
        cum[hi - 1] = 1.0
    for arr in (sa_offset, cost, indptr, targets, probs, cum, absorbing):
        arr.setflags(write=False)
    view = SparseView(num_states=n, sa_offset=sa_offset, cost=cost,
                      indptr=indptr, targets=targets, probs=probs,
                      cum_probs=cum, absorbing_row=absorbing,
                      discount=mdp.discount)
    _VIEW_CACHE[mdp] = view
    return view


@njit(cache=True, nogil=True)
def _pick(cum, lo, u):
    z = lo
    while cum[z] <= u:
        z += 1
    return z


@njit(cache=True, nogil=True)
def _walk(sa_offset, cost, indptr, targets, cum_probs, absorbing_row,
          mu, start, max_steps, window, first_seen, rng,
          states_buf, actions_buf, costs_buf):
    """Simulate one trajectory under mu. Returns (length, absorbed).

    Stops at a zero-cost absorbing state, or (window > 0) once `window`
    steps have been recorded past the latest first visit, which caps the
    omitted tail of every first-visit estimate by the bias bound, or
    (window == 0) at max_steps. Deterministic transitions draw nothing
    from the generator. first_seen is scratch and is left all-False.
    """
    s = start
    k = 0
    last_new = 0
    while True:
        a = mu[s]
        r = sa_offset[s] + a
        states_buf[k] = s
        actions_buf[k] = a
        costs_buf[k] = cost[r]
        if not first_seen[s]:
            first_seen[s] = True
            last_new = k
        k += 1
        if absorbing_row[r]:
            absorbed = True
            break
        if k >= max_steps or (window > 0 and k - last_new >= window):
            absorbed = False
            break
        lo = indptr[r]
        if indptr[r + 1] - lo == 1:
            s = targets[lo]
        else:
            u = rng.random()
            z = _pick(cum_probs, lo, u)
            s = targets[z]
    for idx in range(k):
        first_seen[states_buf[idx]] = False
    return k, absorbed


@njit(cache=True, nogil=True)
def _greedy(sa_offset, cost, indptr, targets, probs, discount,
            cluster_of, theta, mu):
    """Greedy policy w.r.t. the value J(i) = theta[cluster_of[i]];
    ties go to the lowest action index."""
    n = sa_offset.shape[0] - 1
    for i in range(n):
        lo = sa_offset[i]
        hi = sa_offset[i + 1]
        best = np.inf
        best_a = 0
        for r in range(lo, hi):
            acc = 0.0
            for z in range(indptr[r], indptr[r + 1]):
                acc += probs[z] * theta[cluster_of[targets[z]]]
            v = cost[r] + discount * acc
            if v < best:
                best = v
                best_a = r - lo
        mu[i] = best_a


@njit(cache=True, nogil=True)
def run_loop(sa_offset, cost, indptr, targets, probs, cum_probs,
             absorbing_row, discount,
             cluster_of, theta, counts,
             t_start, num_iterations,
             time_based, beta_c, beta_rho, first_state_only,
             max_steps, window, undiscounted,
             p_cum,
             opt_row_mask, check_state_mask, detect_optimal,
             stop_at_optimal, check_invariants,
             history, history_stride,
             mu, rng):
    """Run OPI iterations in place on (theta, counts).

    Returns (status, iterations_done, first_optimal_t, history_rows).
    first_optimal_t is -1 until the greedy policy picks an optimal action
    at every state that can be visited at all.
    """
    n = sa_offset.shape[0] - 1
    k_clusters = theta.shape[0]
    states_buf = np.empty(max_steps, dtype=np.int64)
    actions_buf = np.empty(max_steps, dtype=np.int64)
    costs_buf = np.empty(max_steps)
    tails_buf = np.empty(max_steps)
    first_seen = np.zeros(n, dtype=np.bool_)
    first_idx = np.full(k_clusters, -1, dtype=np.int64)
    touched = np.empty(k_clusters, dtype=np.int64)
    first_optimal = np.int64(-1)
    history_rows = 0
    done = 0
    t = t_start
    for it in range(num_iterations):
        _greedy(sa_offset, cost, indptr, targets, probs, discount,
                cluster_of, theta, mu)

        if detect_optimal and first_optimal < 0:
            all_opt = True
            for i in range(n):
                if check_state_mask[i] and not opt_row_mask[sa_offset[i] + mu[i]]:
                    all_opt = False
                    break
            if all_opt:
                first_optimal = t
                if stop_at_optimal:
                    break

        u = rng.random()
        start = 0
        while p_cum[start] <= u:
            start += 1

        length, absorbed = _walk(sa_offset, cost, indptr, targets,
                                 cum_probs, absorbing_row, mu, start,
                                 max_steps, window, first_seen, rng,
                                 states_buf, actions_buf, costs_buf)
        if undiscounted and not absorbed:
            return STATUS_NO_ABSORPTION, done, first_optimal, history_rows

        tail = 0.0
        for k in range(length - 1, -1, -1):
            tail = costs_buf[k] + discount * tail
            tails_buf[k] = tail

        if first_state_only:
            n_touched = 1
            touched[0] = cluster_of[start]
            first_idx[cluster_of[start]] = 0
        else:
            n_touched = 0
            for k in range(length):
                c = cluster_of[states_buf[k]]
                if first_idx[c] < 0:
                    first_idx[c] = k
                    touched[n_touched] = c
                    n_touched += 1

        for m in range(n_touched):
            c = touched[m]
            if check_invariants and counts[c] > t:
                return STATUS_COUNT_EXCEEDS_T, done, first_optimal, history_rows
            if time_based:
                gamma = beta_c / (t + 1.0) ** beta_rho
            else:
                gamma = beta_c / (counts[c] + 1.0) ** beta_rho
                if check_invariants:
                    gamma_t = beta_c / (t + 1.0) ** beta_rho
                    if gamma < gamma_t:
                        return (STATUS_STEP_NOT_MONOTONE, done,
                                first_optimal, history_rows)
            theta[c] = (1.0 - gamma) * theta[c] + gamma * tails_buf[first_idx[c]]
            counts[c] += 1
            first_idx[c] = -1

        t += 1
        done += 1
        if history_stride > 0 and (it + 1) % history_stride == 0 \
                and history_rows < history.shape[0]:
            for c in range(k_clusters):
                history[history_rows, c] = theta[c]
            history_rows += 1
    return STATUS_OK, done, first_optimal, history_rows


@njit(cache=True, nogil=True)
def diagnostics_loop(sa_offset, cost, indptr, targets, cum_probs,
                     absorbing_row, discount, mu, p_cum, samples,
                     max_steps, window, undiscounted, rng,
                     visit_count, tail_sum, tail_sumsq):
    """Accumulate first-visit tail statistics over independent
    trajectories under a fixed policy."""
    n = sa_offset.shape[0] - 1
    states_buf = np.empty(max_steps, dtype=np.int64)
    actions_buf = np.empty(max_steps, dtype=np.int64)
    costs_buf = np.empty(max_steps)
    tails_buf = np.empty(max_steps)
    first_seen = np.zeros(n, dtype=np.bool_)
    first_idx = np.full(n, -1, dtype=np.int64)
    touched = np.empty(n, dtype=np.int64)
    for _ in range(samples):
        u = rng.random()
        start = 0
        while p_cum[start] <= u:
            start += 1
        length, absorbed = _walk(sa_offset, cost, indptr, targets,
                                 cum_probs, absorbing_row, mu, start,
                                 max_steps, window, first_seen, rng,
                                 states_buf, actions_buf, costs_buf)
        if undiscounted and not absorbed:
            return STATUS_NO_ABSORPTION
        tail = 0.0
        for k in range(length - 1, -1, -1):
            tail = costs_buf[k] + discount * tail
            tails_buf[k] = tail
        n_touched = 0
        for k in range(length):
            i = states_buf[k]
            if first_idx[i] < 0:
                first_idx[i] = k
                touched[n_touched] = i
                n_touched += 1
        for m in range(n_touched):
            i = touched[m]
            est = tails_buf[first_idx[i]]
            visit_count[i] += 1
            tail_sum[i] += est
            tail_sumsq[i] += est * est
            first_idx[i] = -1
    return STATUS_OK
