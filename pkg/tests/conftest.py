"""Shared model builders for the test suite.

Builders return (Mdp, InitialDistribution) pairs (plus extras where
noted). The structured families mirror the regimes the algorithm targets:
chains, layered DAGs with diamonds, rings as recurrent classes,
alternating games, and symmetric clustered MDPs.
"""

from __future__ import annotations

import numpy as np

from mcopi import DISCOUNTED, GAME, SSP, GameSpec, InitialDistribution, Mdp


def delta_row(n: int, j: int) -> np.ndarray:
    row = np.zeros(n)
    row[j] = 1.0
    return row


def delta_dist(n: int, j: int) -> InitialDistribution:
    return InitialDistribution(delta_row(n, j))


def chain_mdp(alpha: float | None = 0.9, problem_class: str = DISCOUNTED,
              costs=(0.0, 1.0, 2.0)):
    """Three-state chain 2 -> 1 -> 0 with a self-loop at 0."""
    n = 3
    mdp = Mdp(
        num_states=n,
        costs=tuple(np.array([c]) for c in costs),
        transitions=(delta_row(n, 0).reshape(1, n),
                     delta_row(n, 0).reshape(1, n),
                     delta_row(n, 1).reshape(1, n)),
        problem_class=problem_class,
        alpha=alpha)
    return mdp, delta_dist(n, 2)


def build_mdp(rows: dict[int, list[tuple[float, dict[int, float]]]],
              problem_class: str = DISCOUNTED, alpha: float | None = 0.9,
              num_states: int | None = None) -> Mdp:
    """Compact constructor: rows[i] = [(cost, {target: prob}), ...]."""
    n = num_states if num_states is not None else max(rows) + 1
    costs = []
    transitions = []
    for i in range(n):
        actions = rows[i]
        c = np.array([a[0] for a in actions], dtype=float)
        P = np.zeros((len(actions), n))
        for a, (_, dist) in enumerate(actions):
            for j, prob in dist.items():
                P[a, j] = prob
        costs.append(c)
        transitions.append(P)
    return Mdp(num_states=n, costs=tuple(costs), transitions=tuple(transitions),
               problem_class=problem_class, alpha=alpha)


def random_dense_mdp(rng: np.random.Generator, n: int, max_actions: int = 4,
                     alpha: float = 0.9) -> Mdp:
    """Unstructured random discounted MDP (dense rows); exercises the
    solvers without any structural assumptions."""
    costs = []
    transitions = []
    for _ in range(n):
        m = int(rng.integers(1, max_actions + 1))
        c = rng.uniform(0.0, 1.0, size=m)
        P = rng.uniform(0.0, 1.0, size=(m, n)) + 1e-3
        P /= P.sum(axis=1, keepdims=True)
        costs.append(c)
        transitions.append(P)
    return Mdp(num_states=n, costs=tuple(costs), transitions=tuple(transitions),
               problem_class=DISCOUNTED, alpha=alpha)


def random_support_mdp(rng: np.random.Generator, n: int,
                       max_actions: int = 3, alpha: float = 0.9) -> Mdp:
    """Random MDP with action-independent supports per state; structure
    beyond that is arbitrary (recurrent classes, cycles, anything)."""
    costs = []
    transitions = []
    for i in range(n):
        m = int(rng.integers(1, max_actions + 1))
        support_size = int(rng.integers(1, min(4, n) + 1))
        support = rng.choice(n, size=support_size, replace=False)
        c = rng.uniform(0.0, 1.0, size=m)
        P = np.zeros((m, n))
        for a in range(m):
            w = rng.uniform(0.1, 1.0, size=support_size)
            P[a, support] = w / w.sum()
        costs.append(c)
        transitions.append(P)
    return Mdp(num_states=n, costs=tuple(costs), transitions=tuple(transitions),
               problem_class=DISCOUNTED, alpha=alpha)


def _ring(ids: list[int], rng: np.random.Generator, cost_scale: float,
          rows: dict):
    """Closed deterministic cycle; states get 1-2 actions with the same
    single-target support but different costs."""
    for idx, i in enumerate(ids):
        nxt = ids[(idx + 1) % len(ids)]
        actions = []
        for _ in range(int(rng.integers(1, 3))):
            actions.append((float(rng.uniform(0.0, cost_scale)), {nxt: 1.0}))
        rows[i] = actions


def structured_mdp(rng: np.random.Generator, alpha: float = 0.5,
                   segments: int = 4, cost_scale: float = 1.0):
    """Diamond-chain MDP ending in two recurrent rings.

    Every state keeps a visit probability of at least ~0.45 under every
    policy, so both step-size schedules converge fast at desk scale.
    Returns (mdp, p, layout) with layout mapping names to state ids.
    """
    rows: dict[int, list] = {}
    next_id = 0

    def take() -> int:
        nonlocal next_id
        i = next_id
        next_id += 1
        return i

    ring_a = [take() for _ in range(int(rng.integers(2, 5)))]
    ring_b = [take() for _ in range(int(rng.integers(2, 5)))]
    _ring(ring_a, rng, cost_scale, rows)
    _ring(ring_b, rng, cost_scale, rows)

    # Fork state: every action splits near-evenly between the two rings.
    fork = take()
    fork_actions = []
    for _ in range(int(rng.integers(2, 4))):
        q = float(rng.uniform(0.45, 0.55))
        fork_actions.append((float(rng.uniform(0.0, cost_scale)),
                             {ring_a[0]: q, ring_b[0]: 1.0 - q}))
    rows[fork] = fork_actions

    head = fork
    for _ in range(segments):
        if rng.integers(0, 2) == 0:  # plain chain link
            s = take()
            actions = []
            for _ in range(int(rng.integers(1, 3))):
                actions.append((float(rng.uniform(0.0, cost_scale)),
                                {head: 1.0}))
            rows[s] = actions
            head = s
        else:  # diamond: split between two arms that rejoin at head
            arm_a = take()
            arm_b = take()
            for arm in (arm_a, arm_b):
                rows[arm] = [(float(rng.uniform(0.0, cost_scale)),
                              {head: 1.0})]
            s = take()
            actions = []
            for _ in range(int(rng.integers(2, 4))):
                q = float(rng.uniform(0.45, 0.55))
                actions.append((float(rng.uniform(0.0, cost_scale)),
                                {arm_a: q, arm_b: 1.0 - q}))
            rows[s] = actions
            head = s

    n = next_id
    mdp = build_mdp(rows, problem_class=DISCOUNTED, alpha=alpha,
                    num_states=n)
    p = delta_dist(n, head)
    layout = {"root": head, "fork": fork, "ring_a": ring_a, "ring_b": ring_b}
    return mdp, p, layout


def dag_ssp_mdp(rng: np.random.Generator, segments: int = 4,
                cost_scale: float = 0.5):
    """Diamond-chain SSP draining into the zero-cost absorbing state 0."""
    rows: dict[int, list] = {0: [(0.0, {0: 1.0})]}
    next_id = 1

    def take() -> int:
        nonlocal next_id
        i = next_id
        next_id += 1
        return i

    head = 0
    for _ in range(segments):
        if rng.integers(0, 2) == 0:
            s = take()
            actions = []
            for _ in range(int(rng.integers(1, 3))):
                actions.append((float(rng.uniform(0.0, cost_scale)),
                                {head: 1.0}))
            rows[s] = actions
            head = s
        else:
            arm_a = take()
            arm_b = take()
            for arm in (arm_a, arm_b):
                rows[arm] = [(float(rng.uniform(0.0, cost_scale)),
                              {head: 1.0})]
            s = take()
            actions = []
            for _ in range(int(rng.integers(2, 4))):
                q = float(rng.uniform(0.45, 0.55))
                actions.append((float(rng.uniform(0.0, cost_scale)),
                                {arm_a: q, arm_b: 1.0 - q}))
            rows[s] = actions
            head = s

    n = next_id
    mdp = build_mdp(rows, problem_class=SSP, alpha=None, num_states=n)
    return mdp, delta_dist(n, head)


def random_dag_mdp(rng: np.random.Generator, n: int, max_actions: int = 2,
                   alpha: float | None = 0.9,
                   problem_class: str = DISCOUNTED,
                   cost_scale: float = 1.0, window: int = 4):
    """Random DAG MDP with absorbing state 0; supports are shared across
    a state's actions (probabilities differ). Used for estimator and
    reach-probability checks."""
    rows: dict[int, list] = {0: [(0.0, {0: 1.0})]}
    for i in range(1, n):
        lo = max(0, i - window)
        pool = np.arange(lo, i)
        size = int(rng.integers(1, min(3, pool.size) + 1))
        support = sorted(int(j) for j in rng.choice(pool, size=size,
                                                    replace=False))
        actions = []
        for _ in range(int(rng.integers(1, max_actions + 1))):
            w = rng.uniform(0.2, 1.0, size=len(support))
            w /= w.sum()
            actions.append((float(rng.uniform(0.0, cost_scale)),
                            {j: float(w[k]) for k, j in enumerate(support)}))
        rows[i] = actions
    mdp = build_mdp(rows, problem_class=problem_class, alpha=alpha,
                    num_states=n)
    p = np.zeros(n)
    p[1:] = 1.0 / (n - 1)
    return mdp, InitialDistribution(p)


DYADIC_PAIRS = ((0.5, 0.5), (0.75, 0.25), (0.25, 0.75))


def random_game(rng: np.random.Generator, num_layers: int = 6,
                cost_range: int = 4):
    """Random alternating game: a layered DAG over the terminal 0 with
    1-2 states per layer, the player alternating with layer parity,
    dyadic transition probabilities and integer costs (so independently
    computed values compare exactly in floating point).

    Returns (GameSpec, InitialDistribution).
    """
    widths = [int(rng.integers(1, 3)) for _ in range(num_layers)]
    layers: list[list[int]] = [[0]]
    next_id = 1
    for w in widths:
        layers.append(list(range(next_id, next_id + w)))
        next_id += w
    n = next_id
    player = np.zeros(n, dtype=np.int64)
    for depth, members in enumerate(layers[1:], start=1):
        for i in members:
            player[i] = 1 if depth % 2 == 1 else 2

    rows: dict[int, list] = {0: [(0.0, {0: 1.0})]}
    for depth in range(1, len(layers)):
        below = layers[depth - 1]
        for i in layers[depth]:
            # One support per state, shared by all its actions.
            if len(below) == 2 and rng.integers(0, 2) == 1:
                support = list(below)
            else:
                support = [below[int(rng.integers(0, len(below)))]]
            actions = []
            for _ in range(int(rng.integers(1, 3))):
                cost = float(rng.integers(0, cost_range))
                if len(support) == 1:
                    actions.append((cost, {support[0]: 1.0}))
                else:
                    pair = DYADIC_PAIRS[int(rng.integers(0, len(DYADIC_PAIRS)))]
                    actions.append((cost, {support[0]: pair[0],
                                           support[1]: pair[1]}))
            rows[i] = actions
    mdp = build_mdp(rows, problem_class=GAME, alpha=None, num_states=n)
    game = GameSpec(mdp=mdp, player=player)
    p = np.zeros(n)
    p[1:] = 1.0 / (n - 1)
    return game, InitialDistribution(p)


def symmetric_clustered_mdp(rng: np.random.Generator, layers: int = 3,
                            cluster_width: int = 2, alpha: float = 0.5,
                            cost_scale: float = 1.0):
    """Layered MDP whose layers are clusters of symmetric states.

    Actions of all members of a cluster share the cost and the same
    probability mass on the layer below versus the layer two below
    (which concrete member of each target cluster differs), so optimal
    values match inside every cluster but the tail estimates stay noisy.
    Every member keeps one support across its actions.

    Returns (mdp, p, raw_clusters).
    """
    clusters: list[list[int]] = [[0]]
    rows: dict[int, list] = {0: [(0.0, {0: 1.0})]}
    next_id = 1
    for depth in range(1, layers + 1):
        members = list(range(next_id, next_id + cluster_width))
        next_id += cluster_width
        below = clusters[depth - 1]
        skip = clusters[depth - 2] if depth >= 2 else None
        num_actions = int(rng.integers(1, 3))
        action_costs = [float(rng.uniform(0.0, cost_scale))
                        for _ in range(num_actions)]
        # Mass sent past the next layer, shared across members per action.
        # Either every action skips (keeping one support per member) or
        # none does; some mass always stays on the next layer so the
        # max-distance layering is preserved.
        layer_skips = skip is not None and rng.integers(0, 4) > 0
        skip_mass = [float(rng.uniform(0.05, 0.5)) if layer_skips else 0.0
                     for _ in range(num_actions)]
        for member in members:
            near = below[int(rng.integers(0, len(below)))]
            far = skip[int(rng.integers(0, len(skip)))] if layer_skips else None
            actions = []
            for a in range(num_actions):
                if far is not None:
                    dist = {near: 1.0 - skip_mass[a], far: skip_mass[a]}
                else:
                    dist = {near: 1.0}
                actions.append((action_costs[a], dist))
            rows[member] = actions
        clusters.append(members)
    n = next_id
    mdp = build_mdp(rows, problem_class=DISCOUNTED, alpha=alpha,
                    num_states=n)
    p = np.zeros(n)
    for member in clusters[-1]:
        p[member] = 1.0 / len(clusters[-1])
    return mdp, InitialDistribution(p), clusters
