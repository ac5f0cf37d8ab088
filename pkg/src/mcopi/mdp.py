"""Finite MDP data model and model-file loading.

States are dense integers 0..n-1; actions are dense indices per state.
Transition kernels and costs are held as numpy arrays and frozen after
construction so instances can be shared freely across concurrent trials.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvariantViolation, MdpFormatError

PROB_SUM_TOL = 1e-12

DISCOUNTED = "discounted"
SSP = "ssp"
GAME = "game"

_CLASSES = (DISCOUNTED, SSP, GAME)


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite MDP: per-state action lists with transition kernels and costs.

    `transitions[i]` has shape (num_actions(i), num_states); row a is the
    probability vector of action a in state i. `costs[i]` has shape
    (num_actions(i),). `alpha` is the discount factor for the discounted
    class and must be None otherwise.

    Costs must be nonnegative except for the game class, whose in-memory
    sign-flipped form carries signed costs by construction (model files
    are still required to have nonnegative costs, enforced at load time).
    """

    num_states: int
    costs: tuple[np.ndarray, ...]
    transitions: tuple[np.ndarray, ...]
    problem_class: str = DISCOUNTED
    alpha: float | None = None

    def __post_init__(self):
        n = self.num_states
        if n < 1:
            raise InvariantViolation(f"num_states must be positive, got {n}")
        if self.problem_class not in _CLASSES:
            raise InvariantViolation(
                f"unknown problem_class {self.problem_class!r}")
        if self.problem_class == DISCOUNTED:
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise InvariantViolation(
                    f"discounted problems need alpha strictly in (0,1), "
                    f"got {self.alpha}")
        elif self.alpha is not None:
            raise InvariantViolation(
                f"alpha is only meaningful for discounted problems, "
                f"got {self.alpha} for {self.problem_class}")
        if len(self.costs) != n or len(self.transitions) != n:
            raise InvariantViolation(
                "costs and transitions must have one entry per state")
        for i in range(n):
            c = self.costs[i]
            P = self.transitions[i]
            if c.ndim != 1 or c.shape[0] < 1:
                raise InvariantViolation(f"state {i} has no actions")
            if P.shape != (c.shape[0], n):
                raise InvariantViolation(
                    f"transition block of state {i} has shape {P.shape}, "
                    f"expected {(c.shape[0], n)}")
            for a in range(c.shape[0]):
                row = P[a]
                if np.any(row < 0.0):
                    raise InvariantViolation(
                        f"negative transition probability at state {i}, "
                        f"action {a}")
                total = float(row.sum())
                if abs(total - 1.0) > PROB_SUM_TOL:
                    raise InvariantViolation(
                        f"row sum {total:g} ≠ 1 at state {i}, action {a}")
                if self.problem_class != GAME and c[a] < 0.0:
                    raise InvariantViolation(
                        f"cost {c[a]:g} at state {i}, action {a} violates "
                        f"c(i, u) ≥ 0")
            c.setflags(write=False)
            P.setflags(write=False)

    @property
    def discount(self) -> float:
        """Weight applied to the next-step value in one-step backups:
        alpha for discounted problems, 1 for SSP, -1 for game problems."""
        if self.problem_class == DISCOUNTED:
            return float(self.alpha)
        return 1.0 if self.problem_class == SSP else -1.0

    def num_actions(self, state: int) -> int:
        return self.costs[state].shape[0]

    @cached_property
    def max_cost(self) -> float:
        return max(float(np.abs(c).max()) for c in self.costs)


@dataclass(frozen=True, eq=False)
class InitialDistribution:
    """Start-state distribution used to seed each simulated trajectory."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1:
            raise InvariantViolation("initial distribution must be a vector")
        if np.any(p < 0.0):
            raise InvariantViolation("initial distribution has negative mass")
        if abs(float(p.sum()) - 1.0) > PROB_SUM_TOL:
            raise InvariantViolation(
                f"initial distribution sums to {float(p.sum()):g}, not 1")
        if not np.any(p > 0.0):
            raise InvariantViolation("initial distribution has empty support")
        object.__setattr__(self, "p", p)
        p.setflags(write=False)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.p > 0.0)


def _require(cond: bool, msg: str):
    if not cond:
        raise MdpFormatError(msg)


def parse_model(doc: dict, *, path: str = "<memory>"):
    """Parse an already-decoded model document.

    Returns (Mdp, InitialDistribution, players) where players is a list of
    per-state player tags (None entries for states without one). Player
    tags only appear in game files and are consumed by the game wrapper.
    """
    _require(isinstance(doc, dict), f"{path}: top level must be an object")
    cls = doc.get("problem_class")
    _require(cls in _CLASSES,
             f"{path}: field 'problem_class' must be one of {_CLASSES}, "
             f"got {cls!r}")
    alpha = doc.get("alpha")
    if cls == DISCOUNTED:
        _require(isinstance(alpha, (int, float)),
                 f"{path}: discounted model needs numeric field 'alpha'")
        alpha = float(alpha)
    else:
        _require(alpha is None,
                 f"{path}: field 'alpha' is only valid for discounted models")
    n = doc.get("num_states")
    _require(isinstance(n, int) and n >= 1,
             f"{path}: field 'num_states' must be a positive integer")
    init = doc.get("initial")
    _require(isinstance(init, list) and len(init) == n,
             f"{path}: field 'initial' must be a list of {n} probabilities")
    states = doc.get("states")
    _require(isinstance(states, list) and len(states) == n,
             f"{path}: field 'states' must be a list of {n} state objects")

    costs: list[np.ndarray] = [None] * n
    transitions: list[np.ndarray] = [None] * n
    players: list = [None] * n
    seen = set()
    for entry in states:
        _require(isinstance(entry, dict), f"{path}: state entries must be objects")
        sid = entry.get("id")
        _require(isinstance(sid, int) and 0 <= sid < n,
                 f"{path}: state id {sid!r} outside 0..{n - 1}")
        _require(sid not in seen, f"{path}: duplicate state id {sid}")
        seen.add(sid)
        players[sid] = entry.get("player")
        actions = entry.get("actions")
        _require(isinstance(actions, list) and len(actions) >= 1,
                 f"{path}: state {sid} must list at least one action")
        c = np.zeros(len(actions))
        P = np.zeros((len(actions), n))
        for a, act in enumerate(actions):
            _require(isinstance(act, dict),
                     f"{path}: actions of state {sid} must be objects")
            cost = act.get("cost")
            _require(isinstance(cost, (int, float)),
                     f"{path}: missing numeric 'cost' at state {sid}, action {a}")
            _require(cost >= 0.0,
                     f"{path}: cost {cost:g} at state {sid}, action {a} "
                     f"violates c(i, u) ≥ 0")
            c[a] = float(cost)
            trans = act.get("transitions")
            _require(isinstance(trans, list) and len(trans) >= 1,
                     f"{path}: missing 'transitions' at state {sid}, action {a}")
            for pair in trans:
                _require(isinstance(pair, list) and len(pair) == 2,
                         f"{path}: transitions of state {sid}, action {a} "
                         f"must be [target, probability] pairs")
                j, prob = pair
                _require(isinstance(j, int) and 0 <= j < n,
                         f"{path}: transition target {j!r} outside 0..{n - 1} "
                         f"at state {sid}, action {a}")
                _require(isinstance(prob, (int, float)) and prob >= 0.0,
                         f"{path}: bad probability {prob!r} at state {sid}, "
                         f"action {a}")
                _require(P[a, j] == 0.0,
                         f"{path}: duplicate transition target {j} at state "
                         f"{sid}, action {a}")
                P[a, j] = float(prob)
            total = float(P[a].sum())
            _require(abs(total - 1.0) <= PROB_SUM_TOL,
                     f"{path}: row sum {total:g} ≠ 1 at state {sid}, action {a}")
        costs[sid] = c
        transitions[sid] = P

    if cls == GAME:
        _require(players[0] is None,
                 f"{path}: state 0 is the terminal and takes no 'player' tag")
        for sid in range(1, n):
            _require(players[sid] in (1, 2),
                     f"{path}: game state {sid} needs field 'player' in "
                     f"{{1, 2}}, got {players[sid]!r}")
    else:
        _require(all(tag is None for tag in players),
                 f"{path}: field 'player' is only valid in game files")

    try:
        mdp = Mdp(num_states=n, costs=tuple(costs),
                  transitions=tuple(transitions), problem_class=cls,
                  alpha=alpha)
        p = InitialDistribution(np.asarray(init, dtype=float))
    except InvariantViolation as exc:
        raise MdpFormatError(f"{path}: {exc}") from exc
    return mdp, p, players


def load_model(path):
    """Load a model file, returning (Mdp, InitialDistribution, players)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MdpFormatError(
                f"{path}: parse error at line {exc.lineno}, column "
                f"{exc.colno}: {exc.msg}") from exc
    return parse_model(doc, path=str(path))


def load_mdp(path):
    """Load a model file, returning (Mdp, InitialDistribution)."""
    mdp, p, _ = load_model(path)
    return mdp, p


def load_clusters(path) -> list[list[int]]:
    """Load a cluster file: {"clusters": [[state ids...], ...]}."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MdpFormatError(
                f"{path}: parse error at line {exc.lineno}, column "
                f"{exc.colno}: {exc.msg}") from exc
    _require(isinstance(doc, dict) and isinstance(doc.get("clusters"), list),
             f"{path}: expected an object with a 'clusters' list")
    clusters = []
    for idx, members in enumerate(doc["clusters"]):
        _require(isinstance(members, list) and len(members) >= 1 and
                 all(isinstance(s, int) for s in members),
                 f"{path}: cluster {idx} must be a nonempty list of state ids")
        clusters.append(list(members))
    return clusters
