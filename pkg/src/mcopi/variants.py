"""Stochastic shortest path and alternating zero-sum game variants.

SSP problems are undiscounted MDPs whose every policy drains into a
single zero-cost absorbing state through an acyclic transient graph.

Alternating games put a minimizing player on some states and a maximizing
player on the rest. Flipping the sign of the maximizer's costs and
chaining backups with weight -1 turns the state-dependent min/max into a
pure min ("the cost from the perspective of the player to move"), so the
whole MDP machinery applies unchanged; the true game value is recovered
by flipping the signs back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvariantViolation, StructureViolation
from .mdp import GAME, SSP, InitialDistribution, Mdp, load_model
from .opi import OpiConfig, RunResult, run_opi
from .solvers import OptimalActionSets, policy_iteration, value_iteration
from .structure import StructureReport, analyze


@dataclass(frozen=True, eq=False)
class SspValidation:
    ok: bool
    violations: tuple[str, ...]


def validate_ssp(mdp: Mdp, report: StructureReport) -> SspValidation:
    """Check the SSP structure: a unique absorbing terminal, state 0,
    costing 0 under every action, with an acyclic remainder. Under these
    the total cost is finite for every policy."""
    if mdp.problem_class != SSP:
        raise InvariantViolation(
            f"validate_ssp needs an ssp problem, got {mdp.problem_class}")
    violations = []
    classes = report.recurrent_classes
    if len(classes) != 1 or classes[0] != (0,):
        violations.append(
            f"unique absorbing state 0 required; recurrent classes are "
            f"{[list(c) for c in classes]}")
    if np.any(mdp.costs[0] != 0.0):
        violations.append(
            f"absorbing state must incur a cost of 0 under every action; "
            f"state 0 costs are {mdp.costs[0].tolist()}")
    if not report.assumption3_ok:
        violations.append(
            f"transient subgraph must be acyclic; found cycle "
            f"{list(report.transient_cycle)}")
    return SspValidation(ok=not violations, violations=tuple(violations))


def run_opi_ssp(mdp: Mdp, p: InitialDistribution, config: OpiConfig,
                oracle: OptimalActionSets | None = None,
                jstar: np.ndarray | None = None,
                rng: np.random.Generator | None = None) -> RunResult:
    """run_opi with no truncation horizon: absorption is guaranteed on a
    validated SSP structure, and enforced defensively otherwise."""
    report = analyze(mdp, p)
    validation = validate_ssp(mdp, report)
    if not validation.ok:
        raise StructureViolation("; ".join(validation.violations))
    return run_opi(mdp, p, config, oracle=oracle, jstar=jstar, rng=rng)


@dataclass(frozen=True, eq=False)
class GameSpec:
    """Alternating zero-sum game on an MDP skeleton.

    player[i] is 1 (minimizer) or 2 (maximizer) for decision states and 0
    for the terminal state 0. Construction enforces the game invariants:
    nonnegative original costs, a free absorbing terminal, alternation
    (no edge between two states of the same player), and an acyclic
    decision graph draining into the terminal.
    """

    mdp: Mdp
    player: np.ndarray

    def __post_init__(self):
        mdp = self.mdp
        if mdp.problem_class != GAME:
            raise InvariantViolation(
                f"GameSpec needs a game problem, got {mdp.problem_class}")
        player = np.asarray(self.player, dtype=np.int64)
        object.__setattr__(self, "player", player)
        n = mdp.num_states
        if player.shape != (n,):
            raise InvariantViolation("player tags must cover every state")
        if player[0] != 0:
            raise InvariantViolation("state 0 is the terminal; it takes no player tag")
        for i in range(1, n):
            if player[i] not in (1, 2):
                raise InvariantViolation(
                    f"state {i} needs player 1 or 2, got {player[i]}")
        for i in range(n):
            if np.any(mdp.costs[i] < 0.0):
                raise InvariantViolation(
                    f"original game costs must be nonnegative at state {i}")
        if np.any(mdp.costs[0] != 0.0):
            raise InvariantViolation(
                f"terminal state must cost 0 under every action, got "
                f"{mdp.costs[0].tolist()}")
        for a in range(mdp.num_actions(0)):
            row = mdp.transitions[0][a]
            if row[0] != 1.0:
                raise InvariantViolation(
                    "terminal state must be absorbing under every action")
        report = analyze(mdp, InitialDistribution(np.eye(n)[0]))
        if report.recurrent_classes != ((0,),):
            raise InvariantViolation(
                f"the terminal must be the only recurrent class; got "
                f"{[list(c) for c in report.recurrent_classes]}")
        if not report.assumption3_ok:
            raise InvariantViolation(
                f"decision states must form an acyclic graph; found cycle "
                f"{list(report.transient_cycle)}")
        for i in range(1, n):
            for a in range(mdp.num_actions(i)):
                for j in np.flatnonzero(mdp.transitions[i][a] > 0.0):
                    if j != 0 and player[int(j)] == player[i]:
                        raise InvariantViolation(
                            f"alternation broken: edge {i} -> {int(j)} "
                            f"stays with player {player[i]}")
        player.setflags(write=False)

    @property
    def sigma(self) -> np.ndarray:
        """Sign mask: +1 on minimizer and terminal states, -1 on
        maximizer states."""
        return np.where(self.player == 2, -1.0, 1.0)


def load_game(path) -> tuple[GameSpec, InitialDistribution]:
    mdp, p, players = load_model(path)
    if mdp.problem_class != GAME:
        raise InvariantViolation(
            f"{path}: expected problem_class 'game', got {mdp.problem_class}")
    tags = np.zeros(mdp.num_states, dtype=np.int64)
    for i in range(1, mdp.num_states):
        tags[i] = players[i]
    return GameSpec(mdp=mdp, player=tags), p


@dataclass(frozen=True, eq=False)
class NegaminForm:
    """Sign-flipped form of a game: costs of maximizer states are negated
    and the backup weight is -1, so every state minimizes."""

    sigma: np.ndarray
    mdp: Mdp


def negamin_transform(game: GameSpec) -> NegaminForm:
    sigma = game.sigma
    costs = tuple(np.array(sigma[i] * game.mdp.costs[i])
                  for i in range(game.mdp.num_states))
    flipped = Mdp(num_states=game.mdp.num_states, costs=costs,
                  transitions=game.mdp.transitions, problem_class=GAME)
    return NegaminForm(sigma=sigma, mdp=flipped)


def solve_game_exact(game: GameSpec) -> np.ndarray:
    """Minimax value by backward induction (min on player-1 states, max
    on player-2 states), cross-checked against the sign-flipped route."""
    mdp = game.mdp
    n = mdp.num_states
    report = analyze(mdp, InitialDistribution(np.eye(n)[0]))
    J = np.zeros(n)
    for i in report.transient_states:
        vals = mdp.costs[i] + mdp.transitions[i] @ J
        J[i] = float(np.min(vals)) if game.player[i] == 1 else float(np.max(vals))
    form = negamin_transform(game)
    j_prime = value_iteration(form.mdp)
    recovered = form.sigma * j_prime
    drift = float(np.max(np.abs(recovered - J)))
    if drift > 1e-12:
        raise InvariantViolation(
            f"sign-flipped backward induction drifted {drift:g} from the "
            f"minimax value")
    return J


def solve_negamin(game: GameSpec):
    """Exact solution of the sign-flipped form: (form, value, policy,
    optimal action sets). The action sets live in the flipped space and
    drive optimal-policy detection for game runs."""
    form = negamin_transform(game)
    j_prime, mu, sets = policy_iteration(form.mdp)
    return form, j_prime, mu, sets


@dataclass(frozen=True, eq=False)
class GameRunResult:
    """OPI outcome on the sign-flipped form plus the recovered game value."""

    j_prime: np.ndarray
    j_star: np.ndarray
    run: RunResult


def run_opi_game(game: GameSpec, p: InitialDistribution, config: OpiConfig,
                 oracle: OptimalActionSets | None = None,
                 jstar: np.ndarray | None = None,
                 rng: np.random.Generator | None = None) -> GameRunResult:
    """Run OPI on the sign-flipped form (greedy step is a pure min, tail
    costs alternate sign) and report both its value and the recovered
    game value.

    `oracle` must come from the flipped form (see solve_negamin); `jstar`
    is the game value, against which the recovered value's sup error is
    reported.
    """
    form = negamin_transform(game)
    jstar_prime = None if jstar is None else form.sigma * jstar
    result = run_opi(form.mdp, p, config, oracle=oracle, jstar=jstar_prime,
                     rng=rng)
    return GameRunResult(
        j_prime=result.final_J,
        j_star=form.sigma * result.final_J,
        run=result)
