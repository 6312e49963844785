"""Compose a controller with a classifier's confusion matrix into a
discrete-time Markov chain for one true environment class.

For each reachable state the controller is stepped once per possible
observation; the observation's probability (the confusion-matrix column of
the true class) accumulates on the resulting edge. Misclassification is the
only source of randomness, so each row's mass is exactly one column sum.

States discover in breadth-first order from the initial state, giving stable
indices and bit-reproducible exports. Road-end states always self-loop;
under absorb-on-stop semantics the achieved stop (C_{k-1}, 0) does too.
"""

from dataclasses import dataclass, field

from .confusion import ConfusionMatrix
from .scenario import (
    AgentState,
    Controller,
    EnvClass,
    ScenarioParams,
    SystemState,
    ENV_CLASSES,
)

ROW_SUM_TOL = 1e-9


class ChainError(ValueError):
    pass


class EnvMismatch(ChainError):
    pass


class StochasticityViolation(ChainError):
    pass


@dataclass(frozen=True)
class MarkovChain:
    """Finite DTMC over SystemStates with sparse rows.

    ``transitions[i]`` lists (successor index, probability) pairs in
    discovery order; rows sum to 1 within ``ROW_SUM_TOL``. ``labels`` maps an
    atomic-proposition name to the set of satisfying state indices. Index 0
    is the state the chain was built from; the initial state of a query is
    still a free parameter. Instances are immutable and safe to share.
    """

    states: tuple[SystemState, ...]
    transitions: tuple[tuple[tuple[int, float], ...], ...]
    labels: dict[str, frozenset[int]] = field(default_factory=dict)
    env: EnvClass | None = None

    @property
    def n(self) -> int:
        return len(self.states)

    @property
    def num_transitions(self) -> int:
        return sum(len(row) for row in self.transitions)

    def index_of(self, state: SystemState) -> int:
        try:
            return self.states.index(state)
        except ValueError:
            raise ChainError(f"state {state} not in chain")

    def is_absorbing(self, i: int) -> bool:
        row = self.transitions[i]
        return len(row) == 1 and row[0][0] == i and abs(row[0][1] - 1.0) <= ROW_SUM_TOL

    def __eq__(self, other):
        return (
            isinstance(other, MarkovChain)
            and self.states == other.states
            and self.transitions == other.transitions
            and self.env == other.env
        )


def observation_set(controller: Controller, s1: SystemState, s2: SystemState) -> frozenset[EnvClass]:
    """The reported classes that make the controller move s1's agent to
    s2's agent. Over all successors of s1 these sets partition the
    observation space."""
    return frozenset(
        y for y in ENV_CLASSES if controller.step(s1.agent, y) == s2.agent
    )


def transition_probability(
    controller: Controller,
    cm: ConfusionMatrix,
    env: EnvClass,
    s1: SystemState,
    s2: SystemState,
) -> float:
    """Probability of the one-step move s1 -> s2 for true class ``env``: the
    summed confusion-matrix mass of the observation set carrying s1 to s2."""
    if s1.env is not env or s2.env is not env:
        raise EnvMismatch(f"states {s1}, {s2} must both carry true class {env}")
    x = env.index
    return float(sum(cm.entries[y.index][x] for y in observation_set(controller, s1, s2)))


def _check_cm_labels(cm: ConfusionMatrix) -> None:
    expected = tuple(e.value for e in ENV_CLASSES)
    if cm.label_names() != expected:
        raise ChainError(f"confusion-matrix labels {cm.label_names()} != {expected}")


def _scenario_labels(params: ScenarioParams, states) -> dict[str, frozenset[int]]:
    stop = AgentState(params.stop_cell, 0)
    labels = {
        "stopped": frozenset(i for i, s in enumerate(states) if s.agent == stop),
        "road_end": frozenset(
            i for i, s in enumerate(states) if s.agent.cell == params.road_length
        ),
    }
    for env in ENV_CLASSES:
        members = frozenset(i for i, s in enumerate(states) if s.env is env)
        if members:
            labels[f"env_{env.value}"] = members
    return labels


def _build(params, controller, cm, env, init, stop_semantics, successors_of):
    _check_cm_labels(cm)
    params.check_state(init)
    if stop_semantics not in ("absorb", "restart"):
        raise ChainError(f"stop_semantics must be 'absorb' or 'restart', got {stop_semantics!r}")
    stop = AgentState(params.stop_cell, 0)

    def absorbing(agent: AgentState) -> bool:
        if agent.cell == params.road_length:
            return True
        return stop_semantics == "absorb" and agent == stop

    states: list[SystemState] = [SystemState(init, env)]
    index = {states[0]: 0}
    rows: list[tuple[tuple[int, float], ...]] = []
    frontier = 0
    while frontier < len(states):
        current = states[frontier]
        frontier += 1
        if absorbing(current.agent):
            rows.append(((index[current], 1.0),))
            continue
        masses: dict[AgentState, float] = {}
        for successor, mass in successors_of(current.agent):
            masses[successor] = masses.get(successor, 0.0) + mass
        # Zero-mass observations (impossible under the given matrix) add no
        # edge and must not pull unreachable states into the chain.
        row_entries = []
        for successor, mass in masses.items():
            if mass <= 0.0:
                continue
            nxt = SystemState(successor, env)
            j = index.get(nxt)
            if j is None:
                j = len(states)
                index[nxt] = j
                states.append(nxt)
            row_entries.append((j, mass))
        row = tuple(row_entries)
        total = sum(p for _, p in row)
        if abs(total - 1.0) > ROW_SUM_TOL:
            raise StochasticityViolation(
                f"row for {current} sums to {total!r} (deviation {abs(total - 1.0):.3e})"
            )
        rows.append(row)

    chain = MarkovChain(
        states=tuple(states),
        transitions=tuple(rows),
        labels=_scenario_labels(params, states),
        env=env,
    )
    return chain


def build_markov_chain(
    params: ScenarioParams,
    controller: Controller,
    cm: ConfusionMatrix,
    env: EnvClass,
    init: AgentState,
    stop_semantics: str = "absorb",
) -> MarkovChain:
    """Close the loop for true class ``env`` over everything reachable from
    ``init``. Each observation ``y`` adds mass ``C(y, env)`` to the edge into
    the controller's response to ``y``."""
    x = env.index

    def successors_of(agent: AgentState):
        for y in ENV_CLASSES:
            yield controller.step(agent, y), float(cm.entries[y.index][x])

    return _build(params, controller, cm, env, init, stop_semantics, successors_of)


def build_markov_chain_prob(
    params: ScenarioParams,
    controller: Controller,
    cm: ConfusionMatrix,
    env: EnvClass,
    init: AgentState,
    stop_semantics: str = "absorb",
) -> MarkovChain:
    """Probabilistic-controller variant: the edge into each successor
    accumulates ``C(y, env)`` times the controller's own probability of
    picking it. Reduces to :func:`build_markov_chain` for point masses."""
    if controller.step_dist is None:
        raise ChainError("controller has no probabilistic step_dist")
    x = env.index

    def successors_of(agent: AgentState):
        for y in ENV_CLASSES:
            obs_mass = float(cm.entries[y.index][x])
            dist = controller.step_dist(agent, y)
            total = sum(q for _, q in dist)
            if abs(total - 1.0) > ROW_SUM_TOL:
                raise StochasticityViolation(
                    f"controller distribution at {agent} / {y.value} sums to {total!r}"
                )
            for successor, q in dist:
                yield successor, obs_mass * q

    return _build(params, controller, cm, env, init, stop_semantics, successors_of)


def make_absorbing(chain: MarkovChain, predicate) -> MarkovChain:
    """Copy of the chain where every state matching ``predicate`` (a
    SystemState filter) keeps only a probability-1 self-loop."""
    rows = tuple(
        ((i, 1.0),) if predicate(s) else chain.transitions[i]
        for i, s in enumerate(chain.states)
    )
    return MarkovChain(states=chain.states, transitions=rows, labels=dict(chain.labels), env=chain.env)


@dataclass(frozen=True)
class StochasticityReport:
    row_sums: tuple[float, ...]
    max_deviation: float
    offending: tuple[int, ...]

    @property
    def passed(self) -> bool:
        return not self.offending


def validate_stochastic(chain: MarkovChain) -> StochasticityReport:
    """Per-row mass check: every row must sum to 1 within ROW_SUM_TOL and
    carry probabilities in [0, 1] on valid successor indices."""
    sums = []
    offending = []
    for i, row in enumerate(chain.transitions):
        total = 0.0
        ok = True
        for j, p in row:
            if not 0 <= j < chain.n or p < 0 or p > 1 + ROW_SUM_TOL:
                ok = False
            total += p
        sums.append(total)
        if not ok or abs(total - 1.0) > ROW_SUM_TOL:
            offending.append(i)
    max_dev = max((abs(t - 1.0) for t in sums), default=0.0)
    return StochasticityReport(tuple(sums), max_dev, tuple(offending))
