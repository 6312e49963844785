"""Discrete road world: a car on cells C_1..C_N with a sidewalk next to cell
C_k, integer speeds up to v_max, and an observation-dispatched controller.

Position advances by the current speed each step (clamped at the last cell)
and speed changes by at most one. The controller reacts to the *reported*
environment class, one sub-policy per class:

* ``obj``   - brake to speed 1 and hold it,
* ``empty`` - accelerate to v_max and hold it,
* ``ped``   - stop exactly on C_{k-1}, the cell before the sidewalk.

The pedestrian policy is derived here rather than synthesized: it brakes
along successors from which an exact stop on C_{k-1} remains achievable
(the ``stoppable`` fixed point). ``verify_controller`` certifies the whole
dispatch against the three safety requirements under perfect perception.
"""

import enum
from dataclasses import dataclass, field
from typing import Callable

from .confusion import PED_OBJ_EMPTY


class ScenarioError(ValueError):
    pass


class InfeasibleScenario(ScenarioError):
    pass


class NoSafeSuccessor(ScenarioError):
    """The pedestrian policy found no stop-preserving successor. Defensive:
    unreachable when the policy is entered through its public dispatch."""


class EnvClass(enum.Enum):
    PED = "ped"
    OBJ = "obj"
    EMPTY = "empty"

    @property
    def index(self) -> int:
        return _ENV_ORDER.index(self)

    @classmethod
    def from_name(cls, name: str) -> "EnvClass":
        try:
            return cls(name)
        except ValueError:
            raise ScenarioError(f"unknown environment class {name!r}; expected one of {PED_OBJ_EMPTY}")


_ENV_ORDER = (EnvClass.PED, EnvClass.OBJ, EnvClass.EMPTY)

ENV_CLASSES = _ENV_ORDER


@dataclass(frozen=True)
class AgentState:
    """Car state: occupied cell (1-based) and integer speed."""

    cell: int
    speed: int


@dataclass(frozen=True)
class SystemState:
    """Agent state paired with the true (static) environment class."""

    agent: AgentState
    env: EnvClass


@dataclass(frozen=True)
class ScenarioParams:
    """World geometry and speed limit.

    ``road_length`` is the index N of the last cell, ``sidewalk_cell`` the
    index k of the cell next to the sidewalk; the car must stop on k-1.
    Construction rejects geometries where some legal initial state (C_1, v0),
    1 <= v0 <= v_max, cannot brake to an exact stop on C_{k-1}.
    """

    road_length: int
    sidewalk_cell: int
    v_max: int

    def __post_init__(self):
        if self.v_max < 1:
            raise ScenarioError(f"v_max must be >= 1, got {self.v_max}")
        if not 2 <= self.sidewalk_cell <= self.road_length:
            raise ScenarioError(
                f"sidewalk cell {self.sidewalk_cell} outside [2, {self.road_length}]"
            )
        for v0 in range(1, self.v_max + 1):
            if not stoppable(self, AgentState(1, v0)):
                raise InfeasibleScenario(
                    f"no exact stop on C_{self.stop_cell} from (C_1, v0={v0}); "
                    f"road too short for v_max={self.v_max}"
                )

    @property
    def stop_cell(self) -> int:
        return self.sidewalk_cell - 1

    def check_state(self, s: AgentState) -> None:
        if not 1 <= s.cell <= self.road_length:
            raise ScenarioError(f"cell {s.cell} outside [1, {self.road_length}]")
        if not 0 <= s.speed <= self.v_max:
            raise ScenarioError(f"speed {s.speed} outside [0, {self.v_max}]")

    def all_states(self):
        for cell in range(1, self.road_length + 1):
            for speed in range(self.v_max + 1):
                yield AgentState(cell, speed)


def clamp_pos(params: ScenarioParams, cell: int, speed: int) -> int:
    """Next cell after one step at ``speed``: i + v capped at the road end."""
    return min(params.road_length, cell + speed)


def successors_dyn(params: ScenarioParams, s: AgentState) -> frozenset[AgentState]:
    """All dynamics-respecting successors of ``s``.

    At rest the car stays put and may spin up to speed 1; at v_max it may
    hold or shed one unit (this branch also governs v_max = 1); in between
    the speed moves by at most one. Position always advances by the current
    speed, clamped at the last cell.
    """
    params.check_state(s)
    pos = clamp_pos(params, s.cell, s.speed)
    if s.speed == 0:
        speeds = (0, 1)
    elif s.speed == params.v_max:
        speeds = (params.v_max, params.v_max - 1)
    else:
        speeds = (s.speed - 1, s.speed, s.speed + 1)
    return frozenset(AgentState(pos, v) for v in speeds)


def _coast(params: ScenarioParams, s: AgentState) -> AgentState:
    return AgentState(clamp_pos(params, s.cell, s.speed), s.speed)


def controller_obj(params: ScenarioParams, s: AgentState) -> AgentState:
    """Obstacle response: brake toward speed 1 and hold it; past the
    sidewalk, coast."""
    params.check_state(s)
    if s.cell >= params.sidewalk_cell:
        return _coast(params, s)
    target = max(1, s.speed - 1) if s.speed >= 1 else 1
    return AgentState(clamp_pos(params, s.cell, s.speed), target)


def controller_empty(params: ScenarioParams, s: AgentState) -> AgentState:
    """Clear-road response: accelerate toward v_max and hold it; past the
    sidewalk, coast."""
    params.check_state(s)
    if s.cell >= params.sidewalk_cell:
        return _coast(params, s)
    return AgentState(clamp_pos(params, s.cell, s.speed), min(params.v_max, s.speed + 1))


_STOPPABLE_CACHE: dict[ScenarioParams, frozenset[AgentState]] = {}


def _stoppable_set(params: ScenarioParams) -> frozenset[AgentState]:
    """Backward fixed point of 'an exact stop on C_{k-1} is still reachable'.

    Seed: the stopped goal state (C_{k-1}, 0). A moving state joins the set
    when some dynamics successor is already in it. States at rest anywhere
    else never join (a zero-speed dwell off the stop cell already violates
    the no-early-stop requirement), nor do states at or past the sidewalk.
    """
    cached = _STOPPABLE_CACHE.get(params)
    if cached is not None:
        return cached
    goal = AgentState(params.stop_cell, 0)
    good = {goal}
    # Successors sit at higher cells, so sweeping cells downward converges in
    # one pass (a second pass confirms the fixed point).
    candidates = sorted(
        (s for s in params.all_states() if s.speed >= 1 and s.cell < params.sidewalk_cell),
        key=lambda s: (-s.cell, s.speed),
    )
    changed = True
    while changed:
        changed = False
        for s in candidates:
            if s in good:
                continue
            if any(t in good for t in successors_dyn(params, s)):
                good.add(s)
                changed = True
    result = frozenset(good)
    _STOPPABLE_CACHE[params] = result
    return result


def stoppable(params: ScenarioParams, s: AgentState) -> bool:
    """True when a trajectory from ``s`` can stop exactly on C_{k-1} without
    dwelling at zero speed on any earlier cell or crossing the sidewalk."""
    params.check_state(s)
    return s in _stoppable_set(params)


def controller_ped(params: ScenarioParams, s: AgentState) -> AgentState:
    """Pedestrian response: brake toward the stop, taking the slowest
    successor that keeps an exact stop on C_{k-1} reachable (the stop state
    itself once adjacent); holds position when stopped there.

    When no stop-preserving successor exists (the stop is already
    unrecoverable) the obstacle policy takes over, so the dispatch stays
    total; past the sidewalk it coasts like the other sub-policies.
    """
    params.check_state(s)
    if s.cell >= params.sidewalk_cell:
        return _coast(params, s)
    goal = AgentState(params.stop_cell, 0)
    if s == goal:
        return goal
    if not stoppable(params, s):
        return controller_obj(params, s)
    safe = [t for t in successors_dyn(params, s) if stoppable(params, t)]
    if not safe:
        raise NoSafeSuccessor(f"no stop-preserving successor from {s}")
    return min(safe, key=lambda t: t.speed)


@dataclass(frozen=True)
class Controller:
    """Observation-dispatched control law.

    ``step`` maps (agent state, reported class) to the next agent state.
    ``step_dist`` is the optional probabilistic variant returning a list of
    (successor, probability) pairs summing to 1.
    """

    step: Callable[[AgentState, EnvClass], AgentState]
    step_dist: Callable[[AgentState, EnvClass], list[tuple[AgentState, float]]] | None = None


def make_controller(params: ScenarioParams, stop_semantics: str = "absorb") -> Controller:
    """Compose the three sub-policies into one observation-dispatched law.

    ``stop_semantics`` picks the behavior at the achieved stop (C_{k-1}, 0):
    ``"absorb"`` holds it under every observation, ``"restart"`` lets obj and
    empty reports accelerate the car again (the literal dispatch reading).
    """
    if stop_semantics not in ("absorb", "restart"):
        raise ScenarioError(f"stop_semantics must be 'absorb' or 'restart', got {stop_semantics!r}")
    goal = AgentState(params.stop_cell, 0)

    def step(s: AgentState, observed: EnvClass) -> AgentState:
        if stop_semantics == "absorb" and s == goal:
            return goal
        if observed is EnvClass.PED:
            return controller_ped(params, s)
        if observed is EnvClass.OBJ:
            return controller_obj(params, s)
        return controller_empty(params, s)

    return Controller(step=step)


# --- closed-loop certification under perfect perception ---------------------


@dataclass(frozen=True)
class Violation:
    env: EnvClass
    v0: int
    requirement: str
    step: int
    state: AgentState


@dataclass(frozen=True)
class ControllerReport:
    params: ScenarioParams
    runs: int
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return not self.violations


def _requirements(params: ScenarioParams, env: EnvClass):
    """The three safety requirements as per-state predicates.

    no-false-stop: only a pedestrian justifies resting on the stop cell.
    stop-on-ped: with a pedestrian, entering cell k-1 or beyond is only
    allowed stopped on k-1. no-early-stop: never at rest before the stop
    cell.
    """
    k1 = params.stop_cell

    def no_false_stop(s: AgentState) -> bool:
        return env is EnvClass.PED or not (s.cell == k1 and s.speed == 0)

    def stop_on_ped(s: AgentState) -> bool:
        if env is not EnvClass.PED:
            return True
        return s.cell < k1 or (s.cell == k1 and s.speed == 0)

    def no_early_stop(s: AgentState) -> bool:
        return not (s.cell < k1 and s.speed == 0)

    return (
        ("no-false-stop", no_false_stop),
        ("stop-on-ped", stop_on_ped),
        ("no-early-stop", no_early_stop),
    )


def verify_controller(params: ScenarioParams) -> ControllerReport:
    """Exhaustively run the closed loop with observation = true class.

    For each environment class and each initial state (C_1, v0) with
    1 <= v0 <= v_max, follows the (deterministic) run until a state repeats
    and checks every visited state against the three requirements. The
    report carries any violations; a correct dispatch yields none.
    """
    controller = make_controller(params, stop_semantics="absorb")
    violations = []
    runs = 0
    for env in ENV_CLASSES:
        reqs = _requirements(params, env)
        for v0 in range(1, params.v_max + 1):
            runs += 1
            s = AgentState(1, v0)
            seen = set()
            step = 0
            while s not in seen:
                seen.add(s)
                for name, pred in reqs:
                    if not pred(s):
                        violations.append(Violation(env, v0, name, step, s))
                s = controller.step(s, env)
                step += 1
    return ControllerReport(params=params, runs=runs, violations=tuple(violations))


# --- formula builders for the bundled requirements ---------------------------


def builtin_formula(name: str, params: ScenarioParams) -> str:
    """Render a named requirement as a checkable formula string."""
    k1 = params.stop_cell
    builders = {
        "no-false-stop": f"G(env=ped | !(cell={k1} & speed=0))",
        "stop-on-ped": f"G(!env=ped | cell<{k1} | (cell={k1} & speed=0))",
        "no-early-stop": f"G(!(cell<{k1} & speed=0))",
    }
    try:
        return builders[name]
    except KeyError:
        raise ScenarioError(
            f"unknown builtin formula {name!r}; available: {sorted(builders)}"
        )


BUILTIN_FORMULAS = ("no-false-stop", "stop-on-ped", "no-early-stop")
