"""Probability computation on Markov chains.

Four independent routes answer the same question "with what probability does
a run from this state satisfy the formula":

* ``linear``    - graph pre-pass, then sparse elimination on the reduced
                  reachability system,
* ``iterate``   - the same pre-pass, then plain fixed-point iteration,
* ``enumerate`` - direct measure computation: sum the probability of every
                  finite path prefix that decides the formula,
* ``simulate``  - seeded Monte Carlo with a binomial confidence interval.

The exact engines agree to solver tolerance; enumeration reproduces them on
chains small enough to unfold; simulation cross-checks at statistical scale.
"""

import sys
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .chain import MarkovChain
from .logic import Formula, LabeledSets, Shape, classify, label_chain, parse
from .scenario import EnvClass, SystemState

BOUNDARY_SLACK = 1e-12


class EngineError(RuntimeError):
    pass


class NonConvergence(EngineError):
    pass


class SingularSystem(EngineError):
    pass


class UnsupportedFragment(EngineError):
    pass


class DistributionNotNormalized(EngineError):
    pass


class BudgetExceeded(EngineError):
    pass


class HorizonRequired(EngineError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    """Knobs shared by every engine. ``horizon`` caps run length when the
    formula is unbounded and the chain need not absorb; ``path_budget`` caps
    the enumeration oracle."""

    tolerance: float = 1e-12
    max_iterations: int = 1_000_000
    samples: int = 100_000
    seed: int = 0
    horizon: int | None = None
    path_budget: int = 2_000_000

    def __post_init__(self):
        if self.tolerance <= 0:
            raise EngineError(f"tolerance must be positive, got {self.tolerance}")
        if self.samples <= 0:
            raise EngineError(f"samples must be positive, got {self.samples}")


@dataclass(frozen=True)
class CheckResult:
    """A probability with provenance: which engine produced it, how exact it
    is (solver residual, or confidence half-width for simulation), and how
    much work it took."""

    probability: float
    engine: str
    residual: float = 0.0
    iterations: int | None = None
    samples: int | None = None
    ci_low: float | None = None
    ci_high: float | None = None


def _clamp(value: float) -> float:
    if value < 0.0:
        if value < -BOUNDARY_SLACK:
            raise EngineError(f"probability {value!r} escapes [0,1] beyond tolerance")
        return 0.0
    if value > 1.0:
        if value > 1.0 + BOUNDARY_SLACK:
            raise EngineError(f"probability {value!r} escapes [0,1] beyond tolerance")
        return 1.0
    return value


# --- graph pre-pass and the reduced linear system ----------------------------


def _predecessors(chain: MarkovChain) -> list[list[int]]:
    preds: list[list[int]] = [[] for _ in range(chain.n)]
    for i, row in enumerate(chain.transitions):
        for j, p in row:
            if p > 0.0 and j != i:
                preds[j].append(i)
    return preds


def _reach_partition(chain: MarkovChain, target: frozenset[int], allowed: frozenset[int]):
    """Split states into certain-0, certain-1, and genuinely unknown.

    ``allowed`` restricts traversal (the hold-set of an until); states
    outside ``allowed | target`` can never contribute. The split makes the
    remaining system strictly substochastic, hence uniquely solvable.
    """
    n = chain.n
    preds = _predecessors(chain)

    # States that can reach the target moving only through allowed states.
    can_reach = set(target)
    stack = list(target)
    while stack:
        v = stack.pop()
        for u in preds[v]:
            if u not in can_reach and u in allowed:
                can_reach.add(u)
                stack.append(u)
    prob0 = frozenset(i for i in range(n) if i not in can_reach)

    # States that cannot avoid the target: complement of everything that can
    # reach a probability-0 state without first entering the target.
    bad = set(prob0)
    stack = list(prob0)
    while stack:
        v = stack.pop()
        for u in preds[v]:
            if u in bad or u in target:
                continue
            bad.add(u)
            stack.append(u)
    prob1 = frozenset(i for i in range(n) if i not in bad)
    unknown = [i for i in range(n) if i not in prob0 and i not in prob1]
    return prob0, prob1, unknown


def _solve_reach(
    chain: MarkovChain,
    target: frozenset[int],
    allowed: frozenset[int] | None,
    cfg: EngineConfig,
    engine: str,
):
    """Reachability values for every state; returns (vector, residual,
    iterations)."""
    if allowed is None:
        allowed = frozenset(range(chain.n))
    prob0, prob1, unknown = _reach_partition(chain, target, allowed)
    x = np.zeros(chain.n)
    x[list(prob1)] = 1.0
    if not unknown:
        return x, 0.0, 0

    pos = {s: k for k, s in enumerate(unknown)}
    m = len(unknown)
    b = np.zeros(m)
    data, rows_ix, cols_ix = [], [], []
    for s in unknown:
        for j, p in chain.transitions[s]:
            if p <= 0.0:
                continue
            if j in pos:
                rows_ix.append(pos[s])
                cols_ix.append(pos[j])
                data.append(p)
            elif j in prob1:
                b[pos[s]] += p
    P = sp.csr_matrix((data, (rows_ix, cols_ix)), shape=(m, m))

    if engine == "linear":
        A = sp.identity(m, format="csr") - P
        sol = spla.spsolve(A.tocsc(), b)
        sol = np.atleast_1d(sol)
        if not np.all(np.isfinite(sol)):
            raise SingularSystem("elimination produced non-finite values")
        residual = float(np.max(np.abs(A @ sol - b))) if m else 0.0
        x[unknown] = sol
        return x, residual, 0
    if engine == "iterate":
        sol = np.zeros(m)
        for it in range(1, cfg.max_iterations + 1):
            nxt = P @ sol + b
            delta = float(np.max(np.abs(nxt - sol)))
            sol = nxt
            if delta < cfg.tolerance:
                residual = float(np.max(np.abs(P @ sol + b - sol)))
                x[unknown] = sol
                return x, residual, it
        raise NonConvergence(
            f"fixed point not within {cfg.tolerance} after {cfg.max_iterations} "
            f"iterations (residual {delta:.3e})"
        )
    raise EngineError(f"unknown exact engine {engine!r}")


def _exact_result(value: float, engine: str, residual: float, iterations: int) -> CheckResult:
    return CheckResult(
        probability=_clamp(value),
        engine=engine,
        residual=residual,
        iterations=iterations or None,
    )


def prob_reach(
    chain: MarkovChain,
    target: frozenset[int],
    init: int,
    cfg: EngineConfig | None = None,
    engine: str = "linear",
) -> CheckResult:
    """Probability that a run from ``init`` ever enters ``target``."""
    cfg = cfg or EngineConfig()
    if not target:
        return CheckResult(0.0, engine, 0.0)
    x, residual, its = _solve_reach(chain, frozenset(target), None, cfg, engine)
    return _exact_result(float(x[init]), engine, residual, its)


def prob_invariant(
    chain: MarkovChain,
    safe: frozenset[int],
    init: int,
    cfg: EngineConfig | None = None,
    engine: str = "linear",
) -> CheckResult:
    """Probability that a run from ``init`` stays inside ``safe`` forever,
    computed as one minus the probability of reaching the unsafe set."""
    cfg = cfg or EngineConfig()
    unsafe = frozenset(range(chain.n)) - frozenset(safe)
    if init in unsafe:
        return CheckResult(0.0, engine, 0.0)
    if not unsafe:
        return CheckResult(1.0, engine, 0.0)
    x, residual, its = _solve_reach(chain, unsafe, None, cfg, engine)
    return _exact_result(1.0 - float(x[init]), engine, residual, its)


def prob_until(
    chain: MarkovChain,
    hold: frozenset[int],
    goal: frozenset[int],
    init: int,
    cfg: EngineConfig | None = None,
    engine: str = "linear",
) -> CheckResult:
    """Probability of reaching ``goal`` while staying inside ``hold``."""
    cfg = cfg or EngineConfig()
    if not goal:
        return CheckResult(0.0, engine, 0.0)
    x, residual, its = _solve_reach(chain, frozenset(goal), frozenset(hold), cfg, engine)
    return _exact_result(float(x[init]), engine, residual, its)


def prob_next(
    chain: MarkovChain,
    target: frozenset[int],
    init: int,
    cfg: EngineConfig | None = None,
    engine: str = "linear",
) -> CheckResult:
    """One-step mass from ``init`` into ``target``."""
    total = sum(p for j, p in chain.transitions[init] if j in target)
    return CheckResult(_clamp(total), engine, 0.0)


def _to_csr(chain: MarkovChain) -> sp.csr_matrix:
    data, rows, cols = [], [], []
    for i, row in enumerate(chain.transitions):
        for j, p in row:
            rows.append(i)
            cols.append(j)
            data.append(p)
    return sp.csr_matrix((data, (rows, cols)), shape=(chain.n, chain.n))


def prob_bounded(
    chain: MarkovChain,
    sets: LabeledSets,
    init: int,
    cfg: EngineConfig | None = None,
    engine: str = "linear",
) -> CheckResult:
    """Step-bounded shapes via the n-step backward recurrence; exact up to
    float rounding."""
    n = sets.bound
    if n is None or n < 0:
        raise EngineError(f"bounded shape requires a bound >= 0, got {n}")
    P = _to_csr(chain)
    if sets.shape is Shape.BOUNDED_INVARIANT:
        ind = np.zeros(chain.n)
        ind[list(sets.safe)] = 1.0
        v = ind.copy()
        for _ in range(n):
            v = ind * (P @ v)
    elif sets.shape is Shape.BOUNDED_REACH:
        ind = np.zeros(chain.n)
        ind[list(sets.target)] = 1.0
        v = ind.copy()
        for _ in range(n):
            v = ind + (1.0 - ind) * (P @ v)
    elif sets.shape is Shape.BOUNDED_UNTIL:
        goal = np.zeros(chain.n)
        goal[list(sets.goal)] = 1.0
        hold = np.zeros(chain.n)
        hold[list(sets.hold)] = 1.0
        keep = (1.0 - goal) * hold
        v = goal.copy()
        for _ in range(n):
            v = goal + keep * (P @ v)
    else:
        raise EngineError(f"not a bounded shape: {sets.shape}")
    return CheckResult(_clamp(float(v[init])), engine, 0.0, iterations=n)


# --- whole-formula dispatch ---------------------------------------------------


def check(
    chain: MarkovChain,
    formula: Formula | str,
    init: int = 0,
    cfg: EngineConfig | None = None,
    engine: str = "linear",
) -> CheckResult:
    """Satisfaction probability of a checkable formula from state ``init``.

    ``engine`` picks the route: the exact solvers share the labeling and
    pre-pass; ``enumerate`` and ``simulate`` take the formula whole.
    """
    cfg = cfg or EngineConfig()
    if isinstance(formula, str):
        formula = parse(formula)
    cls = classify(formula)
    if cls.shape is Shape.UNSUPPORTED:
        raise UnsupportedFragment(f"formula outside the checkable fragment at: {cls.offender}")
    if engine == "enumerate":
        p = enumerate_paths(chain, formula, init, horizon=cfg.horizon, budget=cfg.path_budget)
        return CheckResult(p, "enumerate", 0.0)
    if engine == "simulate":
        return simulate(chain, formula, init, cfg)

    sets = label_chain(chain, formula)
    if sets.shape is Shape.INVARIANT:
        return prob_invariant(chain, sets.safe, init, cfg, engine)
    if sets.shape is Shape.REACH:
        return prob_reach(chain, sets.target, init, cfg, engine)
    if sets.shape is Shape.UNTIL:
        return prob_until(chain, sets.hold, sets.goal, init, cfg, engine)
    if sets.shape is Shape.NEXT:
        return prob_next(chain, sets.target, init, cfg, engine)
    return prob_bounded(chain, sets, init, cfg, engine)


def weighted_check(
    chains: dict[EnvClass, MarkovChain],
    formula: Formula | str,
    env_dist: dict[EnvClass, float],
    init=None,
    cfg: EngineConfig | None = None,
    engine: str = "linear",
) -> CheckResult:
    """Marginalize per-environment results over a known distribution of the
    true class: the weighted sum of each chain's satisfaction probability.

    ``init`` is an AgentState looked up in each chain (defaults to each
    chain's build root, index 0).
    """
    total_mass = sum(env_dist.values())
    if abs(total_mass - 1.0) > 1e-9:
        raise DistributionNotNormalized(f"environment distribution sums to {total_mass!r}")
    total = 0.0
    residual = 0.0
    for env, weight in env_dist.items():
        if weight == 0.0:
            continue
        chain = chains[env]
        idx = chain.index_of(SystemState(init, env)) if init is not None else 0
        result = check(chain, formula, idx, cfg, engine)
        total += weight * result.probability
        residual = max(residual, result.residual)
    return CheckResult(_clamp(total), engine, residual)


# --- enumeration oracle -------------------------------------------------------

_UNDECIDED, _SAT, _VIOL = 0, 1, 2


def _arrival_status(chain: MarkovChain, sets: LabeledSets) -> np.ndarray:
    """Formula verdict on arrival at each state, ignoring step bounds:
    satisfied, violated, or not yet decided. Absorbing states always decide
    unbounded shapes."""
    status = np.zeros(chain.n, dtype=np.int8)
    shape = sets.shape
    for i in range(chain.n):
        absorbing = chain.is_absorbing(i)
        if shape in (Shape.INVARIANT, Shape.BOUNDED_INVARIANT):
            if i not in sets.safe:
                status[i] = _VIOL
            elif absorbing:
                status[i] = _SAT
        elif shape in (Shape.REACH, Shape.BOUNDED_REACH):
            if i in sets.target:
                status[i] = _SAT
            elif absorbing:
                status[i] = _VIOL
        elif shape in (Shape.UNTIL, Shape.BOUNDED_UNTIL):
            if i in sets.goal:
                status[i] = _SAT
            elif i not in sets.hold:
                status[i] = _VIOL
            elif absorbing:
                status[i] = _VIOL
    return status


def _cutoff_value(shape: Shape) -> int:
    # Surviving the full bound satisfies an invariant and fails a
    # reach/until.
    return _SAT if shape in (Shape.INVARIANT, Shape.BOUNDED_INVARIANT) else _VIOL


def enumerate_paths(
    chain: MarkovChain,
    formula: Formula | str,
    init: int = 0,
    horizon: int | None = None,
    budget: int = 2_000_000,
) -> float:
    """Direct implementation of the path measure: depth-first unfolding in
    which a finite prefix contributes its edge-probability product as soon
    as it decides the formula.

    Unbounded formulas require every cycle to be an absorbing self-loop or a
    transient self-loop (the forever-looping bundle has measure zero, so
    exits are renormalized); other cycles raise BudgetExceeded, as does
    exceeding ``budget`` decided prefixes. Bounded shapes (or an explicit
    ``horizon``) unroll literally and need no such structure.
    """
    if isinstance(formula, str):
        formula = parse(formula)
    cls = classify(formula)
    if cls.shape is Shape.UNSUPPORTED:
        raise UnsupportedFragment(f"formula outside the checkable fragment at: {cls.offender}")
    sets = label_chain(chain, formula)
    status = _arrival_status(chain, sets)
    if sets.shape is Shape.NEXT:
        return _clamp(
            sum(p for j, p in chain.transitions[init] if j in sets.target)
        )
    bound = sets.bound if sets.bound is not None else horizon
    cutoff = _cutoff_value(sets.shape)
    decided = 0

    old_limit = sys.getrecursionlimit()
    depth_needed = (bound or 0) + chain.n + 100
    sys.setrecursionlimit(max(old_limit, depth_needed * 2))
    try:
        if bound is not None:

            def visit_bounded(i: int, t: int) -> float:
                nonlocal decided
                st = status[i]
                if st == _UNDECIDED and t >= bound:
                    st = cutoff
                if st != _UNDECIDED:
                    decided += 1
                    if decided > budget:
                        raise BudgetExceeded(f"more than {budget} decided path prefixes")
                    return 1.0 if st == _SAT else 0.0
                total = 0.0
                for j, p in chain.transitions[i]:
                    if p > 0.0:
                        total += p * visit_bounded(j, t + 1)
                return total

            return _clamp(visit_bounded(init, 0))

        on_stack: set[int] = set()

        def visit(i: int) -> float:
            nonlocal decided
            st = status[i]
            if st != _UNDECIDED:
                decided += 1
                if decided > budget:
                    raise BudgetExceeded(f"more than {budget} decided path prefixes")
                return 1.0 if st == _SAT else 0.0
            self_mass = sum(p for j, p in chain.transitions[i] if j == i)
            if self_mass >= 1.0 - 1e-12:
                raise EngineError(f"undecided absorbing state {chain.states[i]}")
            on_stack.add(i)
            total = 0.0
            for j, p in chain.transitions[i]:
                if j == i or p <= 0.0:
                    continue
                if j in on_stack:
                    raise BudgetExceeded(
                        "chain has a non-self cycle through undecided states; "
                        "enumeration needs a horizon here"
                    )
                # Looping forever on a transient self-loop has measure zero;
                # condition each exit on eventually taking it.
                total += (p / (1.0 - self_mass)) * visit(j)
            on_stack.discard(i)
            return total

        return _clamp(visit(init))
    finally:
        sys.setrecursionlimit(old_limit)


# --- Monte Carlo --------------------------------------------------------------

_BLOCK = 4096
_DEFAULT_STEP_VALVE = 10_000


def _padded_sampler(chain: MarkovChain):
    """Per-state cumulative distributions padded to uniform width, for
    vectorized stepping."""
    width = max(len(row) for row in chain.transitions)
    cum = np.ones((chain.n, width))
    succ = np.zeros((chain.n, width), dtype=np.int64)
    for i, row in enumerate(chain.transitions):
        acc = 0.0
        for k, (j, p) in enumerate(row):
            acc += p
            cum[i, k] = acc
            succ[i, k] = j
        succ[i, len(row):] = row[-1][0] if row else i
    return cum, succ


def simulate(
    chain: MarkovChain,
    formula: Formula | str,
    init: int = 0,
    cfg: EngineConfig | None = None,
) -> CheckResult:
    """Estimate the satisfaction probability from seeded random runs.

    Runs are stepped in fixed-size blocks, each with its own generator
    derived from (seed, block index), so the estimate is reproducible
    independent of how blocks would be scheduled. Unbounded formulas need an
    absorbing chain or ``cfg.horizon``; horizon-truncated runs score as
    bounded semantics (undecided counts as satisfied only for invariants).
    Returns the frequency with a 95% normal-approximation half-width and
    exact Clopper-Pearson bounds when the frequency is degenerate.
    """
    cfg = cfg or EngineConfig()
    if isinstance(formula, str):
        formula = parse(formula)
    cls = classify(formula)
    if cls.shape is Shape.UNSUPPORTED:
        raise UnsupportedFragment(f"formula outside the checkable fragment at: {cls.offender}")
    sets = label_chain(chain, formula)
    status = _arrival_status(chain, sets)
    cum, succ = _padded_sampler(chain)

    if sets.shape is Shape.NEXT:
        target = np.zeros(chain.n, dtype=bool)
        target[list(sets.target)] = True
        sat_total = 0
        for block, size in _blocks(cfg.samples):
            rng = np.random.default_rng([cfg.seed, block])
            u = rng.random(size)
            choice = (u[:, None] > cum[np.full(size, init)]).sum(axis=1)
            nxt = succ[np.full(size, init), choice]
            sat_total += int(target[nxt].sum())
        return _binomial_result(sat_total, cfg.samples)

    bound = sets.bound
    if bound is None:
        step_cap = cfg.horizon if cfg.horizon is not None else _DEFAULT_STEP_VALVE
    else:
        step_cap = bound
    cutoff = _cutoff_value(sets.shape)

    sat_total = 0
    for block, size in _blocks(cfg.samples):
        rng = np.random.default_rng([cfg.seed, block])
        state = np.full(size, init, dtype=np.int64)
        verdict = status[state].copy()
        active = verdict == _UNDECIDED
        t = 0
        while active.any():
            if t >= step_cap:
                if bound is None and cfg.horizon is None:
                    raise HorizonRequired(
                        f"runs still undecided after {step_cap} steps; "
                        "set a horizon for non-absorbing chains"
                    )
                verdict[active] = cutoff
                break
            t += 1
            idx = np.flatnonzero(active)
            rows = state[idx]
            u = rng.random(idx.size)
            choice = (u[:, None] > cum[rows]).sum(axis=1)
            state[idx] = succ[rows, choice]
            verdict[idx] = status[state[idx]]
            active[idx] = verdict[idx] == _UNDECIDED
        sat_total += int((verdict == _SAT).sum())
    return _binomial_result(sat_total, cfg.samples)


def _blocks(samples: int):
    block = 0
    remaining = samples
    while remaining > 0:
        size = min(_BLOCK, remaining)
        yield block, size
        block += 1
        remaining -= size


def _binomial_result(successes: int, samples: int) -> CheckResult:
    freq = successes / samples
    half_width = 1.959963984540054 * float(np.sqrt(freq * (1.0 - freq) / samples))
    alpha = 0.05
    if successes == 0:
        ci_low, ci_high = 0.0, 1.0 - (alpha / 2.0) ** (1.0 / samples)
    elif successes == samples:
        ci_low, ci_high = (alpha / 2.0) ** (1.0 / samples), 1.0
    else:
        ci_low = max(0.0, freq - half_width)
        ci_high = min(1.0, freq + half_width)
    return CheckResult(
        probability=freq,
        engine="simulate",
        residual=half_width,
        samples=samples,
        ci_low=ci_low,
        ci_high=ci_high,
    )
