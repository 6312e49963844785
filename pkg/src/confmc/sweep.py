"""Grid sweeps over initial speeds, speed limits, environment classes, and
classifier operating points, written as diffable CSV.

Rows come out in the declared range order (env, then v_max, then v0, then
operating point), floats print with 12 significant digits, and timing is off
by default, so identical inputs give byte-identical files. Per-point
failures land in the row's error column and the sweep continues.
"""

import time
from dataclasses import dataclass
from pathlib import Path

from .chain import build_markov_chain
from .confusion import from_precision_recall
from .engine import EngineConfig, EngineError, check
from .formats import CSV_HEADER, ConfigError, format_float, resolve_cm
from .scenario import (
    AgentState,
    BUILTIN_FORMULAS,
    EnvClass,
    ScenarioParams,
    builtin_formula,
    make_controller,
)

# Operating points spanning the feasible precision/recall region, ordered by
# increasing recall; the classic tradeoff shape (recall up, precision down).
DEFAULT_PR_PAIRS = (
    (0.95, 0.60),
    (0.90, 0.65),
    (0.85, 0.70),
    (0.80, 0.75),
    (0.75, 0.80),
    (0.70, 0.85),
    (0.65, 0.90),
    (0.60, 0.95),
)


@dataclass(frozen=True)
class SweepSpec:
    """One declared grid: scenario geometry plus the ranges to cross."""

    road_length: int
    sidewalk_cell: int
    v_max_values: tuple[int, ...]
    v0_values: tuple[int, ...] | str  # explicit list or "1..v_max"
    envs: tuple[EnvClass, ...]
    cm_source: str | None = None  # "cm1" | "identity" | path
    pr_pairs: tuple[tuple[float, float], ...] | None = None
    formula: str | dict = "no-false-stop"
    stop_semantics: str = "absorb"
    engine: str = "linear"
    out: str = "results.csv"

    def __post_init__(self):
        if not self.v_max_values:
            raise ConfigError("empty v_max range")
        if isinstance(self.v0_values, tuple) and not self.v0_values:
            raise ConfigError("empty v0 range")
        if not self.envs:
            raise ConfigError("empty env range")
        if (self.cm_source is None) == (self.pr_pairs is None):
            raise ConfigError("specify exactly one of a fixed matrix or (p,r) pairs")
        if self.pr_pairs is not None and not self.pr_pairs:
            raise ConfigError("empty (p,r) pair list")
        if self.stop_semantics not in ("absorb", "restart"):
            raise ConfigError(f"bad stop_semantics {self.stop_semantics!r}")


def spec_from_dict(payload: dict) -> SweepSpec:
    try:
        scenario = payload["scenario"]
        road_length = int(scenario["N"])
        sidewalk_cell = int(scenario["k"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError("sweep spec needs scenario.N and scenario.k")
    v0_raw = payload.get("v0", "1..v_max")
    if isinstance(v0_raw, str):
        if v0_raw != "1..v_max":
            raise ConfigError(f"v0 must be a list or '1..v_max', got {v0_raw!r}")
        v0_values: tuple[int, ...] | str = v0_raw
    else:
        v0_values = tuple(int(v) for v in v0_raw)
    pr_raw = payload.get("pr_pairs")
    if pr_raw == "default":
        pr_pairs = DEFAULT_PR_PAIRS
    elif pr_raw is not None:
        pr_pairs = tuple((float(p), float(r)) for p, r in pr_raw)
    else:
        pr_pairs = None
    return SweepSpec(
        road_length=road_length,
        sidewalk_cell=sidewalk_cell,
        v_max_values=tuple(int(v) for v in payload.get("v_max", ())),
        v0_values=v0_values,
        envs=tuple(EnvClass.from_name(e) for e in payload.get("env", ())),
        cm_source=payload.get("cm"),
        pr_pairs=pr_pairs,
        formula=payload.get("formula", "no-false-stop"),
        stop_semantics=payload.get("stop_semantics", "absorb"),
        engine=payload.get("engine", "linear"),
        out=payload.get("out", "results.csv"),
    )


@dataclass
class ResultRow:
    env: str
    v0: int
    v_max: int
    p: float | None
    r: float | None
    cm_id: str
    formula: str
    probability: float | None
    engine: str
    residual: float | None
    chain_states: int | None
    wall_time_ms: float | None = None
    error: str = ""

    def to_csv(self) -> str:
        fields = [
            self.env,
            str(self.v0),
            str(self.v_max),
            format_float(self.p) if self.p is not None else "",
            format_float(self.r) if self.r is not None else "",
            self.cm_id,
            f'"{self.formula}"',
            format_float(self.probability) if self.probability is not None else "",
            self.engine,
            format_float(self.residual) if self.residual is not None else "",
            str(self.chain_states) if self.chain_states is not None else "",
            format_float(self.wall_time_ms) if self.wall_time_ms is not None else "",
            self.error,
        ]
        return ",".join(fields)


def _resolve_formula(spec: SweepSpec, env: EnvClass, params: ScenarioParams) -> str:
    choice = spec.formula
    if isinstance(choice, dict):
        try:
            choice = choice[env.value]
        except KeyError:
            raise ConfigError(f"formula mapping has no entry for env {env.value!r}")
    if choice in BUILTIN_FORMULAS:
        return builtin_formula(choice, params)
    return choice


def _matrix_points(spec: SweepSpec):
    if spec.pr_pairs is not None:
        for p, r in spec.pr_pairs:
            yield p, r, "", from_precision_recall(p, r)
    else:
        cm, cm_id = resolve_cm(spec.cm_source)
        yield None, None, cm_id, cm


def run_sweep(spec: SweepSpec, cfg: EngineConfig | None = None, timing: bool = False):
    """Evaluate every grid point in declared order. Infeasible or failing
    points record their error and leave the probability blank."""
    cfg = cfg or EngineConfig()
    rows: list[ResultRow] = []
    matrix_points = list(_matrix_points(spec))
    for env in spec.envs:
        for v_max in spec.v_max_values:
            try:
                params = ScenarioParams(spec.road_length, spec.sidewalk_cell, v_max)
                controller = make_controller(params, spec.stop_semantics)
            except ValueError as e:
                params = controller = None
                setup_error = str(e)
            if isinstance(spec.v0_values, str):
                v0_range = range(1, v_max + 1)
            else:
                v0_range = spec.v0_values
            for v0 in v0_range:
                for p, r, cm_id, cm in matrix_points:
                    if params is None:
                        rows.append(
                            ResultRow(env.value, v0, v_max, p, r, cm_id, "", None,
                                      spec.engine, None, None, error=setup_error)
                        )
                        continue
                    formula = _resolve_formula(spec, env, params)
                    start = time.perf_counter()
                    try:
                        chain = build_markov_chain(
                            params, controller, cm, env, AgentState(1, v0),
                            stop_semantics=spec.stop_semantics,
                        )
                        result = check(chain, formula, 0, cfg, spec.engine)
                    except (ValueError, EngineError) as e:
                        rows.append(
                            ResultRow(env.value, v0, v_max, p, r, cm_id, formula, None,
                                      spec.engine, None, None, error=str(e))
                        )
                        continue
                    elapsed_ms = (time.perf_counter() - start) * 1000.0
                    rows.append(
                        ResultRow(
                            env.value, v0, v_max, p, r, cm_id, formula,
                            result.probability, result.engine, result.residual,
                            chain.n, elapsed_ms if timing else None,
                        )
                    )
    return rows


def write_csv(rows, out_path) -> list:
    """Write rows to CSV. An ``{env}`` placeholder in the path splits the
    output into one file per environment class, preserving row order."""
    out_path = str(out_path)
    written = []
    if "{env}" in out_path:
        by_env: dict[str, list[ResultRow]] = {}
        for row in rows:
            by_env.setdefault(row.env, []).append(row)
        for env_name, group in by_env.items():
            path = Path(out_path.replace("{env}", env_name))
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(CSV_HEADER + "\n" + "\n".join(r.to_csv() for r in group) + "\n")
            written.append(path)
    else:
        path = Path(out_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(CSV_HEADER + "\n" + "\n".join(r.to_csv() for r in rows) + "\n")
        written.append(path)
    return written
