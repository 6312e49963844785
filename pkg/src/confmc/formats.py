"""File formats: scenario/matrix JSON ingestion and chain serialization.

Explicit-state export writes a ``.tra``/``.lab``/``.sta`` triple:

* ``prefix.tra`` - ``STATES n TRANSITIONS m`` header, then one ``src dst
  prob`` line per edge (0-based indices, 17 significant digits),
* ``prefix.sta`` - ``(cell,speed)`` header, then ``index:(cell,speed)``,
* ``prefix.lab`` - ``index: label...`` with ``stopped``, ``road_end``,
  ``at_cell_<i>``, ``speed_<v>`` and ``env_<class>`` labels.

The same triple re-imports to a chain with identical check results. A
guarded-command DTMC text (one integer state variable over the index space)
and a DOT digraph are available for cross-validation with external tools.
"""

import json
from pathlib import Path

from .chain import MarkovChain, validate_stochastic
from .confusion import ConfusionMatrix, cm1, identity, validate
from .scenario import AgentState, EnvClass, ScenarioParams, SystemState


class ConfigError(ValueError):
    pass


class FormatError(ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = str(path) if path is not None else None
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(f"{where}{message}")


# --- JSON ingestion -----------------------------------------------------------


def load_confusion_json(path) -> ConfusionMatrix:
    """Read a confusion-matrix JSON file.

    Schema: ``{"labels": [...], "columns_are_true_class": true, "entries":
    [[...], ...]}``; entries may be numbers or rational strings like
    ``"10/15"``. With ``columns_are_true_class`` false the matrix is stored
    row-per-true-class and gets transposed on load.
    """
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"confusion-matrix file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})")
    try:
        labels = payload["labels"]
        entries = payload["entries"]
    except (KeyError, TypeError):
        raise ConfigError(f"{path}: expected keys 'labels' and 'entries'")
    if not payload.get("columns_are_true_class", True):
        entries = [list(col) for col in zip(*entries)]
    try:
        return validate(entries, labels)
    except ValueError as e:
        raise ConfigError(f"{path}: {e}")


def resolve_cm(source) -> tuple[ConfusionMatrix, str]:
    """Turn a matrix reference into (matrix, short id). Accepts the builtin
    names ``cm1`` and ``identity`` or a JSON file path."""
    if isinstance(source, ConfusionMatrix):
        return source, "custom"
    if source == "cm1":
        return cm1(), "cm1"
    if source == "identity":
        return identity(), "identity"
    return load_confusion_json(source), Path(source).stem


def parse_pr(text: str):
    try:
        p_text, r_text = text.split(",")
        return float(p_text), float(r_text)
    except ValueError:
        raise ConfigError(f"expected precision,recall (e.g. 0.8,0.8), got {text!r}")


def load_scenario_json(path) -> dict:
    """Read a scenario JSON file into a plain dict:
    ``{"N": 65, "k": 57, "v_max": 5, "v0": 3, "env": "ped",
    "stop_semantics": "absorb"}``."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})")
    for key in ("N", "k", "v_max"):
        if key not in payload:
            raise ConfigError(f"{path}: missing scenario key {key!r}")
    return payload


def scenario_from_dict(payload: dict):
    """Build (params, v0, env, stop_semantics) from a scenario dict."""
    try:
        params = ScenarioParams(
            road_length=int(payload["N"]),
            sidewalk_cell=int(payload["k"]),
            v_max=int(payload["v_max"]),
        )
    except ValueError as e:
        raise ConfigError(str(e))
    v0 = int(payload.get("v0", 1))
    if not 0 <= v0 <= params.v_max:
        raise ConfigError(f"v0={v0} outside [0, {params.v_max}]")
    env = EnvClass.from_name(payload["env"]) if "env" in payload else None
    semantics = payload.get("stop_semantics", "absorb")
    if semantics not in ("absorb", "restart"):
        raise ConfigError(f"stop_semantics must be 'absorb' or 'restart', got {semantics!r}")
    return params, v0, env, semantics


# --- explicit-state triple ----------------------------------------------------


def _prob_text(p: float) -> str:
    return f"{p:.17g}"


def state_labels(chain: MarkovChain, i: int) -> list[str]:
    s = chain.states[i]
    labels = [f"at_cell_{s.agent.cell}", f"speed_{s.agent.speed}"]
    for name in ("stopped", "road_end"):
        if i in chain.labels.get(name, ()):
            labels.append(name)
    labels.append(f"env_{s.env.value}")
    return labels


def export_explicit(chain: MarkovChain, prefix) -> list[Path]:
    """Write the .tra/.lab/.sta triple for ``chain`` under ``prefix``."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    tra = prefix.with_suffix(".tra")
    sta = prefix.with_suffix(".sta")
    lab = prefix.with_suffix(".lab")

    lines = [f"STATES {chain.n} TRANSITIONS {chain.num_transitions}"]
    for i, row in enumerate(chain.transitions):
        for j, p in row:
            lines.append(f"{i} {j} {_prob_text(p)}")
    tra.write_text("\n".join(lines) + "\n")

    lines = ["(cell,speed)"]
    for i, s in enumerate(chain.states):
        lines.append(f"{i}:({s.agent.cell},{s.agent.speed})")
    sta.write_text("\n".join(lines) + "\n")

    lines = []
    for i in range(chain.n):
        lines.append(f"{i}: " + " ".join(state_labels(chain, i)))
    lab.write_text("\n".join(lines) + "\n")
    return [tra, lab, sta]


def import_explicit(prefix) -> MarkovChain:
    """Rebuild a chain from a .tra/.lab/.sta triple written by
    :func:`export_explicit`. Raises FormatError with the offending file and
    line on inconsistency; the result always passes stochastic validation.
    """
    prefix = Path(prefix)
    tra = prefix.with_suffix(".tra")
    sta = prefix.with_suffix(".sta")
    lab = prefix.with_suffix(".lab")
    for path in (tra, sta, lab):
        if not path.exists():
            raise FormatError("file is missing", path=path)

    sta_lines = sta.read_text().splitlines()
    if not sta_lines or sta_lines[0].strip() != "(cell,speed)":
        raise FormatError("expected '(cell,speed)' header", path=sta, line=1)
    agents: dict[int, AgentState] = {}
    for lineno, line in enumerate(sta_lines[1:], start=2):
        if not line.strip():
            continue
        try:
            idx_text, pair = line.split(":")
            cell_text, speed_text = pair.strip().strip("()").split(",")
            agents[int(idx_text)] = AgentState(int(cell_text), int(speed_text))
        except ValueError:
            raise FormatError(f"malformed state line {line!r}", path=sta, line=lineno)
    n = len(agents)
    if set(agents) != set(range(n)):
        raise FormatError(f"state indices are not 0..{n - 1}", path=sta)

    env_by_state: dict[int, EnvClass] = {}
    labels: dict[str, set[int]] = {}
    for lineno, line in enumerate(lab.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            idx_text, names = line.split(":", 1)
            idx = int(idx_text)
        except ValueError:
            raise FormatError(f"malformed label line {line!r}", path=lab, line=lineno)
        if idx not in agents:
            raise FormatError(f"label for unknown state {idx}", path=lab, line=lineno)
        for name in names.split():
            if name.startswith("env_"):
                env_by_state[idx] = EnvClass.from_name(name[4:])
            elif name in ("stopped", "road_end"):
                labels.setdefault(name, set()).add(idx)
    missing_env = [i for i in range(n) if i not in env_by_state]
    if missing_env:
        raise FormatError(f"states {missing_env[:5]} carry no env_<class> label", path=lab)

    rows: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    tra_lines = tra.read_text().splitlines()
    if not tra_lines or not tra_lines[0].startswith("STATES"):
        raise FormatError("expected 'STATES n TRANSITIONS m' header", path=tra, line=1)
    header = tra_lines[0].split()
    try:
        declared_states, declared_edges = int(header[1]), int(header[3])
    except (IndexError, ValueError):
        raise FormatError(f"malformed header {tra_lines[0]!r}", path=tra, line=1)
    if declared_states != n:
        raise FormatError(
            f"header declares {declared_states} states but .sta lists {n}", path=tra, line=1
        )
    edges = 0
    for lineno, line in enumerate(tra_lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        try:
            src, dst, p = int(parts[0]), int(parts[1]), float(parts[2])
        except (IndexError, ValueError):
            raise FormatError(f"malformed transition line {line!r}", path=tra, line=lineno)
        if src not in agents or dst not in agents:
            raise FormatError("transition references unknown state", path=tra, line=lineno)
        if not 0.0 <= p <= 1.0 + 1e-9:
            raise FormatError(f"probability {p} outside [0, 1]", path=tra, line=lineno)
        rows[src].append((dst, p))
        edges += 1
    if edges != declared_edges:
        raise FormatError(f"header declares {declared_edges} edges, found {edges}", path=tra)

    envs = set(env_by_state.values())
    chain = MarkovChain(
        states=tuple(SystemState(agents[i], env_by_state[i]) for i in range(n)),
        transitions=tuple(tuple(row) for row in rows),
        labels={name: frozenset(members) for name, members in labels.items()},
        env=envs.pop() if len(envs) == 1 else None,
    )
    report = validate_stochastic(chain)
    if not report.passed:
        raise FormatError(
            f"rows {report.offending[:5]} are not stochastic "
            f"(max deviation {report.max_deviation:.3e})",
            path=tra,
        )
    return chain


# --- model-checker text and DOT -----------------------------------------------


def export_prism(chain: MarkovChain, prefix) -> Path:
    """Write a guarded-command DTMC module with one integer state variable
    holding the state index; the .sta file carries the decoding."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    path = prefix.with_suffix(".pm")
    lines = ["dtmc", "", "module chain", f"  s : [0..{chain.n - 1}] init 0;"]
    for i, row in enumerate(chain.transitions):
        updates = " + ".join(f"{_prob_text(p)}:(s'={j})" for j, p in row)
        lines.append(f"  [] s={i} -> {updates};")
    lines.append("endmodule")
    lines.append("")
    for name in sorted(chain.labels):
        members = sorted(chain.labels[name])
        if not members:
            continue
        guard = " | ".join(f"s={i}" for i in members)
        lines.append(f'label "{name}" = {guard};')
    path.write_text("\n".join(lines) + "\n")
    return path


def export_dot(chain: MarkovChain, prefix) -> Path:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    path = prefix.with_suffix(".dot")
    lines = ["digraph chain {", "  rankdir=LR;"]
    for i, s in enumerate(chain.states):
        shape = "doublecircle" if chain.is_absorbing(i) else "circle"
        lines.append(
            f'  {i} [label="({s.agent.cell},{s.agent.speed})", shape={shape}];'
        )
    for i, row in enumerate(chain.transitions):
        for j, p in row:
            lines.append(f'  {i} -> {j} [label="{p:.6g}"];')
    lines.append("}")
    path.write_text("\n".join(lines) + "\n")
    return path


# --- results CSV ----------------------------------------------------------------


CSV_HEADER = (
    "env,v0,v_max,p,r,cm,formula,probability,engine,residual,chain_states,wall_time_ms,error"
)


def format_float(x) -> str:
    if x is None or x == "":
        return ""
    return f"{float(x):.12g}"
