"""confmc: from a classifier's confusion matrix to exact satisfaction
probabilities of temporal safety requirements on the closed loop."""

__version__ = "0.1.0"

from .confusion import (
    ClassLabel,
    ClassSizes,
    ConfusionMatrix,
    cm1,
    from_precision_recall,
    identity,
    precision,
    precision_mean_rate,
    recall,
    validate,
)
from .scenario import (
    AgentState,
    Controller,
    EnvClass,
    ScenarioParams,
    SystemState,
    builtin_formula,
    clamp_pos,
    controller_empty,
    controller_obj,
    controller_ped,
    make_controller,
    stoppable,
    successors_dyn,
    verify_controller,
)
from .chain import (
    MarkovChain,
    build_markov_chain,
    build_markov_chain_prob,
    make_absorbing,
    observation_set,
    transition_probability,
    validate_stochastic,
)
from .logic import Formula, Shape, classify, eval_atom, eval_prop, label_chain, parse
from .engine import (
    CheckResult,
    EngineConfig,
    check,
    enumerate_paths,
    prob_bounded,
    prob_invariant,
    prob_next,
    prob_reach,
    prob_until,
    simulate,
    weighted_check,
)
from .formats import export_dot, export_explicit, export_prism, import_explicit
from .sweep import DEFAULT_PR_PAIRS, ResultRow, SweepSpec, run_sweep, write_csv
