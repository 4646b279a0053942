"""qcheck: quantitative verification of JANI-specified Markov models."""

from .errors import (
    BudgetExceededError,
    InfiniteRewardError,
    InvariantViolation,
    ModelSyntaxError,
    ModelTypeError,
    QcheckError,
    QueryError,
    SolverError,
    StateDomainError,
    UnsupportedFeatureError,
)
from .jani import Model, parse_jani, parse_jani_file
from .queries import parse_query
from .explore import (
    CompiledModel,
    ExplicitModel,
    ExplorationStats,
    State,
    build_state_space,
    label_states,
    sample_step,
    successors,
)
from .bellman import (
    ValueBounds,
    mec_decompose,
    prob01,
    strongly_connected_components,
)
from .objectives import (
    LraResult,
    lra_reward,
    reach_prob,
    steady_state,
    total_reward,
)
from .ctmc import transient_prob, transient_window, truncated_build
from .robust import inner_optimize, robust_reach
from .games import extract_strategy, solve_tsg, solve_tsg_reward
from .multiobj import (
    MultiObjective,
    ParetoApprox,
    Verdict,
    achievability,
    pareto2,
)
from .pomdp import fully_obs_values, heuristic_policy, unfold_with_cutoffs
from .rare import (
    Estimate,
    derive_importance,
    estimate_crude,
    estimate_splitting,
    select_thresholds,
)

__version__ = "0.1.0"
