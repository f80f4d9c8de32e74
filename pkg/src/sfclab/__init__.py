"""sfclab: joint placement and scheduling laboratory for service function chains.

The package couples an exact problem model (capacitated networks, chained
functions, binary activation schedules) with placement heuristics, an exact
branch-and-bound oracle, an inverse-demonstration dataset factory with a
lexicographic min-max schedule refiner, an online episode simulator with a
wire protocol for external policies, and bit-exact dataset serialization.
"""

from .dataset import (
    Dataset,
    DatasetChecksumError,
    DatasetError,
    DatasetFormatError,
    DatasetVersionError,
    Trajectory,
    label,
    read_dataset,
    write_dataset,
)
from .heuristics import (
    BudgetExceededError,
    PlacementPolicy,
    ResourceLedger,
    central_place,
    dfs_place,
    exact_solve,
    greedy_place,
    random_place,
    run_policy,
)
from .invdemo import (
    Demonstration,
    GenConfig,
    GenerationError,
    InfeasibleScheduleError,
    demo_windows,
    derive_deadline,
    inverse_generate,
    iterate_demonstrations,
    lex_minmax_schedule,
    lex_oracle,
    refine_demonstration,
)
from .model import (
    Deployment,
    FeasibilityReport,
    InfeasibleDeploymentError,
    Instance,
    Network,
    ServiceChain,
    StateCodec,
    SystemState,
    Violation,
    check_feasible,
    completion_times,
    encode_state,
    link_load,
    node_load,
    relabel,
    reward,
)
from .simulator import (
    EpisodeConfig,
    EpisodeResult,
    EvaluationTable,
    Metrics,
    arrivals,
    evaluate,
    run_episode,
)

__all__ = [
    "Network", "ServiceChain", "Instance", "Deployment", "SystemState", "StateCodec",
    "FeasibilityReport", "Violation", "InfeasibleDeploymentError",
    "node_load", "link_load", "check_feasible", "reward", "completion_times",
    "encode_state", "relabel",
    "PlacementPolicy", "ResourceLedger", "BudgetExceededError",
    "dfs_place", "greedy_place", "central_place", "random_place", "run_policy",
    "exact_solve",
    "GenConfig", "Demonstration", "GenerationError", "InfeasibleScheduleError",
    "inverse_generate", "refine_demonstration", "iterate_demonstrations",
    "lex_minmax_schedule", "lex_oracle", "derive_deadline", "demo_windows",
    "Trajectory", "Dataset", "DatasetError", "DatasetVersionError",
    "DatasetChecksumError", "DatasetFormatError",
    "write_dataset", "read_dataset", "label",
    "EpisodeConfig", "Metrics", "EpisodeResult", "EvaluationTable",
    "arrivals", "run_episode", "evaluate",
]

__version__ = "0.1.0"
