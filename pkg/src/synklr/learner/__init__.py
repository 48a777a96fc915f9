from .actor import (
    GreedyQPolicy,
    Policy,
    ScriptedPolicy,
    UniformRandomPolicy,
    decision_key,
    history_keys,
    run_actor,
)
from .config import ConfigError, LearnerConfig, epsilon_for_actor
from .qfunction import (
    MLPQ,
    Adam,
    QFunction,
    ShapeError,
    TabularQ,
    make_qfunction,
    qfunction_from_bytes,
    qfunction_to_json,
)
from .replay import PrioritizedReplay
from .targets import (
    ReplayItem,
    SeatTransitions,
    gradient_step,
    nstep_double_q_target,
    trajectory_priority,
)
from .trainer import QLearner

__all__ = [
    "Adam",
    "ConfigError",
    "GreedyQPolicy",
    "LearnerConfig",
    "MLPQ",
    "Policy",
    "PrioritizedReplay",
    "QFunction",
    "QLearner",
    "ReplayItem",
    "ScriptedPolicy",
    "SeatTransitions",
    "ShapeError",
    "TabularQ",
    "UniformRandomPolicy",
    "decision_key",
    "epsilon_for_actor",
    "gradient_step",
    "history_keys",
    "make_qfunction",
    "nstep_double_q_target",
    "qfunction_from_bytes",
    "qfunction_to_json",
    "run_actor",
    "trajectory_priority",
]
