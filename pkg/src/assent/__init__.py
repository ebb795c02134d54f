"""Two-step design-space exploration: evolutionary coarse search over discrete
architectures/components, then sample-efficient continuous fine-tuning via a
ReLU-network surrogate whose inverse design is solved as a mixed-integer
linear feasibility problem."""

from .evolve import Chromosome, GAConfig, Gene, run_step1
from .finetune import FineTuneConfig, fractional_deviation, run_step2
from .milp import LinearProgram, encode_network, solve_lp, solve_milp
from .problem import (
    DesignProblem,
    DesignVariable,
    EvaluationRecord,
    SimulationBuffer,
    Specification,
    evaluate,
    objective_values,
)
from .sobol import SobolStream, box_around, scale_to_box
from .surrogate import MLPModel, MLPSurrogate, TrainConfig, select_architecture, train

__version__ = "0.1.0"

__all__ = [
    "Chromosome",
    "DesignProblem",
    "DesignVariable",
    "EvaluationRecord",
    "FineTuneConfig",
    "GAConfig",
    "Gene",
    "LinearProgram",
    "MLPModel",
    "MLPSurrogate",
    "SimulationBuffer",
    "SobolStream",
    "Specification",
    "TrainConfig",
    "box_around",
    "encode_network",
    "evaluate",
    "fractional_deviation",
    "objective_values",
    "run_step1",
    "run_step2",
    "scale_to_box",
    "select_architecture",
    "solve_lp",
    "solve_milp",
    "train",
]
