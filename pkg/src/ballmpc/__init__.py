"""Free-ball collision avoidance for trajectory optimization and NMPC."""
from .errors import (BallMPCError, BarrierDomainError, CapacityError, DegenerateGradientError,
                     InfeasibleCenterError, InfeasibleSeedError, InitializationError,
                     NotFreeError, NumericError, OutOfDomainError, UnreachableGoalError)
from .world import DistanceGrid, Obstacle, World, load_world, rasterize, save_world
from .freeball import FreeBall, LineSearchParams, free_ball, grow_centers, maximize_free_ball
from .models import (DoubleIntegrator, FreeFlyer, RobotModel, Unicycle, augment, integrate,
                     make_model, orientation_distance, rk4, simulate)
from .nlp import (CiaoNlp, Formulation, Objective, Reference, Trajectory, assemble,
                  feasibility_check)
from .qp import QPSettings, QuadRows, solve_qp
from .solver import GenericNLP, SolverConfig, SolveResult, solve
from .planner import (Planner, PlannerConfig, PlannerState, ciao_iteration, continuous_margins,
                      discrete_margins, initial_guess, nmpc_step, optimize_trajectory,
                      run_closed_loop, standstill)
from .bench import (Scenario, compare_formulations, formulation_suite, generate_benchmark,
                    generate_planar, path_metrics, run_freeflyer)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
