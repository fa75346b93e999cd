"""Linear-quadratic McKean-Vlasov control with random affine coefficients."""

from .control import FeedbackLaw, Solution, feedback_coefficients, mean_state_ode, optimal_control, solve, value
from .errors import (AssumptionError, DegenerateGainError, DomainError, HorizonLimitDivergenceError,
                     InadmissibleAdjointError, LqmkvError, RiccatiBlowUpError, ScenarioError,
                     SimulationBlowUpError, TruncationError, UnsupportedCouplingError)
from .factors import ArithmeticBrownian, FactorModel, GeometricBrownian, OrnsteinUhlenbeck
from .model import (AffineChannel, AssumptionReport, LqmkvProblem, TimePath, validate_finite_horizon,
                    validate_infinite_horizon)
from .riccati import RiccatiSolution, solve_K_finite, solve_K_infinite, solve_Lambda_finite, solve_Lambda_infinite, solve_riccati
from .bsde import AdjointSolution, solve_adjoint
from .simulate import SimulationConfig, martingale_diagnostic, perturbation_test, simulate_particles

__version__ = "0.1.0"

__all__ = [
    "AdjointSolution", "AffineChannel", "ArithmeticBrownian", "AssumptionError", "AssumptionReport",
    "DegenerateGainError", "DomainError", "FactorModel", "FeedbackLaw", "GeometricBrownian",
    "HorizonLimitDivergenceError", "InadmissibleAdjointError", "LqmkvError", "LqmkvProblem",
    "OrnsteinUhlenbeck", "RiccatiBlowUpError", "RiccatiSolution", "ScenarioError", "SimulationBlowUpError",
    "SimulationConfig", "Solution", "TimePath", "TruncationError", "UnsupportedCouplingError",
    "feedback_coefficients", "martingale_diagnostic", "mean_state_ode", "optimal_control",
    "perturbation_test", "simulate_particles", "solve", "solve_K_finite", "solve_K_infinite",
    "solve_Lambda_finite", "solve_Lambda_infinite", "solve_adjoint", "solve_riccati",
    "validate_finite_horizon", "validate_infinite_horizon", "value",
]
