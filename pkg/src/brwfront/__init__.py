"""Front asymptotics of branching random walks through interfaces.

Predicts the first-order speed and logarithmic correction of the maximal
displacement when the reproduction law changes at macroscopic times,
verifies the predictions by particle simulation, and checks the underlying
walk identities (many-to-one, ballot-type scalings) exactly on small
instances.
"""

from .errors import (AssumptionViolated, ExactBlowup, InsufficientData, NoRoot,
                     TooLarge)
from .mechanisms import (ExplicitFinite, FiniteDiscrete, FixedCountIID, Gaussian,
                         RandomCountIID, TwoPoint, Uniform, is_lattice, laplace,
                         laplace_derivatives, sample_offspring, tilted_step)
from .regimes import (EnvironmentSchedule, PredictedFront, RegimePrediction,
                      classify_two_era, fast_consistency_check, log_coefficient,
                      predict_front, solve_multi_era)
from .simulator import (Exact, RunRecord, SimConfig, WindowTruncated,
                        diagnostics_barrier, run, run_ensemble)
from .stats import FitResult, TightnessReport, fit_front, tightness
from .transforms import CramerValue, TransformProfile, cramer, critical_theta
from .walklab import (Constant, LogBridge, MonteCarlo, ExactDP, PowerLaw,
                      TiltedWalk, ballot_powerlaw, ballot_probability,
                      bridge_probability, many_to_one_check, stone_window)

__version__ = "0.1.0"
