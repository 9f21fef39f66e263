"""Fixed-structure controller synthesis from frequency-response data."""

__version__ = "0.1.0"

from .analysis import (StabilityCertificate, achieved_h2, achieved_hinf,
                       certify_stability, closed_loop, winding_number)
from .constraints import DesignSpec, FrequencyProblem
from .controller import (Controller, ControllerStructure, MatrixPolynomial,
                         read_controller, write_controller)
from .exceptions import (AssemblyError, EvaluationError, FdlmiError,
                         IdentificationError, InitializationError, InputError,
                         SynthesisError, WindingError)
from .freqdata import (ExperimentRecord, FrequencyGrid, FrequencyResponseSet,
                       RationalMatrixWeight, RationalWeight, TabulatedWeight,
                       build_log_grid, estimate_frequency_response,
                       frs_from_rational, read_experiment, read_frs,
                       write_experiment, write_frs)
from .synthesis import (SynthesisConfig, h2_objective, init_epsilon_static,
                        load_config, reinit_random, run_synthesis)
