"""Entropy rates of hidden Markov processes and their high-noise expansions."""

__version__ = "0.1.0"

from .belief_recursions import (  # noqa: E402
    EstimatorResult,
    backward_step,
    belief_trace,
    entropy_rate_exact,
    entropy_rate_mc,
    forgetting_check,
    forward_step,
    log_psi,
    sample_blackwell,
    simulate_path,
)
from .errors import *  # noqa: E402,F401,F403
from .families import (  # noqa: E402
    ParametrizedFamily,
    bsc_markov_family,
    gaussian_family,
    kernel_perturbation_family,
)
from .fsc_capacity import (  # noqa: E402
    FiniteStateChannel,
    MarkovInput,
    capacity_second_derivative,
    compose,
    isi_edge_optimizer,
    max_mean_cycle,
    mutual_information_rate_mc,
    rll_bsc_capacity_coefficient,
)
from .high_noise_series import (  # noqa: E402
    detect_high_noise_point,
    entropy_series,
    gaussian_second_derivative,
    high_noise_derivatives,
)
from .markov_core import (  # noqa: E402
    HiddenMarkovModel,
    MarkovChain,
    birkhoff_coefficients,
    hilbert_distance,
    load_model,
    primitivity_certificate,
    stationary_distribution,
)
from .rate_derivatives import (  # noqa: E402
    edge_occupancy_entropy_derivative,
    entropy_derivative_mc,
    lsr_derivative,
    measure_property_check,
)
