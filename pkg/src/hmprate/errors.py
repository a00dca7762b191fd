"""Exception hierarchy shared by all modules.

Every error carries a short ``category`` string; the CLI reports it so that
callers can branch on failures without parsing messages.
"""


class HMPError(Exception):
    category = "error"


class ModelValidationError(HMPError, ValueError):
    """A model or channel description violates its invariants.

    ``field`` is the path of the offending entry, e.g. ``"P[0]"``.
    """

    category = "model_validation"

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ConfigError(HMPError, ValueError):
    category = "config"


class NotPrimitive(HMPError):
    category = "not_primitive"


class NonPrimitiveChain(NotPrimitive):
    pass


class NotPrimitiveWithin(NotPrimitive):
    pass


class NonPositiveVector(HMPError, ValueError):
    category = "non_positive_vector"


class ZeroEntry(HMPError, ValueError):
    category = "zero_entry"


class ZeroObservationProbability(HMPError):
    category = "zero_observation_probability"


class DegenerateBelief(HMPError, FloatingPointError):
    category = "degenerate_belief"


class PathTooShort(HMPError, ValueError):
    category = "path_too_short"


class AlphabetTooLarge(HMPError, ValueError):
    category = "alphabet_too_large"


class DegenerateSpectrum(HMPError):
    category = "degenerate_spectrum"


class PiNotConstant(HMPError):
    category = "pi_not_constant"


class InvalidPerturbation(HMPError, ValueError):
    category = "invalid_perturbation"


class NotFactorized(HMPError):
    category = "not_factorized"


class NotHighNoise(HMPError):
    category = "not_high_noise"


class NotStronglyConnected(HMPError, ValueError):
    category = "not_strongly_connected"


class NonConvergence(HMPError):
    category = "non_convergence"


class NoCycle(HMPError, ValueError):
    category = "no_cycle"
