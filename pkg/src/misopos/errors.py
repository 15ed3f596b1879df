"""Exception types shared across the package.

The CLI maps each class to its own exit status, so callers can tell a bad
scenario file from a degenerate pilot design without parsing messages.
"""


class MisoposError(Exception):
    """Base class for all package errors."""


class ConfigError(MisoposError, ValueError):
    """Malformed or inconsistent configuration (unknown key, bad shape, ...)."""


class DomainError(MisoposError, ValueError):
    """Argument outside the mathematical domain of a function."""


class DegenerateInputError(MisoposError, ValueError):
    """Input that makes a closed form undefined, e.g. all-zero pilots."""


class RankDeficiencyError(MisoposError, ValueError):
    """A linear system required by an estimator is rank deficient."""


class SingularFIMError(MisoposError, ValueError):
    """Fisher information matrix cannot be inverted.

    ``diagnosis`` carries a human readable explanation when one is known.
    """

    def __init__(self, message: str, diagnosis: str | None = None):
        super().__init__(message if diagnosis is None else f"{message}: {diagnosis}")
        self.diagnosis = diagnosis


class InapplicableEstimatorError(RankDeficiencyError):
    """Estimator preconditions not met for a scenario (MM with G < N_BS).

    The design is rank deficient by construction, whatever the pilot values.
    """
