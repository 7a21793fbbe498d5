"""Exception types shared across the package."""


class SivqError(Exception):
    """Base class for all package errors."""


class ValidationError(SivqError):
    """Invalid input data or configuration values."""


class ConfigError(SivqError):
    """Malformed or inconsistent experiment configuration."""


class TrainingDiverged(SivqError):
    """Training aborted on a non-finite loss; carries last diagnostics."""

    def __init__(self, message: str, step: int, lr: float,
                 mean_prob_entropy: float, utilization: float):
        super().__init__(message)
        self.step = step
        self.lr = lr
        self.mean_prob_entropy = mean_prob_entropy
        self.utilization = utilization
