"""Exception hierarchy shared by all modules."""


class SasakiFlowError(Exception):
    """Base class for package errors."""


class NumericalFailure(SasakiFlowError):
    """A computation left its domain of validity (CLI exit code 2)."""


class PositivityViolation(NumericalFailure):
    """The metric density is not positive at some node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class StabilityViolation(NumericalFailure):
    """The explicit step size exceeds the monitored stability bound."""


class SolvabilityResidualExceeded(NumericalFailure):
    """The compatibility integral of an elliptic problem is not zero."""


class SamplingFailed(NumericalFailure):
    """No admissible rescaling of a random potential was found."""


class TailNotConverged(NumericalFailure):
    """A truncated improper integral has a tail bound above tolerance."""


class InsufficientSamples(NumericalFailure):
    """An ensemble is too small for the requested fit."""


class CorruptArtifact(NumericalFailure):
    """A trajectory directory or checkpoint is incomplete or fails its checksum."""


class ConfigError(SasakiFlowError):
    """Base class for configuration problems (CLI exit code 1)."""


class ParseError(ConfigError):
    """Malformed config text or an unknown key."""

    def __init__(self, message, line=None, key=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if key is not None:
            loc.append(f"key '{key}'")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.line = line
        self.key = key


class ValidationError(ConfigError, ValueError):
    """One or more config values violate documented constraints."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
