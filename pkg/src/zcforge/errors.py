"""Exception and warning types shared across the package."""


class ZcforgeError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(ZcforgeError):
    """Tensor shapes violate an operation's contract."""


class NumericalFailure(ZcforgeError):
    """An iterative numeric kernel failed to converge or refused its input."""


class ExecutionFailure(ZcforgeError):
    """A primitive op could not be applied (bad shape, kernel failure, ...).

    Treated by callers exactly like a non-finite output: the program under
    evaluation is invalid on that input, nothing more.
    """


class ParseError(ZcforgeError):
    """Malformed program text. Carries the offending position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class FormatError(ZcforgeError):
    """A statistics blob is corrupt (bad magic, truncation, garbage)."""


class ManifestMismatch(ZcforgeError):
    """Manifest and blob contents disagree, or manifest values are invalid."""


class SpaceTooSmall(ZcforgeError):
    """An architecture grid has fewer points than the requested sample."""


class InsufficientSpaces(ZcforgeError):
    """A fitness batch asked for more search spaces than the dataset has."""


class InsufficientRecords(ZcforgeError):
    """A fitness batch asked for more records than a space pool holds."""


class InitExhausted(ZcforgeError):
    """Population initialisation burned its redraw budget without filling up."""


class VariationExhausted(ZcforgeError):
    """Offspring variation burned its redraw budget."""


class OverlapError(ZcforgeError):
    """Evolution and test datasets share record ids."""


class ConfigError(ZcforgeError):
    """A run configuration file is missing keys or holds bad values."""


class DivergenceWarning(UserWarning):
    """Training loss became non-finite; the network is labelled at chance."""


class DegenerateInputWarning(UserWarning):
    """A rank correlation was requested on fully tied inputs."""
