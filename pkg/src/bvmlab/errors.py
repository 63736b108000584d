"""Exception hierarchy shared across the package."""


class BvmLabError(Exception):
    """Base error for bvmlab."""


class DomainViolation(BvmLabError, ValueError):
    """A parameter point lies outside the model's admissible box.

    Carries the first offending coordinate index.
    """

    def __init__(self, index: int, value: float, low: float, high: float):
        self.index = index
        self.value = value
        super().__init__(
            f"coordinate {index} = {value!r} outside admissible interval "
            f"[{low!r}, {high!r}]"
        )


class UnsupportedCapability(BvmLabError):
    """Requested quantity is not available for this model/process pair."""


class SpdFactorizationError(BvmLabError):
    """A matrix required to be symmetric positive definite is not."""


class SamplingError(BvmLabError):
    """MCMC chain failed a hard diagnostic (acceptance window, bad init)."""


class ConfigError(BvmLabError, ValueError):
    """Experiment configuration violates the schema.

    ``field`` holds a dotted path to the offending entry.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")
