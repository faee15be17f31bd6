"""Exception and warning types shared across the package."""


class SuperburstError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(SuperburstError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateGeometryError(SuperburstError):
    """Two emitters (nearly) coincide; couplings diverge."""

    def __init__(self, i: int, j: int, distance: float):
        self.pair = (i, j)
        self.distance = distance
        super().__init__(
            f"emitters {i} and {j} are separated by {distance:.3e} wavelengths; "
            "couplings diverge for coincident emitters"
        )


class InvalidCouplingsError(SuperburstError):
    """The dissipative coupling matrix is not physically valid."""


class CapacityError(SuperburstError):
    """System size exceeds what the requested exact method can handle."""


class StiffnessError(SuperburstError):
    """The adaptive integrator underflowed its step size."""

    def __init__(self, message: str, last_time: float):
        self.last_time = last_time
        super().__init__(f"{message} (last good time t = {last_time:.6g})")


class NumericalBlowupError(SuperburstError):
    """Non-finite values appeared in the integrated state."""

    def __init__(self, message: str, last_time: float):
        self.last_time = last_time
        super().__init__(f"{message} (last good time t = {last_time:.6g})")


class ThresholdNotReachedError(SuperburstError):
    """A time series never crossed the requested threshold; extend t_max."""


class ConfigError(SuperburstError, ValueError):
    """A run configuration failed validation.

    ``pointer`` holds the JSON pointer of the offending field where known.
    """

    def __init__(self, message: str, pointer: str = ""):
        self.pointer = pointer
        super().__init__(f"{pointer}: {message}" if pointer else message)


class PartialEnsembleError(SuperburstError):
    """One or more ensemble samples failed.

    ``failed`` maps sample indices to their exceptions; when the run was
    not fail-fast and some samples succeeded, ``result`` holds the
    partial ensemble average.
    """

    def __init__(self, failed: dict):
        self.failed = failed
        self.result = None
        idx = ", ".join(str(k) for k in sorted(failed))
        super().__init__(f"ensemble samples failed at indices [{idx}]")


class UnphysicalDynamicsWarning(RuntimeWarning):
    """The truncated-correlator dynamics produced unphysical values."""
