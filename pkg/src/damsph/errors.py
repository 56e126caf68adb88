"""Exception hierarchy shared by the solver, scene loader and CLI."""


class DamSPHError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(DamSPHError):
    """Invalid scene, parameter or precondition."""

    exit_code = 2


class EmptyRegionError(ConfigurationError):
    pass


class IngestionError(ConfigurationError):
    """Malformed input data such as an unsorted accelerogram."""


class SceneIOError(DamSPHError):
    exit_code = 3


class NumericalBlowupError(DamSPHError):
    """Non-finite state detected during a step."""

    exit_code = 4

    def __init__(self, message, particle=None, step=None):
        super().__init__(message)
        self.message = message
        self.particle = particle
        self.step = step

    def __str__(self):
        where = []
        if self.particle is not None:
            where.append(f"particle {self.particle}")
        if self.step is not None:
            where.append(f"step {self.step}")
        return self.message + (f" ({', '.join(where)})" if where else "")


class PreloadError(NumericalBlowupError):
    """Gravity relaxation did not converge."""
