class ConfigError(ValueError):
    """Invalid experiment configuration. Carries every problem found."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class InfeasibleError(ValueError):
    """A constraint set is empty for the requested parameters."""


class SolverError(RuntimeError):
    """An optimizer failed: non-finite objective or no convergence."""
