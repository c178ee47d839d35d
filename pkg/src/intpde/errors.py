"""Exception hierarchy shared across the package."""


class IntPdeError(Exception):
    """Base class for all package errors."""


class TrainingDivergedError(IntPdeError):
    def __init__(self, step, loss):
        super().__init__(f"training diverged at step {step} (loss={loss!r})")
        self.step = step
        self.loss = loss


class UnsupportedOrderError(IntPdeError, ValueError):
    pass


class ExtrapolationError(IntPdeError, ValueError):
    pass


class AssemblyError(IntPdeError):
    def __init__(self, k, j, term):
        super().__init__(f"non-finite design entry at interval {k}, time {j}, term {term}")
        self.k, self.j, self.term = k, j, term


class DegenerateSystemError(IntPdeError):
    pass


class DegeneratePopulationError(IntPdeError):
    pass


class HeteroSolveError(IntPdeError):
    pass


class InstabilityError(IntPdeError):
    pass


class CflError(IntPdeError, ValueError):
    def __init__(self, dt, dt_max):
        super().__init__(f"time step {dt:g} violates the stability limit; use dt <= {dt_max:g}")
        self.dt = dt
        self.suggested_dt = dt_max


class UnsupportedStructureError(IntPdeError, ValueError):
    pass


class RootSearchError(IntPdeError):
    pass


class ConfigError(IntPdeError, ValueError):
    pass
