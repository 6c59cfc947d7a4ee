"""Exception types shared across modules."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class NumericalError(RuntimeError):
    """A numerical routine failed to reach its contract."""

    def __init__(self, msg, **diagnostics):
        super().__init__(msg)
        self.diagnostics = diagnostics


class BracketError(NumericalError):
    pass


class ToleranceError(NumericalError):
    pass


class StepUnderflowError(NumericalError):
    pass


class SamplingError(NumericalError):
    pass


def raise_for_status(status, what, **diag):
    if status == 0:
        return
    if status == 1:
        raise ToleranceError(f"{what}: tolerance not met", **diag)
    if status == 2:
        raise BracketError(f"{what}: root bracketing failed", **diag)
    if status == 3:
        raise StepUnderflowError(f"{what}: step size underflow", **diag)
    if status == 4:
        raise NumericalError(f"{what}: step budget exhausted", **diag)
    raise NumericalError(f"{what}: status {status}", **diag)
