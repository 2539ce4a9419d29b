"""Exception hierarchy shared by every mindisp module."""

import numpy as np


class MinDispError(Exception):
    """Base class for all errors raised by mindisp."""


class IntegrationBlowupError(MinDispError, ArithmeticError):
    """Euler-Maruyama produced a non-finite state."""

    def __init__(self, time: float, state):
        self.time = float(time)
        self.state = np.asarray(state, dtype=float)
        super().__init__(f"non-finite state after step at t={self.time:.6g}: {self.state.tolist()}")


class GridError(MinDispError, ValueError):
    """Malformed time grid, or a time that is not a substep boundary."""


class ControlSpaceError(MinDispError, ValueError):
    """Invalid control space, or a control outside it."""


class UnsupportedControlStructureError(MinDispError, TypeError):
    """The closed-form minimizer needs a drift affine in the control."""


class ConfigError(MinDispError, ValueError):
    """Invalid or unreadable experiment file."""


class DescentAborted(MinDispError):
    """A failure inside the descent loop; `report` holds the trace so far."""

    def __init__(self, report, cause: BaseException):
        self.report = report
        self.cause = cause
        super().__init__(f"descent aborted after {len(report.iterations)} evaluated iterate(s): {cause}")
