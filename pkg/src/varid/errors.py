"""Exception hierarchy for the varid package.

Every failure mode that callers are expected to branch on gets its own
class; generic argument validation raises plain ``ValueError``.
"""


class VaridError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(VaridError):
    """A configuration document is malformed or inconsistent."""


class IngestionError(VaridError):
    """A measured-data file does not match the expected layout or grid."""


class SolverError(VaridError):
    """Base class for failures inside the implicit time stepper."""


class NewtonConvergenceError(SolverError):
    """The Newton iteration did not reach tolerance within its budget."""

    def __init__(self, iterations, residual, step_index=None):
        self.iterations = iterations
        self.residual = residual
        self.step_index = step_index
        where = "" if step_index is None else f" at step {step_index}"
        super().__init__(
            f"Newton solve{where} failed to converge: residual {residual:.3e} "
            f"after {iterations} iterations"
        )


class SingularKKTError(SolverError):
    """The stepping system's Newton matrix is singular or nearly so.

    ``kind`` distinguishes the two diagnosable causes: ``"mass-matrix"``
    (the second-slot derivative block of the stepping residual lost rank,
    typically a degenerate kinetic energy) and ``"constraint-rank"`` (the
    constraint Jacobian rows are linearly dependent).  ``"unknown"`` covers
    everything else.
    """

    def __init__(self, kind, rcond, step_index=None):
        self.kind = kind
        self.rcond = rcond
        self.step_index = step_index
        where = "" if step_index is None else f" at step {step_index}"
        super().__init__(
            f"singular stepping matrix{where} ({kind}), rcond={rcond:.3e}"
        )


class InfeasibleStartError(SolverError):
    """A configuration could not be brought onto the constraint manifold."""
