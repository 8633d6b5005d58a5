"""Exception hierarchy shared by all nfpe modules.

CLI exit codes map onto the three error families:
config errors -> 2, solver failures -> 3, invariant violations -> 4.
"""

from __future__ import annotations


class NfpeError(Exception):
    """Base class for all package errors."""


class ConfigError(NfpeError):
    """Malformed or inconsistent configuration input."""


class SolverError(NfpeError):
    """Numerical solver failure."""


class MaxItersExceeded(SolverError):
    def __init__(self, message: str, best_residual: float):
        super().__init__(f"{message} (best residual {best_residual:.3e})")
        self.best_residual = best_residual


class NonFiniteIterate(SolverError):
    def __init__(self, message: str, cell_index: tuple[int, ...] | int):
        super().__init__(f"{message} (first offending cell {cell_index})")
        self.cell_index = cell_index


class ContinuationStalled(SolverError):
    def __init__(self, message: str, gaps: list[float]):
        super().__init__(f"{message} (last gaps {['%.3e' % g for g in gaps]})")
        self.gaps = gaps


class HelmholtzError(SolverError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


class ParticleEscaped(SolverError):
    def __init__(self, particle_index: int, t: float):
        super().__init__(
            f"particle {particle_index} left the domain at t={t:.6g} "
            "with boundary reflection disabled"
        )
        self.particle_index = particle_index
        self.t = t


class GridMismatch(NfpeError):
    """Operands live on different grids or time stamps."""


class InvariantViolation(NfpeError):
    """A structural invariant monitor failed."""
