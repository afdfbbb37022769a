"""Exception hierarchy shared by all solver layers."""


class DispersionLabError(Exception):
    """Base class for every error raised by this package."""


class GeometryError(DispersionLabError):
    """Infeasible cell geometry (obstacle touching the cell boundary, bad h)."""


class TopologyError(DispersionLabError):
    """Boundary loop is open, duplicated, or does not match the bulk trace."""


class MeshError(DispersionLabError):
    """Degenerate mesh entity (zero-length segment, inverted triangle)."""


class CoefficientError(DispersionLabError):
    """Coefficient violates coercivity or positivity requirements."""


class CompatibilityError(DispersionLabError):
    """Singular system whose right-hand side is not orthogonal to the kernel."""


class SolverError(DispersionLabError):
    """Linear or nonlinear solve failed to reach the requested tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DriftMismatchError(DispersionLabError):
    """Bulk and surface drifts disagree, so the equal-drift assumption fails."""


class DegenerateCouplingError(DispersionLabError):
    """f'(u0) is too small for the coupled cell system; use the u0 -> inf limit."""


class InputError(DispersionLabError):
    """Inconsistent inputs to a post-processing routine."""


class CoercivityError(DispersionLabError):
    """Assembled tensor violates the lower bound |Y0| * lambda_min(D)."""


class ConfigError(DispersionLabError):
    """Run configuration does not match the expected schema."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
