"""Effective dispersion of reactive solutes in periodic porous cells.

Cell problems on a perforated periodic unit cell give the dispersion tensor
A*(u0); a finite-volume solver integrates the resulting nonlinear macroscopic
equation.
"""

__version__ = "0.1.0"

from .errors import DispersionLabError  # noqa: F401
