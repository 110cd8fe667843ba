"""Numerical laboratory for CGO solutions and log-type stability of the magnetic Schrodinger inverse problem."""
from .grid import Field, Grid, make_grid

__all__ = ["Field", "Grid", "make_grid"]
__version__ = "0.1.0"
