"""Numerical laboratory for constrained Helfrich flows on cylinders."""

__version__ = "0.1.0"

from . import linstab
from . import amplitude
from . import surface
from . import solver
from . import continuation
