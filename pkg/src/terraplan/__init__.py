"""Hybrid driving-stepping locomotion planning toolkit.

A 7-dimensional lattice planner (base pose plus four longitudinal foot
offsets) over gridded height maps, together with a coarse 3D abstraction
whose cost function is a small convolutional network trained on
procedurally generated terrain. The learned abstraction is turned into a
cost-to-goal heuristic field that accelerates weighted A* in the detailed
space.
"""

from terraplan.errors import (
    DivergenceDetected,
    FormatError,
    OutOfBoundsError,
    ShapeMismatchError,
    SpecError,
)

__version__ = "0.1.0"

__all__ = [
    "DivergenceDetected",
    "FormatError",
    "OutOfBoundsError",
    "ShapeMismatchError",
    "SpecError",
    "__version__",
]
