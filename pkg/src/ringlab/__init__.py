"""Tree-ring watermark laboratory on analytically tractable generative models."""

from ringlab.errors import (
    InvalidArgument,
    InvalidState,
    NumericalDivergence,
    RinglabError,
    SingularityError,
    UnsupportedSize,
)
from ringlab.backend import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "InvalidArgument",
    "InvalidState",
    "NumericalDivergence",
    "RinglabError",
    "SingularityError",
    "UnsupportedSize",
]
