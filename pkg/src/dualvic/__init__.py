"""dualvic: dual-arm variable impedance control with learned stiffness scheduling."""

__version__ = "0.1.0"

from ._native import available_backends, backend_name
from .geometry import Pose, Twist, Wrench

__all__ = ["Pose", "Twist", "Wrench", "available_backends", "backend_name", "__version__"]
